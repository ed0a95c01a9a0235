#pragma once

#include <cstdint>
#include <vector>

#include "crackseg/tensor.hpp"

namespace crackseg {

// Row-major run-length encoding of a binary mask. Counts alternate between
// runs of zeros and runs of ones, always beginning with a zero run, so the
// first count is zero when the mask starts with a one.
struct Rle {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<int64_t> counts;
};

Rle rle_encode(const Mask& mask);
Mask rle_decode(const Rle& rle);

}  // namespace crackseg
