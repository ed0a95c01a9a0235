#include "crackseg/rle.hpp"

#include <stdexcept>

namespace crackseg {

Rle rle_encode(const Mask& mask) {
  Rle rle;
  rle.height = mask.height();
  rle.width = mask.width();
  const int64_t n = rle.height * rle.width;
  const uint8_t* p = mask.raw().data();
  uint8_t current = 0;
  int64_t run = 0;
  for (int64_t i = 0; i < n; ++i) {
    const uint8_t v = p[i] ? 1 : 0;
    if (v == current) {
      ++run;
    } else {
      rle.counts.push_back(run);
      current = v;
      run = 1;
    }
  }
  rle.counts.push_back(run);
  return rle;
}

Mask rle_decode(const Rle& rle) {
  if (rle.height <= 0 || rle.width <= 0)
    throw std::invalid_argument("rle_decode: non-positive dimensions");
  Mask mask(rle.height, rle.width);
  const int64_t n = rle.height * rle.width;
  int64_t pos = 0;
  uint8_t current = 0;
  for (int64_t count : rle.counts) {
    if (count < 0) throw std::invalid_argument("rle_decode: negative run length");
    if (pos + count > n) throw std::invalid_argument("rle_decode: runs exceed mask size");
    if (current)
      for (int64_t i = 0; i < count; ++i) mask.raw()[pos + i] = 1;
    pos += count;
    current = current ? 0 : 1;
  }
  if (pos != n) throw std::invalid_argument("rle_decode: runs do not cover mask");
  return mask;
}

}  // namespace crackseg
