#pragma once

#include <cstdint>
#include <vector>

#include "crackseg/dataset.hpp"
#include "crackseg/geometry.hpp"
#include "crackseg/rng.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

// One training example: image in channel-major (3,H,W) layout plus per
// instance masks and boxes. Masks and boxes are parallel arrays.
struct Sample {
  Tensor image;
  std::vector<Mask> masks;
  std::vector<Box> boxes;
  SceneLevel scene_level = SceneLevel::unknown;
  // Set when a transform dropped every instance; the caller decides whether
  // to resample or train on the background-only image.
  bool flagged_empty = false;
};

enum class AugmentKind { hflip, vflip, rotate90, random_crop };

struct AugmentOp {
  AugmentKind kind = AugmentKind::hflip;
  double p = 0.0;
  double min_fraction = 1.0;
};

struct AugmentPolicy {
  std::vector<AugmentOp> ops;
};

// Applies each op in order with its own probability draw. Image, masks and
// boxes are transformed together; instances whose mask becomes empty are
// dropped.
Sample apply(const AugmentPolicy& policy, const Sample& sample, Rng& draw);

// Single transforms, applied unconditionally. Exposed for direct testing.
Sample hflip(const Sample& sample);
Sample vflip(const Sample& sample);
Sample rotate90(const Sample& sample);
Sample crop(const Sample& sample, int64_t x0, int64_t y0, int64_t w, int64_t h);

}  // namespace crackseg
