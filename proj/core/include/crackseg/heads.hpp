#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "crackseg/geometry.hpp"
#include "crackseg/rng.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

struct Anchor {
  Box box;
  int level = 0;
};

struct Proposal {
  Box box;
  double objectness = 0.0;
};

struct Detection {
  Box box;
  double score = 0.0;
  Mask mask;        // pasted into image coordinates
  Tensor raw_mask;  // probability grid in RoI coordinates

  Detection() : mask(1, 1) {}
};

// One anchor set per feature cell per level, centered on cell centers.
// Scales are edge lengths in input pixels; for ratio r the anchor measures
// s*sqrt(r) by s/sqrt(r), preserving area s^2.
std::vector<Anchor> generate_anchors(const std::vector<std::pair<int64_t, int64_t>>& level_shapes,
                                     const std::vector<int>& strides,
                                     const std::vector<double>& scales,
                                     const std::vector<double>& ratios);

// Standard box regression parameterization: center offsets scaled by anchor
// size, log-scale width and height.
std::array<double, 4> encode_deltas(const Box& anchor, const Box& target);
Box decode_deltas(const Box& anchor, double dx, double dy, double dw, double dh);

struct MatchConfig {
  double pos_iou = 0.5;
  double neg_iou = 0.5;
  int batch = 64;
  double pos_fraction = 0.25;
};

struct LabeledRoi {
  Box box;
  int64_t gt_index = -1;  // valid when positive
  bool positive = false;
};

// Labels each proposal by its best IoU against the ground truth, then samples
// a fixed-size training batch with at most pos_fraction positives.
std::vector<LabeledRoi> match_and_sample(const std::vector<Box>& proposals,
                                         const std::vector<Box>& gt_boxes, const MatchConfig& cfg,
                                         Rng& rng);

struct AnchorTargetConfig {
  double pos_iou = 0.7;
  double neg_iou = 0.3;
  int batch = 256;
  double pos_fraction = 0.5;
};

struct AnchorTargets {
  // Parallel to the anchor list: 1 positive, 0 negative, -1 not sampled.
  std::vector<int> labels;
  // Regression target for each positive anchor, zero elsewhere.
  std::vector<std::array<double, 4>> deltas;
};

// Assigns objectness labels to anchors against the ground truth. The best
// anchor for every gt box is forced positive so no instance goes unclaimed,
// then the batch is sampled as in match_and_sample.
AnchorTargets assign_anchor_targets(const std::vector<Anchor>& anchors,
                                    const std::vector<Box>& gt_boxes,
                                    const AnchorTargetConfig& cfg, Rng& rng);

// 0.5*x^2 inside |x| < 1 and |x| - 0.5 outside.
double smooth_l1(double x);

// Mean per-pixel binary cross-entropy between a probability grid and a
// binary target grid of the same shape.
double mask_loss(const Tensor& pred, const Tensor& target);

// Bilinearly resamples the gt mask restricted to the roi onto a grid x grid
// target, thresholded at 0.5.
Tensor mask_target(const Mask& gt_mask, const Box& roi, int grid);

// Binarizes the raw probability grid at mask_threshold and pastes it into an
// image-sized mask inside the detection box.
Mask paste_mask(const Tensor& raw_mask, const Box& box, int64_t image_height, int64_t image_width,
                double mask_threshold);

}  // namespace crackseg
