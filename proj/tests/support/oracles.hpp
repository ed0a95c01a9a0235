#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "crackseg/geometry.hpp"
#include "crackseg/metrics.hpp"
#include "crackseg/tensor.hpp"

// Reference implementations written independently of the library code paths
// they check. Each one favors the most literal formulation available, however
// slow, so a disagreement points at the production code.
namespace crackseg::testing {

// Averages a dense grid x grid lattice of bilinear samples per output bin.
// The roi is in feature coordinates, like nn::Graph::roi_align.
Tensor dense_roi_align(const Tensor& feature, const Box& roi, int output_size, int grid = 100);

// IoU by counting rasterization cells over the joint bounding window.
double grid_box_iou(const Box& a, const Box& b, int cells = 1000);

// Tight bounds by scanning every pixel.
Box scan_tight_bbox(const Mask& mask);

// Intersection and union by per-pixel counting.
double count_mask_iou(const Mask& a, const Mask& b);

// Per-proposal best IoU and the index of the ground truth achieving it,
// computed with a plain all-pairs double loop.
struct BestMatch {
  double iou = 0.0;
  int64_t gt = -1;
};
std::vector<BestMatch> all_pairs_best_iou(const std::vector<Box>& proposals,
                                          const std::vector<Box>& gt_boxes);

// Naive AP evaluator: replays the greedy matching definition per threshold
// and band with no shared state, and interpolates precision by a literal
// max-over-suffix scan at each of the 101 recall points.
ApReport naive_coco_ap(const std::vector<std::vector<EvalDetection>>& detections,
                       const std::vector<std::vector<EvalGroundTruth>>& ground_truth,
                       ApVariant variant);

// Central difference of a scalar function around the current value of *slot.
// The callable must re-evaluate from scratch on every invocation.
double numeric_gradient(const std::function<double()>& value, double* slot, double step = 1e-5);

// |a - b| over max(|a|, |b|, floor), the form every gradient check uses.
double relative_error(double a, double b, double floor = 1e-6);

}  // namespace crackseg::testing
