#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crackseg/geometry.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

enum class ApVariant { box, mask };

std::string to_string(ApVariant variant);

// All values are percentages in [0, 100]. Size-band entries are absent when
// the evaluated ground truth has no instance in that band.
struct ApReport {
  ApVariant variant = ApVariant::box;
  double ap = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  std::optional<double> ap_s;
  std::optional<double> ap_m;
  std::optional<double> ap_l;
};

struct EvalDetection {
  Box box;
  double score = 0.0;
  Mask mask;

  EvalDetection() : mask(1, 1) {}
  EvalDetection(Box b, double s, Mask m) : box(b), score(s), mask(std::move(m)) {}
};

struct EvalGroundTruth {
  Box box;
  Mask mask;

  EvalGroundTruth() : mask(1, 1) {}
  EvalGroundTruth(Box b, Mask m) : box(b), mask(std::move(m)) {}
};

// COCO-style average precision: greedy per-image matching in descending
// score order at IoU thresholds {0.50, 0.55, ..., 0.95}, 101-point
// interpolated precision, size bands by ground-truth area (box area for the
// box variant, mask pixel count for the mask variant).
ApReport coco_ap(const std::vector<std::vector<EvalDetection>>& detections,
                 const std::vector<std::vector<EvalGroundTruth>>& ground_truth,
                 ApVariant variant);

struct ConfusionCounts {
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t fn = 0;
  int64_t tn = 0;

  int64_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct PrfAccuracy {
  std::optional<double> recall;
  std::optional<double> precision;
  double accuracy = 0.0;
};

// An image counts as detected when any score reaches the threshold.
bool image_has_detection(const std::vector<double>& scores, double score_threshold);

// Image-level confusion: tp are crack-labeled images with a detection, tn are
// crack-free images without one. Both maps must cover the same image ids.
ConfusionCounts confusion(const std::map<int64_t, std::vector<double>>& scores_per_image,
                          const std::map<int64_t, bool>& has_crack_label, double score_threshold);

// Recall = tp/(tp+fn), precision = tp/(tp+fp), accuracy over all four counts.
// Recall and precision are absent when their denominator is zero.
PrfAccuracy prf_accuracy(const ConfusionCounts& counts);

}  // namespace crackseg
