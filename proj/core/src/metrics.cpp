#include "crackseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "crackseg/errors.hpp"

namespace crackseg {

std::string to_string(ApVariant variant) { return variant == ApVariant::box ? "box" : "mask"; }

namespace {

constexpr double kSmallMax = 32.0 * 32.0;
constexpr double kMediumMax = 96.0 * 96.0;

enum class Band { all, small, medium, large };

bool in_band(double area, Band band) {
  switch (band) {
    case Band::all: return true;
    case Band::small: return area < kSmallMax;
    case Band::medium: return area >= kSmallMax && area <= kMediumMax;
    case Band::large: return area > kMediumMax;
  }
  return true;
}

double gt_area(const EvalGroundTruth& gt, ApVariant variant) {
  if (variant == ApVariant::box) return gt.box.area();
  return static_cast<double>(gt.mask.count());
}

double pair_iou(const EvalDetection& det, const EvalGroundTruth& gt, ApVariant variant) {
  if (variant == ApVariant::box) return box_iou(det.box, gt.box);
  if (det.mask.count() == 0 && gt.mask.count() == 0) return 0.0;
  if (det.mask.count() == 0 || gt.mask.count() == 0) return 0.0;
  return mask_iou(det.mask, gt.mask);
}

struct FlatDetection {
  double score;
  size_t image;
  size_t index;
};

// One detection's fate under a fixed threshold and band.
enum class Outcome { tp, fp, ignored };

// Greedy matcher for one image: detections in descending score order each
// claim the unmatched ground truth with the highest IoU above the threshold.
// In-band ground truths are preferred; a detection whose only match is out of
// band is ignored rather than counted as a false positive.
std::vector<Outcome> match_image(const std::vector<EvalDetection>& dets,
                                 const std::vector<EvalGroundTruth>& gts, ApVariant variant,
                                 double iou_threshold, Band band,
                                 const std::vector<size_t>& det_order) {
  std::vector<bool> gt_used(gts.size(), false);
  std::vector<Outcome> outcome(dets.size(), Outcome::fp);
  for (size_t oi = 0; oi < det_order.size(); ++oi) {
    const size_t d = det_order[oi];
    int64_t best_gt = -1;
    double best_iou = 0.0;
    bool best_in_band = false;
    for (size_t j = 0; j < gts.size(); ++j) {
      if (gt_used[j]) continue;
      const double iou = pair_iou(dets[d], gts[j], variant);
      if (iou < iou_threshold) continue;
      const bool band_ok = in_band(gt_area(gts[j], variant), band);
      // An in-band match always beats an out-of-band one; within the same
      // class the higher IoU wins, first gt on ties.
      if (best_gt >= 0) {
        if (best_in_band && !band_ok) continue;
        if (best_in_band == band_ok && iou <= best_iou) continue;
      }
      best_gt = static_cast<int64_t>(j);
      best_iou = iou;
      best_in_band = band_ok;
    }
    if (best_gt < 0) {
      outcome[d] = Outcome::fp;
    } else {
      gt_used[best_gt] = true;
      outcome[d] = best_in_band ? Outcome::tp : Outcome::ignored;
    }
  }
  return outcome;
}

// Average precision (in [0, 1]) for one IoU threshold and one size band, or
// absent when the band holds no ground truth.
std::optional<double> ap_single(const std::vector<std::vector<EvalDetection>>& detections,
                                const std::vector<std::vector<EvalGroundTruth>>& ground_truth,
                                ApVariant variant, double iou_threshold, Band band,
                                const std::vector<FlatDetection>& flat,
                                const std::vector<std::vector<size_t>>& per_image_order) {
  int64_t npos = 0;
  for (const auto& gts : ground_truth)
    for (const auto& gt : gts)
      if (in_band(gt_area(gt, variant), band)) ++npos;
  if (npos == 0) return std::nullopt;

  std::vector<std::vector<Outcome>> outcomes(ground_truth.size());
  for (size_t i = 0; i < ground_truth.size(); ++i)
    outcomes[i] = match_image(detections[i], ground_truth[i], variant, iou_threshold, band,
                              per_image_order[i]);

  // Walk all detections in global score order, accumulating precision/recall.
  std::vector<double> precisions, recalls;
  int64_t tp = 0, fp = 0;
  for (const auto& fd : flat) {
    const Outcome o = outcomes[fd.image][fd.index];
    if (o == Outcome::ignored) continue;
    if (o == Outcome::tp)
      ++tp;
    else
      ++fp;
    precisions.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recalls.push_back(static_cast<double>(tp) / static_cast<double>(npos));
  }

  // Precision envelope: best precision at recall >= r.
  for (int64_t i = static_cast<int64_t>(precisions.size()) - 2; i >= 0; --i)
    precisions[i] = std::max(precisions[i], precisions[i + 1]);

  double total = 0.0;
  size_t cursor = 0;
  for (int r = 0; r <= 100; ++r) {
    const double want = static_cast<double>(r) / 100.0;
    while (cursor < recalls.size() && recalls[cursor] < want - 1e-12) ++cursor;
    if (cursor < recalls.size()) total += precisions[cursor];
  }
  return total / 101.0;
}

}  // namespace

ApReport coco_ap(const std::vector<std::vector<EvalDetection>>& detections,
                 const std::vector<std::vector<EvalGroundTruth>>& ground_truth,
                 ApVariant variant) {
  if (detections.size() != ground_truth.size())
    throw std::invalid_argument("coco_ap: detections and ground truth image counts differ");
  int64_t total_gts = 0;
  for (const auto& gts : ground_truth) total_gts += static_cast<int64_t>(gts.size());
  if (total_gts == 0) throw ValidationError("coco_ap: no ground truth instances");

  // Global score ordering: score descending, then image index, then the
  // detection's position within its image.
  std::vector<FlatDetection> flat;
  for (size_t i = 0; i < detections.size(); ++i)
    for (size_t d = 0; d < detections[i].size(); ++d)
      flat.push_back({detections[i][d].score, i, d});
  std::sort(flat.begin(), flat.end(), [](const FlatDetection& a, const FlatDetection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.index < b.index;
  });

  // Per-image matching order, consistent with the global ordering.
  std::vector<std::vector<size_t>> per_image_order(detections.size());
  for (const auto& fd : flat) per_image_order[fd.image].push_back(fd.index);

  auto at = [&](double threshold, Band band) {
    return ap_single(detections, ground_truth, variant, threshold, band, flat, per_image_order);
  };
  auto averaged = [&](Band band) -> std::optional<double> {
    double total = 0.0;
    for (int t = 0; t < 10; ++t) {
      const auto v = at(0.50 + 0.05 * t, band);
      if (!v) return std::nullopt;
      total += *v;
    }
    return total / 10.0;
  };

  ApReport report;
  report.variant = variant;
  report.ap = 100.0 * averaged(Band::all).value();
  report.ap50 = 100.0 * at(0.50, Band::all).value();
  report.ap75 = 100.0 * at(0.75, Band::all).value();
  const std::pair<Band, std::optional<double>*> bands[] = {
      {Band::small, &report.ap_s}, {Band::medium, &report.ap_m}, {Band::large, &report.ap_l}};
  for (const auto& [band, slot] : bands) {
    const auto v = averaged(band);
    if (v) *slot = 100.0 * *v;
  }
  return report;
}

bool image_has_detection(const std::vector<double>& scores, double score_threshold) {
  for (double s : scores)
    if (s >= score_threshold) return true;
  return false;
}

ConfusionCounts confusion(const std::map<int64_t, std::vector<double>>& scores_per_image,
                          const std::map<int64_t, bool>& has_crack_label,
                          double score_threshold) {
  if (scores_per_image.size() != has_crack_label.size())
    throw ValidationError("confusion: predictions and labels cover different image sets");
  ConfusionCounts c;
  for (const auto& [id, scores] : scores_per_image) {
    auto it = has_crack_label.find(id);
    if (it == has_crack_label.end())
      throw ValidationError("confusion: no label for image " + std::to_string(id));
    const bool predicted = image_has_detection(scores, score_threshold);
    const bool actual = it->second;
    if (actual && predicted) ++c.tp;
    if (actual && !predicted) ++c.fn;
    if (!actual && predicted) ++c.fp;
    if (!actual && !predicted) ++c.tn;
  }
  return c;
}

PrfAccuracy prf_accuracy(const ConfusionCounts& counts) {
  if (counts.total() <= 0) throw ValidationError("prf_accuracy: no evaluated images");
  PrfAccuracy out;
  if (counts.tp + counts.fn > 0)
    out.recall = static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fn);
  if (counts.tp + counts.fp > 0)
    out.precision = static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fp);
  out.accuracy =
      static_cast<double>(counts.tp + counts.tn) / static_cast<double>(counts.total());
  return out;
}

}  // namespace crackseg
