#include "crackseg/heads.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace crackseg {

namespace {

// Largest decodable log-scale delta; keeps exp() from overflowing on
// untrained predictions.
constexpr double kMaxLogScale = 4.0;

void sample_balanced(std::vector<int64_t>& positives, std::vector<int64_t>& negatives, int batch,
                     double pos_fraction, Rng& rng) {
  const int64_t want_pos =
      std::min<int64_t>(static_cast<int64_t>(positives.size()),
                        static_cast<int64_t>(batch * pos_fraction));
  const int64_t want_neg =
      std::min<int64_t>(static_cast<int64_t>(negatives.size()), batch - want_pos);
  rng.shuffle(positives);
  rng.shuffle(negatives);
  positives.resize(want_pos);
  negatives.resize(want_neg);
  std::sort(positives.begin(), positives.end());
  std::sort(negatives.begin(), negatives.end());
}

}  // namespace

std::vector<Anchor> generate_anchors(const std::vector<std::pair<int64_t, int64_t>>& level_shapes,
                                     const std::vector<int>& strides,
                                     const std::vector<double>& scales,
                                     const std::vector<double>& ratios) {
  if (level_shapes.size() != strides.size())
    throw std::invalid_argument("generate_anchors: shapes and strides length mismatch");
  if (scales.empty() || ratios.empty())
    throw std::invalid_argument("generate_anchors: scales and ratios must be nonempty");
  std::vector<Anchor> anchors;
  for (size_t level = 0; level < level_shapes.size(); ++level) {
    const auto [h, w] = level_shapes[level];
    const double stride = strides[level];
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const double cx = (static_cast<double>(x) + 0.5) * stride;
        const double cy = (static_cast<double>(y) + 0.5) * stride;
        for (double s : scales)
          for (double r : ratios) {
            const double aw = s * std::sqrt(r);
            const double ah = s / std::sqrt(r);
            anchors.push_back(
                {Box{cx - aw / 2, cy - ah / 2, cx + aw / 2, cy + ah / 2},
                 static_cast<int>(level)});
          }
      }
  }
  return anchors;
}

std::array<double, 4> encode_deltas(const Box& anchor, const Box& target) {
  const double aw = anchor.width(), ah = anchor.height();
  if (aw <= 0 || ah <= 0) throw std::invalid_argument("encode_deltas: degenerate anchor");
  if (target.width() <= 0 || target.height() <= 0)
    throw std::invalid_argument("encode_deltas: degenerate target");
  return {(target.cx() - anchor.cx()) / aw, (target.cy() - anchor.cy()) / ah,
          std::log(target.width() / aw), std::log(target.height() / ah)};
}

Box decode_deltas(const Box& anchor, double dx, double dy, double dw, double dh) {
  const double aw = anchor.width(), ah = anchor.height();
  if (aw <= 0 || ah <= 0) throw std::invalid_argument("decode_deltas: degenerate anchor");
  const double cx = anchor.cx() + dx * aw;
  const double cy = anchor.cy() + dy * ah;
  const double w = aw * std::exp(std::min(dw, kMaxLogScale));
  const double h = ah * std::exp(std::min(dh, kMaxLogScale));
  return Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

std::vector<LabeledRoi> match_and_sample(const std::vector<Box>& proposals,
                                         const std::vector<Box>& gt_boxes, const MatchConfig& cfg,
                                         Rng& rng) {
  if (!(cfg.neg_iou >= 0 && cfg.neg_iou <= cfg.pos_iou && cfg.pos_iou <= 1))
    throw std::invalid_argument("match_and_sample: need 0 <= neg_iou <= pos_iou <= 1");
  std::vector<int64_t> positives, negatives;
  std::vector<int64_t> best_gt(proposals.size(), -1);
  for (size_t i = 0; i < proposals.size(); ++i) {
    double best = 0.0;
    for (size_t j = 0; j < gt_boxes.size(); ++j) {
      const double iou = box_iou(proposals[i], gt_boxes[j]);
      if (iou > best) {
        best = iou;
        best_gt[i] = static_cast<int64_t>(j);
      }
    }
    if (!gt_boxes.empty() && best >= cfg.pos_iou)
      positives.push_back(static_cast<int64_t>(i));
    else if (best < cfg.neg_iou)
      negatives.push_back(static_cast<int64_t>(i));
  }
  sample_balanced(positives, negatives, cfg.batch, cfg.pos_fraction, rng);

  std::vector<LabeledRoi> out;
  out.reserve(positives.size() + negatives.size());
  for (int64_t i : positives) out.push_back({proposals[i], best_gt[i], true});
  for (int64_t i : negatives) out.push_back({proposals[i], -1, false});
  return out;
}

AnchorTargets assign_anchor_targets(const std::vector<Anchor>& anchors,
                                    const std::vector<Box>& gt_boxes,
                                    const AnchorTargetConfig& cfg, Rng& rng) {
  const size_t n = anchors.size();
  std::vector<double> best_iou(n, 0.0);
  std::vector<int64_t> best_gt(n, -1);
  std::vector<int64_t> best_anchor_for_gt(gt_boxes.size(), -1);
  std::vector<double> best_iou_for_gt(gt_boxes.size(), -1.0);

  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < gt_boxes.size(); ++j) {
      const double iou = box_iou(anchors[i].box, gt_boxes[j]);
      if (iou > best_iou[i]) {
        best_iou[i] = iou;
        best_gt[i] = static_cast<int64_t>(j);
      }
      if (iou > best_iou_for_gt[j]) {
        best_iou_for_gt[j] = iou;
        best_anchor_for_gt[j] = static_cast<int64_t>(i);
      }
    }
  }

  std::vector<int> raw_label(n, -1);
  for (size_t i = 0; i < n; ++i) {
    if (gt_boxes.empty() || best_iou[i] < cfg.neg_iou) raw_label[i] = 0;
    if (!gt_boxes.empty() && best_iou[i] >= cfg.pos_iou) raw_label[i] = 1;
  }
  for (size_t j = 0; j < gt_boxes.size(); ++j) {
    const int64_t i = best_anchor_for_gt[j];
    if (i < 0) continue;
    raw_label[i] = 1;
    if (best_gt[i] < 0) best_gt[i] = static_cast<int64_t>(j);
  }

  std::vector<int64_t> positives, negatives;
  for (size_t i = 0; i < n; ++i) {
    if (raw_label[i] == 1) positives.push_back(static_cast<int64_t>(i));
    if (raw_label[i] == 0) negatives.push_back(static_cast<int64_t>(i));
  }
  sample_balanced(positives, negatives, cfg.batch, cfg.pos_fraction, rng);

  AnchorTargets targets;
  targets.labels.assign(n, -1);
  targets.deltas.assign(n, {0, 0, 0, 0});
  for (int64_t i : positives) {
    targets.labels[i] = 1;
    targets.deltas[i] = encode_deltas(anchors[i].box, gt_boxes[best_gt[i]]);
  }
  for (int64_t i : negatives) targets.labels[i] = 0;
  return targets;
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double mask_loss(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target)) throw std::invalid_argument("mask_loss: shape mismatch");
  const int64_t n = pred.numel();
  if (n == 0) throw std::invalid_argument("mask_loss: empty grids");
  double loss = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double t = target[i];
    if (t != 0.0 && t != 1.0) throw std::invalid_argument("mask_loss: target not binary");
    const double p = pred[i];
    if (!(p > 0.0 && p < 1.0))
      throw std::invalid_argument("mask_loss: prediction outside (0, 1)");
    loss += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
  }
  return loss / static_cast<double>(n);
}

Tensor mask_target(const Mask& gt_mask, const Box& roi, int grid) {
  if (roi.degenerate()) throw std::invalid_argument("mask_target: degenerate roi");
  const int64_t h = gt_mask.height(), w = gt_mask.width();
  Tensor out({grid, grid});
  const double bw = roi.width() / grid, bh = roi.height() / grid;
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx) {
      // Sample the gt mask at the cell center, nearest pixel.
      const double x = roi.x1 + (gx + 0.5) * bw;
      const double y = roi.y1 + (gy + 0.5) * bh;
      const int64_t c = std::clamp<int64_t>(static_cast<int64_t>(std::floor(x)), 0, w - 1);
      const int64_t r = std::clamp<int64_t>(static_cast<int64_t>(std::floor(y)), 0, h - 1);
      out.at2(gy, gx) = gt_mask.at(r, c) ? 1.0 : 0.0;
    }
  return out;
}

Mask paste_mask(const Tensor& raw_mask, const Box& box, int64_t image_height, int64_t image_width,
                double mask_threshold) {
  if (raw_mask.dim() != 2 || raw_mask.size(0) != raw_mask.size(1))
    throw std::invalid_argument("paste_mask: raw mask must be square");
  const int64_t m = raw_mask.size(0);
  Mask out(image_height, image_width);
  const Box b = clip_box(box, static_cast<double>(image_width),
                         static_cast<double>(image_height));
  if (b.width() <= 0 || b.height() <= 0) return out;

  const int64_t c0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(b.x1)));
  const int64_t r0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(b.y1)));
  const int64_t c1 = std::min<int64_t>(image_width, static_cast<int64_t>(std::ceil(b.x2)));
  const int64_t r1 = std::min<int64_t>(image_height, static_cast<int64_t>(std::ceil(b.y2)));

  for (int64_t r = r0; r < r1; ++r) {
    const double py = r + 0.5;
    if (py < b.y1 || py >= b.y2) continue;
    for (int64_t c = c0; c < c1; ++c) {
      const double px = c + 0.5;
      if (px < b.x1 || px >= b.x2) continue;
      // Map the pixel center into grid coordinates and sample bilinearly
      // with border clamp.
      const double gx = (px - box.x1) / box.width() * static_cast<double>(m) - 0.5;
      const double gy = (py - box.y1) / box.height() * static_cast<double>(m) - 0.5;
      const int64_t x0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(gx)), 0, m - 1);
      const int64_t y0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(gy)), 0, m - 1);
      const int64_t x1 = std::min<int64_t>(x0 + 1, m - 1);
      const int64_t y1 = std::min<int64_t>(y0 + 1, m - 1);
      const double fx = std::clamp(gx - static_cast<double>(x0), 0.0, 1.0);
      const double fy = std::clamp(gy - static_cast<double>(y0), 0.0, 1.0);
      const double v = (1 - fy) * ((1 - fx) * raw_mask.at2(y0, x0) + fx * raw_mask.at2(y0, x1)) +
                       fy * ((1 - fx) * raw_mask.at2(y1, x0) + fx * raw_mask.at2(y1, x1));
      if (v >= mask_threshold) out.at(r, c) = 1;
    }
  }
  return out;
}

}  // namespace crackseg
