#include "crackseg/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "crackseg/errors.hpp"
#include "crackseg/roi_align.hpp"

namespace crackseg {

using nn::Graph;
using nn::NodePtr;

namespace {

// Detection scores live in the open interval (0, 1); keep rounding from
// pushing a saturated sigmoid onto 1.0 exactly.
double score_of(double logit) {
  return std::min(nn::sigmoid(logit), 0x1.fffffffffffffp-1);
}

// FPN level for an RoI by the canonical-scale rule, as an index into the
// four-level pyramid.
size_t level_for_roi(const Box& roi, size_t num_levels) {
  const double scale = std::sqrt(std::max(roi.area(), 1e-12));
  const int k = static_cast<int>(std::floor(2.0 + std::log2(scale / 224.0)));
  return static_cast<size_t>(std::clamp<int>(k, 0, static_cast<int>(num_levels) - 1));
}

std::vector<int64_t> top_indices_by_score(const std::vector<double>& scores, int64_t keep) {
  std::vector<int64_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  if (static_cast<int64_t>(idx.size()) > keep) idx.resize(keep);
  return idx;
}

}  // namespace

void HeadConfig::validate() const {
  if (anchor_scales.empty() || anchor_ratios.empty())
    throw ValidationError("anchor scales and ratios must be nonempty");
  for (double s : anchor_scales)
    if (s <= 0) throw ValidationError("anchor scales must be positive");
  for (double r : anchor_ratios)
    if (r <= 0) throw ValidationError("anchor ratios must be positive");
  if (roi_output_size < 1 || mask_roi_size < 1 || samples_per_bin < 1)
    throw ValidationError("RoI pooling sizes must be >= 1");
  if (mask_grid != 2 * mask_roi_size)
    throw ValidationError("mask_grid must equal twice mask_roi_size");
  if (head_fc_dim < 1) throw ValidationError("head_fc_dim must be >= 1");
  if (rpn_pre_nms < 1 || rpn_post_nms < 1) throw ValidationError("RPN keep counts must be >= 1");
  if (rpn_nms_iou < 0 || rpn_nms_iou > 1) throw ValidationError("rpn_nms_iou must be in [0, 1]");
}

Detector::Detector(const BackboneConfig& backbone, const HeadConfig& heads, uint64_t init_seed)
    : backbone_(backbone), heads_(heads) {
  backbone_.validate();
  heads_.validate();
  Rng rng(derive_seed(init_seed, 0x494E4954ull, 0, 0));
  build_backbone_params(backbone_, params_, rng);

  const int64_t oc = backbone_.out_channels;
  const int64_t a = static_cast<int64_t>(heads_.anchor_scales.size()) *
                    static_cast<int64_t>(heads_.anchor_ratios.size());
  params_.add("rpn.conv.w", nn::conv_weight(oc, oc, 3, 3, rng));
  params_.add("rpn.conv.b", nn::zeros({oc}));
  params_.add("rpn.obj.w", nn::prediction_weight({a, oc, 1, 1}, rng));
  params_.add("rpn.obj.b", nn::zeros({a}));
  params_.add("rpn.delta.w", nn::prediction_weight({4 * a, oc, 1, 1}, rng));
  params_.add("rpn.delta.b", nn::zeros({4 * a}));

  const int64_t pooled = oc * heads_.roi_output_size * heads_.roi_output_size;
  params_.add("head.fc1.w", nn::linear_weight(heads_.head_fc_dim, pooled, rng));
  params_.add("head.fc1.b", nn::zeros({heads_.head_fc_dim}));
  params_.add("head.fc2.w", nn::linear_weight(heads_.head_fc_dim, heads_.head_fc_dim, rng));
  params_.add("head.fc2.b", nn::zeros({heads_.head_fc_dim}));
  params_.add("head.cls.w", nn::prediction_weight({1, heads_.head_fc_dim}, rng));
  params_.add("head.cls.b", nn::zeros({1}));
  params_.add("head.box.w", nn::prediction_weight({4, heads_.head_fc_dim}, rng));
  params_.add("head.box.b", nn::zeros({4}));

  params_.add("mask.conv1.w", nn::conv_weight(oc, oc, 3, 3, rng));
  params_.add("mask.conv1.b", nn::zeros({oc}));
  params_.add("mask.conv2.w", nn::conv_weight(oc, oc, 3, 3, rng));
  params_.add("mask.conv2.b", nn::zeros({oc}));
  params_.add("mask.predict.w", nn::prediction_weight({1, oc, 1, 1}, rng));
  params_.add("mask.predict.b", nn::zeros({1}));
}

FeaturePyramid Detector::forward_pyramid(Graph& g, const NodePtr& image) const {
  return backbone_forward(g, image, params_, backbone_);
}

Detector::RpnOut Detector::rpn_forward(Graph& g, const FeaturePyramid& pyramid) const {
  RpnOut out;
  out.anchors_per_cell = static_cast<int>(heads_.anchor_scales.size() *
                                          heads_.anchor_ratios.size());
  int64_t offset = 0;
  for (size_t i = 0; i < pyramid.levels.size(); ++i) {
    NodePtr h = g.relu(g.conv2d(pyramid.levels[i], params_.at("rpn.conv.w"),
                                params_.at("rpn.conv.b"), 1, 1));
    out.objectness.push_back(
        g.conv2d(h, params_.at("rpn.obj.w"), params_.at("rpn.obj.b"), 1, 0));
    out.deltas.push_back(
        g.conv2d(h, params_.at("rpn.delta.w"), params_.at("rpn.delta.b"), 1, 0));

    const int64_t lh = pyramid.levels[i]->value.size(1);
    const int64_t lw = pyramid.levels[i]->value.size(2);
    out.shapes.emplace_back(lh, lw);
    out.level_offsets.push_back(offset);

    std::vector<double> pixel_scales;
    for (double s : heads_.anchor_scales) pixel_scales.push_back(s * pyramid.strides[i]);
    auto level_anchors = generate_anchors({{lh, lw}}, {pyramid.strides[i]}, pixel_scales,
                                          heads_.anchor_ratios);
    for (auto& anch : level_anchors) anch.level = static_cast<int>(i);
    offset += static_cast<int64_t>(level_anchors.size());
    out.anchors.insert(out.anchors.end(), level_anchors.begin(), level_anchors.end());
  }
  return out;
}

std::vector<Proposal> Detector::propose(const RpnOut& rpn, int64_t image_height,
                                        int64_t image_width) const {
  const int a_per_cell = rpn.anchors_per_cell;
  std::vector<Box> all_boxes;
  std::vector<double> all_scores;

  for (size_t level = 0; level < rpn.objectness.size(); ++level) {
    const auto [lh, lw] = rpn.shapes[level];
    const Tensor& obj = rpn.objectness[level]->value;
    const Tensor& del = rpn.deltas[level]->value;
    const int64_t n = lh * lw * a_per_cell;
    std::vector<double> scores(n);
    std::vector<Box> boxes(n);
    for (int64_t y = 0; y < lh; ++y)
      for (int64_t x = 0; x < lw; ++x)
        for (int a = 0; a < a_per_cell; ++a) {
          const int64_t idx = (y * lw + x) * a_per_cell + a;
          const Anchor& anchor = rpn.anchors[rpn.level_offsets[level] + idx];
          scores[idx] = score_of(obj.at3(a, y, x));
          boxes[idx] = clip_box(
              decode_deltas(anchor.box, del.at3(a * 4 + 0, y, x), del.at3(a * 4 + 1, y, x),
                            del.at3(a * 4 + 2, y, x), del.at3(a * 4 + 3, y, x)),
              static_cast<double>(image_width), static_cast<double>(image_height));
        }
    for (int64_t idx : top_indices_by_score(scores, heads_.rpn_pre_nms)) {
      if (boxes[idx].degenerate()) continue;
      all_boxes.push_back(boxes[idx]);
      all_scores.push_back(scores[idx]);
    }
  }

  std::vector<Proposal> proposals;
  for (int64_t idx : nms(all_boxes, all_scores, heads_.rpn_nms_iou)) {
    proposals.push_back({all_boxes[idx], all_scores[idx]});
    if (static_cast<int>(proposals.size()) >= heads_.rpn_post_nms) break;
  }
  return proposals;
}

NodePtr Detector::pooled_roi(Graph& g, const FeaturePyramid& pyramid, const Box& roi,
                             int output_size) const {
  if (backbone_.kind == BackboneKind::a_panet)
    return adaptive_feature_pooling(g, pyramid, roi, output_size, heads_.samples_per_bin);
  const size_t level = level_for_roi(roi, pyramid.levels.size());
  const Box scaled = scale_box(roi, 1.0 / pyramid.strides[level]);
  return g.roi_align(pyramid.levels[level], scaled, output_size, heads_.samples_per_bin);
}

std::pair<NodePtr, NodePtr> Detector::box_head(Graph& g, const FeaturePyramid& pyramid,
                                               const std::vector<Box>& rois) const {
  if (rois.empty()) throw std::invalid_argument("box_head: no rois");
  std::vector<NodePtr> pooled;
  pooled.reserve(rois.size());
  for (const Box& roi : rois) pooled.push_back(pooled_roi(g, pyramid, roi, heads_.roi_output_size));
  NodePtr x = g.stack_flatten(pooled);
  x = g.relu(g.linear(x, params_.at("head.fc1.w"), params_.at("head.fc1.b")));
  x = g.relu(g.linear(x, params_.at("head.fc2.w"), params_.at("head.fc2.b")));
  NodePtr cls = g.linear(x, params_.at("head.cls.w"), params_.at("head.cls.b"));
  NodePtr box = g.linear(x, params_.at("head.box.w"), params_.at("head.box.b"));
  return {cls, box};
}

std::vector<NodePtr> Detector::mask_head(Graph& g, const FeaturePyramid& pyramid,
                                         const std::vector<Box>& rois) const {
  std::vector<NodePtr> out;
  out.reserve(rois.size());
  for (const Box& roi : rois) {
    NodePtr x = pooled_roi(g, pyramid, roi, heads_.mask_roi_size);
    x = g.relu(g.conv2d(x, params_.at("mask.conv1.w"), params_.at("mask.conv1.b"), 1, 1));
    x = g.relu(g.conv2d(x, params_.at("mask.conv2.w"), params_.at("mask.conv2.b"), 1, 1));
    x = g.upsample2x_nearest(x);
    out.push_back(g.conv2d(x, params_.at("mask.predict.w"), params_.at("mask.predict.b"), 1, 0));
  }
  return out;
}

std::vector<Detection> Detector::predict(const Tensor& image, const InferenceConfig& cfg) const {
  Graph g(false);
  NodePtr img = nn::make_leaf(image, false);
  const int64_t ih = image.size(1), iw = image.size(2);

  FeaturePyramid pyramid = forward_pyramid(g, img);
  RpnOut rpn = rpn_forward(g, pyramid);
  std::vector<Proposal> proposals = propose(rpn, ih, iw);
  if (proposals.empty()) return {};

  std::vector<Box> rois;
  rois.reserve(proposals.size());
  for (const auto& p : proposals) rois.push_back(p.box);
  auto [cls, deltas] = box_head(g, pyramid, rois);

  std::vector<Box> boxes;
  std::vector<double> scores;
  for (size_t r = 0; r < rois.size(); ++r) {
    const double score = score_of(cls->value.at2(static_cast<int64_t>(r), 0));
    if (score < cfg.score_threshold) continue;
    Box b = decode_deltas(rois[r], deltas->value.at2(r, 0), deltas->value.at2(r, 1),
                          deltas->value.at2(r, 2), deltas->value.at2(r, 3));
    b = clip_box(b, static_cast<double>(iw), static_cast<double>(ih));
    if (b.degenerate()) continue;
    boxes.push_back(b);
    scores.push_back(score);
  }
  if (boxes.empty()) return {};

  std::vector<int64_t> kept = nms(boxes, scores, cfg.nms_iou);
  if (static_cast<int>(kept.size()) > cfg.max_detections) kept.resize(cfg.max_detections);

  std::vector<Box> final_boxes;
  for (int64_t idx : kept) final_boxes.push_back(boxes[idx]);
  std::vector<NodePtr> mask_logits = mask_head(g, pyramid, final_boxes);

  std::vector<Detection> detections;
  detections.reserve(kept.size());
  for (size_t i = 0; i < kept.size(); ++i) {
    Detection det;
    det.box = final_boxes[i];
    det.score = scores[kept[i]];
    const int m = heads_.mask_grid;
    det.raw_mask = Tensor({m, m});
    for (int64_t j = 0; j < det.raw_mask.numel(); ++j)
      det.raw_mask[j] = nn::sigmoid(mask_logits[i]->value[j]);
    det.mask = paste_mask(det.raw_mask, det.box, ih, iw, cfg.mask_threshold);
    detections.push_back(std::move(det));
  }
  return detections;
}

TrainingLosses Detector::compute_losses(Graph& g, const Sample& sample, Rng& rng) const {
  const int64_t ih = sample.image.size(1), iw = sample.image.size(2);
  NodePtr img = nn::make_leaf(sample.image, false);
  FeaturePyramid pyramid = forward_pyramid(g, img);
  RpnOut rpn = rpn_forward(g, pyramid);

  AnchorTargetConfig acfg;
  AnchorTargets targets = assign_anchor_targets(rpn.anchors, sample.boxes, acfg, rng);

  const int a_per_cell = rpn.anchors_per_cell;
  int64_t sampled_total = 0, positive_total = 0;
  for (int label : targets.labels) {
    sampled_total += label >= 0 ? 1 : 0;
    positive_total += label == 1 ? 1 : 0;
  }

  std::vector<NodePtr> obj_terms;
  std::vector<NodePtr> box_terms;
  for (size_t level = 0; level < rpn.objectness.size(); ++level) {
    const auto [lh, lw] = rpn.shapes[level];
    const int64_t begin = rpn.level_offsets[level];
    const int64_t count = lh * lw * a_per_cell;
    std::vector<int64_t> obj_idx;
    std::vector<double> obj_target;
    std::vector<int64_t> delta_idx;
    std::vector<double> delta_target;
    for (int64_t i = 0; i < count; ++i) {
      const int label = targets.labels[begin + i];
      if (label < 0) continue;
      const int64_t cell = i / a_per_cell;
      const int64_t a = i % a_per_cell;
      const int64_t y = cell / lw;
      const int64_t x = cell % lw;
      obj_idx.push_back((a * lh + y) * lw + x);
      obj_target.push_back(label);
      if (label == 1) {
        for (int d = 0; d < 4; ++d) {
          delta_idx.push_back(((a * 4 + d) * lh + y) * lw + x);
          delta_target.push_back(targets.deltas[begin + i][d]);
        }
      }
    }
    if (!obj_idx.empty()) {
      Tensor t({static_cast<int64_t>(obj_target.size())});
      for (size_t i = 0; i < obj_target.size(); ++i) t[static_cast<int64_t>(i)] = obj_target[i];
      NodePtr term = g.bce_with_logits_mean(g.gather(rpn.objectness[level], obj_idx), std::move(t));
      obj_terms.push_back(g.mul_scalar(
          term, static_cast<double>(obj_idx.size()) / static_cast<double>(sampled_total)));
    }
    if (!delta_idx.empty()) {
      Tensor t({static_cast<int64_t>(delta_target.size())});
      for (size_t i = 0; i < delta_target.size(); ++i)
        t[static_cast<int64_t>(i)] = delta_target[i];
      box_terms.push_back(
          g.smooth_l1_sum(g.gather(rpn.deltas[level], delta_idx), std::move(t)));
    }
  }

  NodePtr zero = nn::make_leaf(Tensor::scalar(0.0), false);
  NodePtr rpn_obj_loss = obj_terms.empty() ? zero : g.add_n(obj_terms);
  // The regression sum is averaged over positives only; averaging over the
  // whole sampled batch would let a handful of positives drown in the
  // negative count and leave the branch barely trained.
  NodePtr rpn_box_loss =
      box_terms.empty()
          ? zero
          : g.mul_scalar(g.add_n(box_terms), 1.0 / static_cast<double>(positive_total));

  // Second stage. Ground-truth boxes join the proposals so the heads always
  // see well-placed positives early in training.
  std::vector<Box> candidates;
  for (const Proposal& p : propose(rpn, ih, iw)) candidates.push_back(p.box);
  for (const Box& b : sample.boxes) candidates.push_back(b);

  MatchConfig mcfg;
  std::vector<LabeledRoi> rois = match_and_sample(candidates, sample.boxes, mcfg, rng);

  NodePtr cls_loss = zero, box_loss = zero, mask_loss_node = zero;
  if (!rois.empty()) {
    std::vector<Box> roi_boxes;
    roi_boxes.reserve(rois.size());
    for (const auto& r : rois) roi_boxes.push_back(r.box);
    auto [cls, deltas] = box_head(g, pyramid, roi_boxes);

    std::vector<int64_t> cls_idx(rois.size());
    Tensor cls_target({static_cast<int64_t>(rois.size())});
    for (size_t r = 0; r < rois.size(); ++r) {
      cls_idx[r] = static_cast<int64_t>(r);
      cls_target[static_cast<int64_t>(r)] = rois[r].positive ? 1.0 : 0.0;
    }
    cls_loss = g.bce_with_logits_mean(g.gather(cls, cls_idx), std::move(cls_target));

    std::vector<int64_t> delta_idx;
    std::vector<double> delta_target;
    std::vector<size_t> positive_rows;
    for (size_t r = 0; r < rois.size(); ++r) {
      if (!rois[r].positive) continue;
      positive_rows.push_back(r);
      const auto enc = encode_deltas(rois[r].box, sample.boxes[rois[r].gt_index]);
      for (int d = 0; d < 4; ++d) {
        delta_idx.push_back(static_cast<int64_t>(r) * 4 + d);
        delta_target.push_back(enc[d]);
      }
    }
    if (!delta_idx.empty()) {
      Tensor t({static_cast<int64_t>(delta_target.size())});
      for (size_t i = 0; i < delta_target.size(); ++i)
        t[static_cast<int64_t>(i)] = delta_target[i];
      box_loss = g.mul_scalar(g.smooth_l1_sum(g.gather(deltas, delta_idx), std::move(t)),
                              1.0 / static_cast<double>(positive_rows.size()));
    }

    if (!positive_rows.empty()) {
      std::vector<Box> mask_rois;
      for (size_t r : positive_rows) mask_rois.push_back(rois[r].box);
      std::vector<NodePtr> logits = mask_head(g, pyramid, mask_rois);
      std::vector<NodePtr> per_roi;
      for (size_t i = 0; i < positive_rows.size(); ++i) {
        const LabeledRoi& roi = rois[positive_rows[i]];
        Tensor target = mask_target(sample.masks[roi.gt_index], roi.box, heads_.mask_grid);
        per_roi.push_back(g.bce_with_logits_mean(logits[i], std::move(target)));
      }
      mask_loss_node =
          g.mul_scalar(g.add_n(per_roi), 1.0 / static_cast<double>(per_roi.size()));
    }
  }

  TrainingLosses losses;
  losses.total = g.add_n({rpn_obj_loss, rpn_box_loss, cls_loss, box_loss, mask_loss_node});
  losses.rpn_objectness = rpn_obj_loss->value[0];
  losses.rpn_box = rpn_box_loss->value[0];
  losses.head_class = cls_loss->value[0];
  losses.head_box = box_loss->value[0];
  losses.mask = mask_loss_node->value[0];
  return losses;
}

}  // namespace crackseg
