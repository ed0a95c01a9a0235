#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "crackseg/augment.hpp"
#include "crackseg/backbones.hpp"
#include "crackseg/heads.hpp"
#include "crackseg/params.hpp"

namespace crackseg {

struct HeadConfig {
  // Anchor edge lengths in units of the level stride.
  std::vector<double> anchor_scales = {4.0};
  std::vector<double> anchor_ratios = {0.5, 1.0, 2.0};
  int roi_output_size = 7;
  int mask_roi_size = 14;
  int mask_grid = 28;
  int samples_per_bin = 2;
  int head_fc_dim = 128;
  int rpn_pre_nms = 1000;
  int rpn_post_nms = 200;
  double rpn_nms_iou = 0.7;

  void validate() const;
};

struct InferenceConfig {
  double score_threshold = 0.5;
  double mask_threshold = 0.5;
  double nms_iou = 0.5;
  int max_detections = 100;
};

struct TrainingLosses {
  nn::NodePtr total;
  double rpn_objectness = 0.0;
  double rpn_box = 0.0;
  double head_class = 0.0;
  double head_box = 0.0;
  double mask = 0.0;
};

// The full two-stage model: backbone plus RPN, box head and mask head. All
// parameters live in one ParamStore so checkpoints and the optimizer see a
// single flat list.
class Detector {
 public:
  Detector(const BackboneConfig& backbone, const HeadConfig& heads, uint64_t init_seed);

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const BackboneConfig& backbone_config() const { return backbone_; }
  const HeadConfig& head_config() const { return heads_; }

  FeaturePyramid forward_pyramid(nn::Graph& g, const nn::NodePtr& image) const;

  struct RpnOut {
    std::vector<nn::NodePtr> objectness;  // (A, H_l, W_l) per level
    std::vector<nn::NodePtr> deltas;      // (4A, H_l, W_l) per level
    std::vector<Anchor> anchors;          // concatenated over levels
    std::vector<std::pair<int64_t, int64_t>> shapes;
    std::vector<int64_t> level_offsets;   // first anchor index per level
    int anchors_per_cell = 0;
  };
  RpnOut rpn_forward(nn::Graph& g, const FeaturePyramid& pyramid) const;

  std::vector<Proposal> propose(const RpnOut& rpn, int64_t image_height,
                                int64_t image_width) const;

  // Classification logit (R,1) and box deltas (R,4) for the given RoIs.
  std::pair<nn::NodePtr, nn::NodePtr> box_head(nn::Graph& g, const FeaturePyramid& pyramid,
                                               const std::vector<Box>& rois) const;

  // Per-RoI mask logits of shape (1, mask_grid, mask_grid).
  std::vector<nn::NodePtr> mask_head(nn::Graph& g, const FeaturePyramid& pyramid,
                                     const std::vector<Box>& rois) const;

  std::vector<Detection> predict(const Tensor& image, const InferenceConfig& cfg) const;

  TrainingLosses compute_losses(nn::Graph& g, const Sample& sample, Rng& rng) const;

 private:
  nn::NodePtr pooled_roi(nn::Graph& g, const FeaturePyramid& pyramid, const Box& roi,
                         int output_size) const;

  BackboneConfig backbone_;
  HeadConfig heads_;
  nn::ParamStore params_;
};

}  // namespace crackseg
