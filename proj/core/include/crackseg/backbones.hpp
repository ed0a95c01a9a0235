#pragma once

#include <string>
#include <vector>

#include "crackseg/graph.hpp"
#include "crackseg/params.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

enum class BackboneKind { resnet_fpn, a_panet, hrnet };

std::string to_string(BackboneKind kind);
BackboneKind backbone_kind_from_string(const std::string& s);

struct BackboneConfig {
  BackboneKind kind = BackboneKind::resnet_fpn;
  int base_channels = 8;
  int depth = 1;
  int out_channels = 16;
  bool attention_enabled = false;

  void validate() const;
};

// Multi-resolution features, finest level first. Values are graph nodes so
// gradients can flow back into the producing backbone.
struct FeaturePyramid {
  std::vector<nn::NodePtr> levels;
  std::vector<int> strides;
};

// Registers every parameter the configured backbone (and neck) needs.
// Initialization draws come from rng in registration order.
void build_backbone_params(const BackboneConfig& cfg, nn::ParamStore& params, Rng& rng);

// Residual backbone with a feature pyramid neck; strides {4, 8, 16, 32}.
FeaturePyramid resnet_fpn_forward(nn::Graph& g, const nn::NodePtr& image,
                                  const nn::ParamStore& params, const BackboneConfig& cfg);

// Bottom-up augmentation over an existing pyramid: N2 = P2 and
// N_{l+1} = conv(downsample(N_l) + P_{l+1}).
FeaturePyramid panet_bottom_up(nn::Graph& g, const FeaturePyramid& pyramid,
                               const nn::ParamStore& params, const BackboneConfig& cfg);

// Single-channel gate from a learned 1x1 projection followed by a spatial
// softmax scaled by H*W, multiplied over all channels. The gate sums to H*W.
nn::NodePtr spatial_attention(nn::Graph& g, const nn::NodePtr& feature, const nn::NodePtr& proj_w,
                              const nn::NodePtr& proj_b);

// Four-stage multi-branch network with full cross-resolution fusion after
// every stage; output branches are projected to out_channels.
FeaturePyramid hrnet_forward(nn::Graph& g, const nn::NodePtr& image, const nn::ParamStore& params,
                             const BackboneConfig& cfg);

// Dispatches on cfg.kind and applies the attention gates when enabled.
FeaturePyramid backbone_forward(nn::Graph& g, const nn::NodePtr& image,
                                const nn::ParamStore& params, const BackboneConfig& cfg);

}  // namespace crackseg
