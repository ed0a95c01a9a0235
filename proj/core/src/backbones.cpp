#include "crackseg/backbones.hpp"

#include <stdexcept>

#include "crackseg/errors.hpp"

namespace crackseg {

using nn::Graph;
using nn::NodePtr;
using nn::ParamStore;

std::string to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::resnet_fpn: return "resnet_fpn";
    case BackboneKind::a_panet: return "a_panet";
    case BackboneKind::hrnet: return "hrnet";
  }
  return "resnet_fpn";
}

BackboneKind backbone_kind_from_string(const std::string& s) {
  if (s == "resnet_fpn") return BackboneKind::resnet_fpn;
  if (s == "a_panet") return BackboneKind::a_panet;
  if (s == "hrnet") return BackboneKind::hrnet;
  throw ValidationError("unknown backbone kind '" + s + "'");
}

void BackboneConfig::validate() const {
  if (base_channels < 1) throw ValidationError("base_channels must be >= 1");
  if (depth < 1) throw ValidationError("depth must be >= 1");
  if (out_channels < 1) throw ValidationError("out_channels must be >= 1");
  if (attention_enabled && kind != BackboneKind::a_panet)
    throw ValidationError("attention requires the a_panet backbone");
}

namespace {

constexpr int kNumLevels = 4;
constexpr int kCoarsestStride = 32;

std::string lvl(const std::string& prefix, int level, const std::string& suffix) {
  return prefix + std::to_string(level) + suffix;
}

int stage_channels(const BackboneConfig& cfg, int stage) {
  return cfg.base_channels << (stage - 1);
}

void add_conv(ParamStore& p, const std::string& name, int64_t oc, int64_t ic, int64_t k, Rng& rng,
              bool bias) {
  p.add(name + ".w", nn::conv_weight(oc, ic, k, k, rng));
  if (bias) p.add(name + ".b", nn::zeros({oc}));
}

void add_block(ParamStore& p, const std::string& name, int64_t ch, Rng& rng) {
  add_conv(p, name + ".conv1", ch, ch, 3, rng, true);
  add_conv(p, name + ".conv2", ch, ch, 3, rng, true);
}

NodePtr conv(Graph& g, const ParamStore& p, const NodePtr& x, const std::string& name, int stride,
             int pad) {
  const NodePtr w = p.at(name + ".w");
  const NodePtr b = p.contains(name + ".b") ? p.at(name + ".b") : nullptr;
  return g.conv2d(x, w, b, stride, pad);
}

NodePtr residual_block(Graph& g, const ParamStore& p, const NodePtr& x, const std::string& name) {
  NodePtr h = g.relu(conv(g, p, x, name + ".conv1", 1, 1));
  h = conv(g, p, h, name + ".conv2", 1, 1);
  return g.relu(g.add(x, h));
}

void check_divisible(const NodePtr& image) {
  const int64_t h = image->value.size(1), w = image->value.size(2);
  if (h % kCoarsestStride != 0 || w % kCoarsestStride != 0)
    throw std::invalid_argument("input " + std::to_string(h) + "x" + std::to_string(w) +
                                " must have height and width divisible by " +
                                std::to_string(kCoarsestStride));
}

void build_resnet_fpn_params(const BackboneConfig& cfg, ParamStore& p, Rng& rng) {
  add_conv(p, "backbone.stem.conv1", cfg.base_channels, 3, 3, rng, true);
  add_conv(p, "backbone.stem.conv2", cfg.base_channels, cfg.base_channels, 3, rng, true);
  for (int s = 1; s <= 4; ++s) {
    const int ch = stage_channels(cfg, s);
    if (s > 1)
      add_conv(p, "backbone.stage" + std::to_string(s) + ".down", ch, stage_channels(cfg, s - 1),
               3, rng, true);
    for (int i = 1; i <= cfg.depth; ++i)
      add_block(p, "backbone.stage" + std::to_string(s) + ".block" + std::to_string(i), ch, rng);
  }
  for (int l = 2; l <= 5; ++l) {
    p.add(lvl("fpn.lateral", l, ".w"),
          nn::linear_conv_weight(cfg.out_channels, stage_channels(cfg, l - 1), 1, 1, rng));
    p.add(lvl("fpn.output", l, ".w"),
          nn::linear_conv_weight(cfg.out_channels, cfg.out_channels, 3, 3, rng));
  }
}

void build_panet_params(const BackboneConfig& cfg, ParamStore& p, Rng& rng) {
  for (int t = 3; t <= 5; ++t) {
    p.add(lvl("panet.down", t, ".w"),
          nn::linear_conv_weight(cfg.out_channels, cfg.out_channels, 3, 3, rng));
    p.add(lvl("panet.fuse", t, ".w"),
          nn::linear_conv_weight(cfg.out_channels, cfg.out_channels, 3, 3, rng));
  }
  // Zero projection weights make the gate start uniform, so attention begins
  // as an identity and sharpens only as training asks for it. A random start
  // saturates the spatial softmax and plants H*W-scale spikes in the features.
  for (int l = 2; l <= 5; ++l) {
    p.add(lvl("attn.level", l, ".w"), nn::zeros({1, cfg.out_channels, 1, 1}));
    p.add(lvl("attn.level", l, ".b"), nn::zeros({1}));
  }
}

std::string fuse_name(int stage, int from, int to) {
  return "hrnet.stage" + std::to_string(stage) + ".fuse" + std::to_string(from) + "to" +
         std::to_string(to);
}

void build_hrnet_params(const BackboneConfig& cfg, ParamStore& p, Rng& rng) {
  add_conv(p, "hrnet.stem.conv1", cfg.base_channels, 3, 3, rng, true);
  add_conv(p, "hrnet.stem.conv2", cfg.base_channels, cfg.base_channels, 3, rng, true);
  for (int s = 1; s <= 4; ++s) {
    if (s > 1)
      add_conv(p, "hrnet.transition" + std::to_string(s), stage_channels(cfg, s),
               stage_channels(cfg, s - 1), 3, rng, true);
    for (int b = 1; b <= s; ++b)
      for (int i = 1; i <= cfg.depth; ++i)
        add_block(p,
                  "hrnet.stage" + std::to_string(s) + ".branch" + std::to_string(b) + ".block" +
                      std::to_string(i),
                  stage_channels(cfg, b), rng);
    if (s < 2) continue;
    for (int to = 1; to <= s; ++to)
      for (int from = 1; from <= s; ++from) {
        if (from == to) continue;
        if (from < to) {
          for (int k = 0; k < to - from; ++k) {
            const bool rectified = k + 1 < to - from;
            const int64_t oc = stage_channels(cfg, from + k + 1);
            const int64_t ic = stage_channels(cfg, from + k);
            p.add(fuse_name(s, from, to) + ".step" + std::to_string(k) + ".w",
                  rectified ? nn::conv_weight(oc, ic, 3, 3, rng)
                            : nn::linear_conv_weight(oc, ic, 3, 3, rng));
          }
        } else {
          p.add(fuse_name(s, from, to) + ".w",
                nn::linear_conv_weight(stage_channels(cfg, to), stage_channels(cfg, from), 1, 1,
                                       rng));
        }
      }
  }
  for (int b = 1; b <= 4; ++b)
    p.add(lvl("hrnet.output", b, ".w"),
          nn::linear_conv_weight(cfg.out_channels, stage_channels(cfg, b), 1, 1, rng));
}

}  // namespace

void build_backbone_params(const BackboneConfig& cfg, ParamStore& params, Rng& rng) {
  cfg.validate();
  switch (cfg.kind) {
    case BackboneKind::resnet_fpn:
      build_resnet_fpn_params(cfg, params, rng);
      break;
    case BackboneKind::a_panet:
      build_resnet_fpn_params(cfg, params, rng);
      build_panet_params(cfg, params, rng);
      break;
    case BackboneKind::hrnet:
      build_hrnet_params(cfg, params, rng);
      break;
  }
}

FeaturePyramid resnet_fpn_forward(Graph& g, const NodePtr& image, const ParamStore& p,
                                  const BackboneConfig& cfg) {
  check_divisible(image);
  NodePtr x = g.relu(conv(g, p, image, "backbone.stem.conv1", 2, 1));
  x = g.relu(conv(g, p, x, "backbone.stem.conv2", 2, 1));

  std::vector<NodePtr> stage_out(4);
  for (int s = 1; s <= 4; ++s) {
    if (s > 1) x = g.relu(conv(g, p, x, "backbone.stage" + std::to_string(s) + ".down", 2, 1));
    for (int i = 1; i <= cfg.depth; ++i)
      x = residual_block(g, p, x, "backbone.stage" + std::to_string(s) + ".block" +
                                      std::to_string(i));
    stage_out[s - 1] = x;
  }

  std::vector<NodePtr> laterals(kNumLevels);
  for (int i = 0; i < kNumLevels; ++i)
    laterals[i] = g.conv2d(stage_out[i], p.at(lvl("fpn.lateral", i + 2, ".w")), nullptr, 1, 0);

  std::vector<NodePtr> merged(kNumLevels);
  merged[kNumLevels - 1] = laterals[kNumLevels - 1];
  for (int i = kNumLevels - 2; i >= 0; --i)
    merged[i] = g.add(laterals[i], g.upsample2x_nearest(merged[i + 1]));

  FeaturePyramid out;
  out.strides = {4, 8, 16, 32};
  out.levels.resize(kNumLevels);
  for (int i = 0; i < kNumLevels; ++i)
    out.levels[i] = g.conv2d(merged[i], p.at(lvl("fpn.output", i + 2, ".w")), nullptr, 1, 1);
  return out;
}

FeaturePyramid panet_bottom_up(Graph& g, const FeaturePyramid& pyramid, const ParamStore& p,
                               const BackboneConfig& cfg) {
  (void)cfg;
  const int64_t channels = pyramid.levels.at(0)->value.size(0);
  for (const auto& level : pyramid.levels)
    if (level->value.size(0) != channels)
      throw std::invalid_argument("panet_bottom_up: pyramid levels disagree on channel count");

  FeaturePyramid out;
  out.strides = pyramid.strides;
  out.levels.resize(pyramid.levels.size());
  out.levels[0] = pyramid.levels[0];
  for (size_t i = 1; i < pyramid.levels.size(); ++i) {
    const int target = static_cast<int>(i) + 2;
    NodePtr down = g.conv2d(out.levels[i - 1], p.at(lvl("panet.down", target, ".w")), nullptr, 2,
                            1);
    NodePtr fused = g.add(down, pyramid.levels[i]);
    out.levels[i] = g.conv2d(fused, p.at(lvl("panet.fuse", target, ".w")), nullptr, 1, 1);
  }
  return out;
}

NodePtr spatial_attention(Graph& g, const NodePtr& feature, const NodePtr& proj_w,
                          const NodePtr& proj_b) {
  NodePtr logits = g.conv2d(feature, proj_w, proj_b, 1, 0);
  NodePtr gate = g.spatial_softmax_gate(logits);
  return g.scale_by_gate(feature, gate);
}

FeaturePyramid hrnet_forward(Graph& g, const NodePtr& image, const ParamStore& p,
                             const BackboneConfig& cfg) {
  check_divisible(image);
  NodePtr x = g.relu(conv(g, p, image, "hrnet.stem.conv1", 2, 1));
  x = g.relu(conv(g, p, x, "hrnet.stem.conv2", 2, 1));

  std::vector<NodePtr> branches = {x};
  for (int s = 1; s <= 4; ++s) {
    if (s > 1)
      branches.push_back(
          g.relu(conv(g, p, branches.back(), "hrnet.transition" + std::to_string(s), 2, 1)));
    for (int b = 1; b <= s; ++b)
      for (int i = 1; i <= cfg.depth; ++i)
        branches[b - 1] = residual_block(g, p, branches[b - 1],
                                         "hrnet.stage" + std::to_string(s) + ".branch" +
                                             std::to_string(b) + ".block" + std::to_string(i));
    if (s < 2) continue;
    std::vector<NodePtr> fused(branches.size());
    for (int to = 1; to <= s; ++to) {
      std::vector<NodePtr> terms = {branches[to - 1]};
      for (int from = 1; from <= s; ++from) {
        if (from == to) continue;
        if (from < to) {
          NodePtr t = branches[from - 1];
          for (int k = 0; k < to - from; ++k) {
            t = g.conv2d(t, p.at(fuse_name(s, from, to) + ".step" + std::to_string(k) + ".w"),
                         nullptr, 2, 1);
            if (k + 1 < to - from) t = g.relu(t);
          }
          terms.push_back(t);
        } else {
          NodePtr t = g.conv2d(branches[from - 1], p.at(fuse_name(s, from, to) + ".w"), nullptr,
                               1, 0);
          terms.push_back(g.upsample_nearest(t, 1 << (from - to)));
        }
      }
      fused[to - 1] = g.relu(g.add_n(terms));
    }
    branches = std::move(fused);
  }

  FeaturePyramid out;
  out.strides = {4, 8, 16, 32};
  out.levels.resize(kNumLevels);
  for (int b = 1; b <= 4; ++b)
    out.levels[b - 1] = g.conv2d(branches[b - 1], p.at(lvl("hrnet.output", b, ".w")), nullptr, 1,
                                 0);
  return out;
}

FeaturePyramid backbone_forward(Graph& g, const NodePtr& image, const ParamStore& p,
                                const BackboneConfig& cfg) {
  cfg.validate();
  if (cfg.kind == BackboneKind::hrnet) return hrnet_forward(g, image, p, cfg);
  FeaturePyramid pyramid = resnet_fpn_forward(g, image, p, cfg);
  if (cfg.kind == BackboneKind::resnet_fpn) return pyramid;
  pyramid = panet_bottom_up(g, pyramid, p, cfg);
  if (cfg.attention_enabled) {
    for (size_t i = 0; i < pyramid.levels.size(); ++i) {
      const int level = static_cast<int>(i) + 2;
      pyramid.levels[i] = spatial_attention(g, pyramid.levels[i], p.at(lvl("attn.level", level,
                                                                           ".w")),
                                            p.at(lvl("attn.level", level, ".b")));
    }
  }
  return pyramid;
}

}  // namespace crackseg
