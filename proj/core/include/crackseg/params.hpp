#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/graph.hpp"
#include "crackseg/rng.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg::nn {

// Ordered, name-addressed registry of trainable leaves. Construction order is
// deterministic for a given configuration, which makes checkpoints and
// optimizer state line up across runs.
class ParamStore {
 public:
  NodePtr add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
    NodePtr node = make_leaf(std::move(init), true);
    index_[name] = items_.size();
    items_.emplace_back(name, node);
    return node;
  }

  NodePtr at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::logic_error("unknown parameter name: " + name);
    return items_[it->second].second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::pair<std::string, NodePtr>>& items() const { return items_; }

  int64_t total_parameters() const {
    int64_t n = 0;
    for (const auto& [name, node] : items_) n += node->value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [name, node] : items_) node->zero_grad();
  }

 private:
  std::vector<std::pair<std::string, NodePtr>> items_;
  std::map<std::string, size_t> index_;
};

inline Tensor he_normal(const std::vector<int64_t>& shape, int64_t fan_in, Rng& rng) {
  Tensor t(shape);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = stddev * rng.normal();
  return t;
}

inline Tensor lecun_normal(const std::vector<int64_t>& shape, int64_t fan_in, Rng& rng) {
  Tensor t(shape);
  const double stddev = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = stddev * rng.normal();
  return t;
}

inline Tensor conv_weight(int64_t oc, int64_t ic, int64_t kh, int64_t kw, Rng& rng) {
  return he_normal({oc, ic, kh, kw}, ic * kh * kw, rng);
}

// For convolutions with no rectifier behind them; the He gain would grow the
// signal by sqrt(2) at every such layer.
inline Tensor linear_conv_weight(int64_t oc, int64_t ic, int64_t kh, int64_t kw, Rng& rng) {
  return lecun_normal({oc, ic, kh, kw}, ic * kh * kw, rng);
}

inline Tensor linear_weight(int64_t out, int64_t in, Rng& rng) {
  return he_normal({out, in}, in, rng);
}

// Prediction layers start near zero so an untrained model emits neutral
// outputs (score 0.5, identity box decode) whatever the feature magnitude.
inline Tensor prediction_weight(const std::vector<int64_t>& shape, Rng& rng) {
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = 0.01 * rng.normal();
  return t;
}

inline Tensor zeros(const std::vector<int64_t>& shape) { return Tensor(shape); }

}  // namespace crackseg::nn
