#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "crackseg/geometry.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg::nn {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;

  void ensure_grad() {
    if (!grad.same_shape(value)) grad = Tensor(value.shape());
  }
  void zero_grad() {
    if (grad.same_shape(value))
      grad.fill(0.0);
    else
      grad = Tensor(value.shape());
  }
};

using NodePtr = std::shared_ptr<Node>;

NodePtr make_leaf(Tensor value, bool requires_grad = false);

// Reverse-mode tape. Ops append their backward closure; backward() replays
// the tape in reverse, accumulating into Node::grad. Graphs are single-use
// and single-threaded; a non-recording graph is a plain forward evaluator.
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  NodePtr conv2d(const NodePtr& x, const NodePtr& w, const NodePtr& b, int stride, int pad);
  NodePtr linear(const NodePtr& x, const NodePtr& w, const NodePtr& b);
  NodePtr relu(const NodePtr& x);
  NodePtr add(const NodePtr& a, const NodePtr& b);
  NodePtr add_n(const std::vector<NodePtr>& xs);
  NodePtr elem_max(const NodePtr& a, const NodePtr& b);
  NodePtr mul_scalar(const NodePtr& x, double s);
  NodePtr upsample2x_nearest(const NodePtr& x);
  NodePtr upsample_nearest(const NodePtr& x, int factor);

  // (1,H,W) logits -> gate with sum H*W (mean 1).
  NodePtr spatial_softmax_gate(const NodePtr& logits);
  // (C,H,W) * (1,H,W), broadcast over channels.
  NodePtr scale_by_gate(const NodePtr& feature, const NodePtr& gate);

  // Quantization-free pooling; roi in the feature map's own coordinates.
  NodePtr roi_align(const NodePtr& feature, const Box& roi, int output_size, int samples_per_bin);

  // Stack R tensors of identical shape (C,H,W) into (R, C*H*W).
  NodePtr stack_flatten(const std::vector<NodePtr>& xs);
  // Select elements by flat index into a 1-D node.
  NodePtr gather(const NodePtr& x, std::vector<int64_t> indices);

  NodePtr sum(const NodePtr& x);
  NodePtr mean(const NodePtr& x);

  // mean_i [ softplus(z_i) - t_i * z_i ]; targets must be 0/1.
  NodePtr bce_with_logits_mean(const NodePtr& logits, Tensor targets);
  // sum_i f(pred_i - target_i) with f(x) = 0.5 x^2 for |x|<1 else |x|-0.5.
  NodePtr smooth_l1_sum(const NodePtr& pred, Tensor target);

  void backward(const NodePtr& root);

 private:
  struct TapeEntry {
    NodePtr out;
    std::function<void()> fn;
  };

  NodePtr result(Tensor value, bool requires_grad);
  void push(const NodePtr& out, std::function<void()> fn) {
    tape_.push_back({out, std::move(fn)});
  }

  bool recording_ = true;
  std::vector<TapeEntry> tape_;
};

double sigmoid(double z);
double softplus(double z);

}  // namespace crackseg::nn
