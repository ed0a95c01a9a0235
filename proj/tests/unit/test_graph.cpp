#include <doctest.h>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "crackseg/graph.hpp"
#include "crackseg/rng.hpp"
#include "crackseg/tensor.hpp"
#include "oracles.hpp"

using namespace crackseg;
namespace ct = crackseg::testing;
using nn::Graph;
using nn::NodePtr;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int64_t> shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = lo + (hi - lo) * rng.uniform();
  return t;
}

NodePtr leaf(Tensor t) { return nn::make_leaf(std::move(t), true); }

// Central-difference check of every element of every listed leaf against the
// tape gradients. build must produce the same scalar loss on each call from
// the leaves' current values.
void check_gradients(const std::vector<NodePtr>& leaves,
                     const std::function<NodePtr(Graph&)>& build, double tol = 1e-4) {
  Graph g(true);
  const NodePtr loss = build(g);
  REQUIRE(loss->value.numel() == 1);
  g.backward(loss);

  auto numeric_loss = [&]() {
    Graph fwd(false);
    return build(fwd)->value[0];
  };
  for (const auto& l : leaves) {
    const bool has_grad = l->grad.same_shape(l->value);
    for (int64_t i = 0; i < l->value.numel(); ++i) {
      const double analytic = has_grad ? l->grad[i] : 0.0;
      const double numeric = ct::numeric_gradient(numeric_loss, &l->value[i]);
      CHECK(ct::relative_error(analytic, numeric) < tol);
    }
  }
}

}  // namespace

TEST_CASE("conv2d computes windowed sums") {
  Tensor x({1, 3, 3});
  for (int64_t i = 0; i < 9; ++i) x[i] = static_cast<double>(i);
  Tensor w({1, 1, 2, 2}, 1.0);
  Tensor b({1}, 10.0);

  Graph g(false);
  const auto y = g.conv2d(leaf(x), leaf(w), leaf(b), 1, 0);
  CHECK(y->value.shape() == std::vector<int64_t>{1, 2, 2});
  CHECK(y->value[0] == 18.0);
  CHECK(y->value[1] == 22.0);
  CHECK(y->value[2] == 30.0);
  CHECK(y->value[3] == 34.0);

  CHECK_THROWS_AS(g.conv2d(leaf(Tensor({2, 3, 3})), leaf(Tensor({1, 1, 2, 2})), nullptr, 1, 0),
                  std::invalid_argument);
}

TEST_CASE("conv2d gradients match central differences") {
  Rng rng(211);
  const auto x = leaf(random_tensor(rng, {2, 4, 4}, -1.0, 1.0));
  const auto w = leaf(random_tensor(rng, {3, 2, 3, 3}, -0.5, 0.5));
  const auto b = leaf(random_tensor(rng, {3}, -0.2, 0.2));

  check_gradients({x, w, b}, [&](Graph& g) { return g.sum(g.conv2d(x, w, b, 1, 1)); });
  check_gradients({x, w}, [&](Graph& g) { return g.sum(g.conv2d(x, w, nullptr, 2, 1)); });
}

TEST_CASE("linear applies x * w^T + b") {
  Tensor x({2, 3});
  x.at2(0, 0) = 1;
  x.at2(0, 1) = 2;
  x.at2(0, 2) = 3;
  x.at2(1, 0) = 4;
  x.at2(1, 1) = 5;
  x.at2(1, 2) = 6;
  Tensor w({2, 3});
  w.at2(0, 0) = 1;
  w.at2(1, 1) = 1;
  Tensor b({2});
  b[0] = 10;
  b[1] = 20;

  Graph g(false);
  const auto y = g.linear(leaf(x), leaf(w), leaf(b));
  CHECK(y->value.at2(0, 0) == 11.0);
  CHECK(y->value.at2(0, 1) == 22.0);
  CHECK(y->value.at2(1, 0) == 14.0);
  CHECK(y->value.at2(1, 1) == 25.0);

  Rng rng(212);
  const auto xl = leaf(random_tensor(rng, {3, 4}, -1.0, 1.0));
  const auto wl = leaf(random_tensor(rng, {5, 4}, -1.0, 1.0));
  const auto bl = leaf(random_tensor(rng, {5}, -1.0, 1.0));
  check_gradients({xl, wl, bl}, [&](Graph& g2) { return g2.sum(g2.linear(xl, wl, bl)); });
}

TEST_CASE("relu clamps negatives and gates gradients") {
  Tensor x({3});
  x[0] = -1;
  x[1] = 0;
  x[2] = 2;
  Graph g(false);
  const auto y = g.relu(leaf(x));
  CHECK(y->value[0] == 0.0);
  CHECK(y->value[1] == 0.0);
  CHECK(y->value[2] == 2.0);

  Rng rng(213);
  Tensor far(std::vector<int64_t>{6});
  for (int64_t i = 0; i < 6; ++i) {
    const double magnitude = 0.2 + rng.uniform();
    far[i] = rng.bernoulli(0.5) ? magnitude : -magnitude;
  }
  const auto xl = leaf(far);
  check_gradients({xl}, [&](Graph& g2) { return g2.sum(g2.relu(xl)); });
}

TEST_CASE("add_n sums matching shapes") {
  Rng rng(214);
  const auto a = leaf(random_tensor(rng, {2, 3}, -1.0, 1.0));
  const auto b = leaf(random_tensor(rng, {2, 3}, -1.0, 1.0));
  const auto c = leaf(random_tensor(rng, {2, 3}, -1.0, 1.0));

  Graph g(false);
  const auto y = g.add_n({a, b, c});
  for (int64_t i = 0; i < 6; ++i)
    CHECK(y->value[i] == a->value[i] + b->value[i] + c->value[i]);

  CHECK_THROWS_AS(g.add_n({}), std::invalid_argument);
  CHECK_THROWS_AS(g.add(a, leaf(Tensor({3, 2}))), std::invalid_argument);

  check_gradients({a, b, c}, [&](Graph& g2) { return g2.sum(g2.add_n({a, b, c})); });
}

TEST_CASE("elem_max picks the larger input; ties favour the first") {
  Tensor a({2}), b({2});
  a[0] = 1;
  a[1] = 5;
  b[0] = 3;
  b[1] = 2;
  Graph g(true);
  const auto y = g.elem_max(leaf(a), leaf(b));
  CHECK(y->value[0] == 3.0);
  CHECK(y->value[1] == 5.0);

  const auto ta = leaf(Tensor({2}, 4.0));
  const auto tb = leaf(Tensor({2}, 4.0));
  Graph gt(true);
  gt.backward(gt.sum(gt.elem_max(ta, tb)));
  CHECK(ta->grad[0] == 1.0);
  CHECK(ta->grad[1] == 1.0);
  CHECK(tb->grad[0] == 0.0);
  CHECK(tb->grad[1] == 0.0);

  Rng rng(215);
  const auto xa = leaf(random_tensor(rng, {5}, 0.0, 1.0));
  const auto xb = leaf(random_tensor(rng, {5}, 2.0, 3.0));
  check_gradients({xa, xb}, [&](Graph& g2) { return g2.sum(g2.elem_max(xa, xb)); });
}

TEST_CASE("mul_scalar scales values and gradients") {
  Rng rng(216);
  const auto x = leaf(random_tensor(rng, {4}, -1.0, 1.0));
  Graph g(false);
  const auto y = g.mul_scalar(x, -2.5);
  for (int64_t i = 0; i < 4; ++i) CHECK(y->value[i] == -2.5 * x->value[i]);
  check_gradients({x}, [&](Graph& g2) { return g2.sum(g2.mul_scalar(x, -2.5)); });
}

TEST_CASE("nearest upsampling repeats blocks") {
  Tensor x({1, 2, 2});
  x[0] = 1;
  x[1] = 2;
  x[2] = 3;
  x[3] = 4;
  Graph g(false);
  const auto y = g.upsample2x_nearest(leaf(x));
  CHECK(y->value.shape() == std::vector<int64_t>{1, 4, 4});
  for (int64_t r = 0; r < 4; ++r)
    for (int64_t c = 0; c < 4; ++c)
      CHECK(y->value.at3(0, r, c) == x.at3(0, r / 2, c / 2));

  const auto y3 = g.upsample_nearest(leaf(x), 3);
  CHECK(y3->value.shape() == std::vector<int64_t>{1, 6, 6});
  CHECK(y3->value.at3(0, 5, 5) == 4.0);

  Rng rng(217);
  const auto xl = leaf(random_tensor(rng, {2, 2, 3}, 0.0, 0.5));
  const Tensor target = random_tensor(rng, {2, 4, 6}, 0.0, 0.4);
  check_gradients({xl}, [&](Graph& g2) {
    return g2.smooth_l1_sum(g2.upsample2x_nearest(xl), target);
  });
}

TEST_CASE("spatial_softmax_gate averages to one") {
  Graph g(false);
  const auto flat = g.spatial_softmax_gate(leaf(Tensor({1, 3, 4}, 0.7)));
  for (int64_t i = 0; i < 12; ++i) CHECK(flat->value[i] == 1.0);

  Rng rng(218);
  const auto logits = leaf(random_tensor(rng, {1, 5, 7}, -2.0, 2.0));
  const auto gate = g.spatial_softmax_gate(logits);
  double total = 0;
  double min_v = gate->value[0];
  for (int64_t i = 0; i < 35; ++i) {
    total += gate->value[i];
    min_v = std::min(min_v, gate->value[i]);
  }
  CHECK(total == doctest::Approx(35.0).epsilon(1e-12));
  CHECK(min_v > 0.0);

  CHECK_THROWS_AS(g.spatial_softmax_gate(leaf(Tensor({2, 3, 3}))), std::invalid_argument);

  const Tensor target = random_tensor(rng, {1, 5, 7}, 0.2, 0.5);
  check_gradients({logits}, [&](Graph& g2) {
    return g2.smooth_l1_sum(g2.spatial_softmax_gate(logits), target);
  });
}

TEST_CASE("scale_by_gate broadcasts the gate over channels") {
  Tensor f({2, 2, 2});
  for (int64_t i = 0; i < 8; ++i) f[i] = static_cast<double>(i + 1);
  Tensor gt({1, 2, 2});
  for (int64_t i = 0; i < 4; ++i) gt[i] = static_cast<double>(i + 1);

  Graph g(false);
  const auto y = g.scale_by_gate(leaf(f), leaf(gt));
  const double expected[] = {1, 4, 9, 16, 5, 12, 21, 32};
  for (int64_t i = 0; i < 8; ++i) CHECK(y->value[i] == expected[i]);

  CHECK_THROWS_AS(g.scale_by_gate(leaf(Tensor({2, 2, 2})), leaf(Tensor({1, 3, 2}))),
                  std::invalid_argument);

  Rng rng(219);
  const auto fl = leaf(random_tensor(rng, {3, 2, 4}, -1.0, 1.0));
  const auto gl = leaf(random_tensor(rng, {1, 2, 4}, 0.1, 2.0));
  check_gradients({fl, gl}, [&](Graph& g2) { return g2.sum(g2.scale_by_gate(fl, gl)); });
}

TEST_CASE("roi_align interpolates the feature map") {
  Tensor f({1, 2, 2});
  f[0] = 1;
  f[1] = 2;
  f[2] = 3;
  f[3] = 4;
  Graph g(false);
  const auto center = g.roi_align(leaf(f), Box{0, 0, 2, 2}, 1, 1);
  CHECK(center->value[0] == 2.5);

  // A constant feature map pools to the constant for any roi and bin layout.
  const auto flat = g.roi_align(leaf(Tensor({3, 6, 6}, 0.75)), Box{0.3, 1.1, 4.9, 5.2}, 3, 2);
  for (int64_t i = 0; i < flat->value.numel(); ++i) CHECK(flat->value[i] == 0.75);

  CHECK_THROWS_AS(g.roi_align(leaf(Tensor({1, 4, 4})), Box{2, 2, 2, 3}, 2, 2),
                  std::invalid_argument);
  CHECK_THROWS_AS(g.roi_align(leaf(Tensor({1, 4, 4})), Box{0, 0, 2, 2}, 0, 2),
                  std::invalid_argument);
}

TEST_CASE("roi_align agrees with the dense sampling oracle") {
  Rng rng(220);
  for (int trial = 0; trial < 6; ++trial) {
    const Tensor f = random_tensor(rng, {2, 8, 8}, 0.0, 1.0);
    const Box roi{0.25 + 5.0 * rng.uniform(), 0.25 + 5.0 * rng.uniform(), 0.0, 0.0};
    const Box full{roi.x1, roi.y1, roi.x1 + 1.0 + 2.0 * rng.uniform(),
                   roi.y1 + 1.0 + 2.0 * rng.uniform()};
    Graph g(false);
    const auto pooled = g.roi_align(leaf(f), full, 3, 100);
    const Tensor reference = ct::dense_roi_align(f, full, 3, 100);
    REQUIRE(pooled->value.shape() == reference.shape());
    for (int64_t i = 0; i < reference.numel(); ++i)
      CHECK(pooled->value[i] == doctest::Approx(reference[i]).epsilon(1e-9));
  }
}

TEST_CASE("roi_align gradients match central differences") {
  Rng rng(221);
  const auto f = leaf(random_tensor(rng, {2, 6, 6}, 0.0, 1.0));
  const Tensor target = random_tensor(rng, {2, 2, 2}, 0.1, 0.3);
  check_gradients({f}, [&](Graph& g) {
    return g.smooth_l1_sum(g.roi_align(f, Box{0.7, 1.2, 4.3, 5.1}, 2, 2), target);
  });
}

TEST_CASE("stack_flatten concatenates rois row-wise") {
  Rng rng(222);
  const auto a = leaf(random_tensor(rng, {2, 2, 2}, -1.0, 1.0));
  const auto b = leaf(random_tensor(rng, {2, 2, 2}, -1.0, 1.0));
  Graph g(false);
  const auto y = g.stack_flatten({a, b});
  CHECK(y->value.shape() == std::vector<int64_t>{2, 8});
  for (int64_t i = 0; i < 8; ++i) {
    CHECK(y->value.at2(0, i) == a->value[i]);
    CHECK(y->value.at2(1, i) == b->value[i]);
  }
  CHECK_THROWS_AS(g.stack_flatten({}), std::invalid_argument);
  CHECK_THROWS_AS(g.stack_flatten({a, leaf(Tensor({1, 2, 2}))}), std::invalid_argument);

  check_gradients({a, b}, [&](Graph& g2) { return g2.sum(g2.stack_flatten({a, b})); });
}

TEST_CASE("gather selects and accumulates by flat index") {
  Tensor x({4});
  for (int64_t i = 0; i < 4; ++i) x[i] = static_cast<double>(10 * i);
  const auto xl = leaf(x);
  Graph g(true);
  const auto y = g.gather(xl, {0, 0, 2});
  CHECK(y->value[0] == 0.0);
  CHECK(y->value[1] == 0.0);
  CHECK(y->value[2] == 20.0);
  g.backward(g.sum(y));
  CHECK(xl->grad[0] == 2.0);
  CHECK(xl->grad[1] == 0.0);
  CHECK(xl->grad[2] == 1.0);
  CHECK(xl->grad[3] == 0.0);
}

TEST_CASE("sum and mean reduce with uniform gradients") {
  Rng rng(223);
  const auto x = leaf(random_tensor(rng, {5}, -1.0, 1.0));
  double expect = 0;
  for (int64_t i = 0; i < 5; ++i) expect += x->value[i];

  Graph g(true);
  const auto m = g.mean(x);
  CHECK(m->value[0] == doctest::Approx(expect / 5.0).epsilon(1e-15));
  g.backward(m);
  for (int64_t i = 0; i < 5; ++i) CHECK(x->grad[i] == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("bce_with_logits_mean at zero logits is log 2") {
  Tensor logits({4}, 0.0);
  Tensor targets({4});
  targets[0] = 1;
  targets[2] = 1;
  const auto zl = leaf(logits);
  Graph g(true);
  const auto loss = g.bce_with_logits_mean(zl, targets);
  CHECK(loss->value[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  g.backward(loss);
  for (int64_t i = 0; i < 4; ++i)
    CHECK(zl->grad[i] == (nn::sigmoid(0.0) - targets[i]) / 4.0);

  Tensor bad({1}, 0.0);
  Tensor half({1}, 0.5);
  CHECK_THROWS_AS(g.bce_with_logits_mean(leaf(bad), half), std::invalid_argument);
  CHECK_THROWS_AS(g.bce_with_logits_mean(leaf(bad), Tensor({2})), std::invalid_argument);

  Rng rng(224);
  const auto xl = leaf(random_tensor(rng, {6}, -2.0, 2.0));
  Tensor t({6});
  for (int64_t i = 0; i < 6; ++i) t[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  check_gradients({xl}, [&](Graph& g2) { return g2.bce_with_logits_mean(xl, t); });
}

TEST_CASE("smooth_l1_sum follows the huber curve") {
  auto loss_of = [](double pred, double target) {
    Graph g(false);
    Tensor p({1}, pred);
    Tensor t({1}, target);
    return g.smooth_l1_sum(leaf(p), t)->value[0];
  };
  CHECK(loss_of(3.0, 3.0) == 0.0);
  CHECK(loss_of(1.0, 0.0) == 0.5);
  CHECK(loss_of(-3.0, 0.0) == 2.5);
  CHECK(loss_of(0.5, 0.0) == 0.125);
  // Continuous across the knee.
  CHECK(loss_of(1.0 - 1e-9, 0.0) == doctest::Approx(loss_of(1.0 + 1e-9, 0.0)).epsilon(1e-8));

  Graph g(false);
  CHECK_THROWS_AS(g.smooth_l1_sum(leaf(Tensor({2})), Tensor({3})), std::invalid_argument);

  Rng rng(225);
  const auto xl = leaf(random_tensor(rng, {5}, 0.0, 0.6));
  const Tensor target = random_tensor(rng, {5}, 2.0, 3.0);
  check_gradients({xl}, [&](Graph& g2) { return g2.smooth_l1_sum(xl, target); });
}

TEST_CASE("backward skips branches that do not feed the root") {
  Rng rng(226);
  const auto x = leaf(random_tensor(rng, {4}, 0.5, 1.5));
  Graph g(true);
  const auto used = g.relu(x);
  const auto unused = g.mul_scalar(x, 3.0);
  (void)unused;
  const auto loss = g.sum(used);
  g.backward(loss);
  for (int64_t i = 0; i < 4; ++i) CHECK(x->grad[i] == 1.0);
  CHECK_FALSE(unused->grad.same_shape(unused->value));
}

TEST_CASE("backward requires a recording graph") {
  Graph g(false);
  const auto x = leaf(Tensor({2}, 1.0));
  const auto y = g.sum(x);
  CHECK_THROWS_AS(g.backward(y), std::logic_error);
}

TEST_CASE("sigmoid and softplus scalar helpers") {
  CHECK(nn::sigmoid(0.0) == 0.5);
  CHECK(nn::sigmoid(30.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(nn::softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(nn::softplus(50.0) == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(nn::softplus(-50.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(nn::softplus(-50.0) > 0.0);
}
