#include "crackseg/graph.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace crackseg::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double softplus(double z) {
  // log(1 + e^z), stable on both tails
  if (z > 0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

NodePtr make_leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

NodePtr Graph::result(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = recording_ && requires_grad;
  return n;
}

namespace {

void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int64_t oh, int64_t ow,
            Tensor& col) {
  const int64_t c_in = x.size(0), h = x.size(1), w = x.size(2);
  double* out = col.data();
  for (int64_t c = 0; c < c_in; ++c)
    for (int64_t ky = 0; ky < kh; ++ky)
      for (int64_t kx = 0; kx < kw; ++kx) {
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy * stride + ky - pad;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox * stride + kx - pad;
            *out++ = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x.at3(c, iy, ix) : 0.0;
          }
        }
      }
}

void col2im_add(const Tensor& col, int kh, int kw, int stride, int pad, int64_t oh, int64_t ow,
                Tensor& dx) {
  const int64_t c_in = dx.size(0), h = dx.size(1), w = dx.size(2);
  const double* in = col.data();
  for (int64_t c = 0; c < c_in; ++c)
    for (int64_t ky = 0; ky < kh; ++ky)
      for (int64_t kx = 0; kx < kw; ++kx) {
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy * stride + ky - pad;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox * stride + kx - pad;
            if (iy >= 0 && iy < h && ix >= 0 && ix < w) dx.at3(c, iy, ix) += *in;
            ++in;
          }
        }
      }
}

void bilinear_axis(double u, int64_t limit, int64_t& i0, int64_t& i1, double& f) {
  if (u <= 0.0 || limit == 1) {
    i0 = 0;
    i1 = 0;
    f = 0.0;
    return;
  }
  if (u >= static_cast<double>(limit - 1)) {
    i0 = limit - 1;
    i1 = limit - 1;
    f = 0.0;
    return;
  }
  i0 = static_cast<int64_t>(std::floor(u));
  i1 = i0 + 1;
  f = u - static_cast<double>(i0);
}

}  // namespace

NodePtr Graph::conv2d(const NodePtr& x, const NodePtr& w, const NodePtr& b, int stride, int pad) {
  if (x->value.dim() != 3 || w->value.dim() != 4)
    throw std::invalid_argument("conv2d: expects (C,H,W) input and (OC,C,KH,KW) weight");
  const int64_t c_in = x->value.size(0), h = x->value.size(1), wd = x->value.size(2);
  const int64_t oc = w->value.size(0), kh = w->value.size(2), kw = w->value.size(3);
  if (w->value.size(1) != c_in) throw std::invalid_argument("conv2d: channel mismatch");
  const int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const int64_t ow = (wd + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: output would be empty");

  const int64_t k = c_in * kh * kw;
  const int64_t m = oh * ow;
  auto col = std::make_shared<Tensor>(std::vector<int64_t>{k, m});
  im2col(x->value, static_cast<int>(kh), static_cast<int>(kw), stride, pad, oh, ow, *col);

  Tensor out({oc, oh, ow});
  {
    ConstMatMap wm(w->value.data(), oc, k);
    ConstMatMap cm(col->data(), k, m);
    MatMap ym(out.data(), oc, m);
    ym.noalias() = wm * cm;
  }
  if (b) {
    for (int64_t o = 0; o < oc; ++o) {
      const double bv = b->value[o];
      for (int64_t i = 0; i < m; ++i) out[o * m + i] += bv;
    }
  }

  const bool rg = x->requires_grad || w->requires_grad || (b && b->requires_grad);
  NodePtr y = result(std::move(out), rg);
  if (y->requires_grad) {
    push(y, [x, w, b, y, col, stride, pad, kh, kw, oh, ow, oc, k, m]() {
      ConstMatMap dym(y->grad.data(), oc, m);
      if (w->requires_grad) {
        w->ensure_grad();
        MatMap dwm(w->grad.data(), oc, k);
        ConstMatMap cm(col->data(), k, m);
        dwm.noalias() += dym * cm.transpose();
      }
      if (b && b->requires_grad) {
        b->ensure_grad();
        for (int64_t o = 0; o < oc; ++o) {
          double s = 0;
          for (int64_t i = 0; i < m; ++i) s += y->grad[o * m + i];
          b->grad[o] += s;
        }
      }
      if (x->requires_grad) {
        x->ensure_grad();
        Tensor dcol({k, m});
        ConstMatMap wm(w->value.data(), oc, k);
        MatMap dcm(dcol.data(), k, m);
        dcm.noalias() = wm.transpose() * dym;
        col2im_add(dcol, static_cast<int>(kh), static_cast<int>(kw), stride, pad, oh, ow, x->grad);
      }
    });
  }
  return y;
}

NodePtr Graph::linear(const NodePtr& x, const NodePtr& w, const NodePtr& b) {
  const int64_t n = x->value.size(0), k = x->value.size(1);
  const int64_t m = w->value.size(0);
  if (w->value.size(1) != k) throw std::invalid_argument("linear: inner dimension mismatch");
  Tensor out({n, m});
  {
    ConstMatMap xm(x->value.data(), n, k);
    ConstMatMap wm(w->value.data(), m, k);
    MatMap ym(out.data(), n, m);
    ym.noalias() = xm * wm.transpose();
  }
  if (b) {
    for (int64_t r = 0; r < n; ++r)
      for (int64_t c = 0; c < m; ++c) out.at2(r, c) += b->value[c];
  }
  const bool rg = x->requires_grad || w->requires_grad || (b && b->requires_grad);
  NodePtr y = result(std::move(out), rg);
  if (y->requires_grad) {
    push(y, [x, w, b, y, n, k, m]() {
      ConstMatMap dym(y->grad.data(), n, m);
      if (w->requires_grad) {
        w->ensure_grad();
        MatMap dwm(w->grad.data(), m, k);
        ConstMatMap xm(x->value.data(), n, k);
        dwm.noalias() += dym.transpose() * xm;
      }
      if (b && b->requires_grad) {
        b->ensure_grad();
        for (int64_t c = 0; c < m; ++c) {
          double s = 0;
          for (int64_t r = 0; r < n; ++r) s += y->grad.at2(r, c);
          b->grad[c] += s;
        }
      }
      if (x->requires_grad) {
        x->ensure_grad();
        MatMap dxm(x->grad.data(), n, k);
        ConstMatMap wm(w->value.data(), m, k);
        dxm.noalias() += dym * wm;
      }
    });
  }
  return y;
}

NodePtr Graph::relu(const NodePtr& x) {
  Tensor out = x->value;
  for (int64_t i = 0; i < out.numel(); ++i)
    if (out[i] < 0) out[i] = 0;
  NodePtr y = result(std::move(out), x->requires_grad);
  if (y->requires_grad) {
    push(y, [x, y]() {
      x->ensure_grad();
      for (int64_t i = 0; i < x->value.numel(); ++i)
        if (x->value[i] > 0) x->grad[i] += y->grad[i];
    });
  }
  return y;
}

NodePtr Graph::add(const NodePtr& a, const NodePtr& b) { return add_n({a, b}); }

NodePtr Graph::add_n(const std::vector<NodePtr>& xs) {
  if (xs.empty()) throw std::invalid_argument("add_n: empty input");
  Tensor out = xs[0]->value;
  bool rg = xs[0]->requires_grad;
  for (size_t i = 1; i < xs.size(); ++i) {
    if (!xs[i]->value.same_shape(out)) throw std::invalid_argument("add_n: shape mismatch");
    for (int64_t j = 0; j < out.numel(); ++j) out[j] += xs[i]->value[j];
    rg = rg || xs[i]->requires_grad;
  }
  NodePtr y = result(std::move(out), rg);
  if (y->requires_grad) {
    push(y, [xs, y]() {
      for (const auto& x : xs) {
        if (!x->requires_grad) continue;
        x->ensure_grad();
        for (int64_t j = 0; j < x->value.numel(); ++j) x->grad[j] += y->grad[j];
      }
    });
  }
  return y;
}

NodePtr Graph::elem_max(const NodePtr& a, const NodePtr& b) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("elem_max: shape mismatch");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i)
    if (b->value[i] > out[i]) out[i] = b->value[i];
  NodePtr y = result(std::move(out), a->requires_grad || b->requires_grad);
  if (y->requires_grad) {
    // ties route the gradient to the first input
    push(y, [a, b, y]() {
      if (a->requires_grad) a->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      for (int64_t i = 0; i < y->value.numel(); ++i) {
        if (a->value[i] >= b->value[i]) {
          if (a->requires_grad) a->grad[i] += y->grad[i];
        } else if (b->requires_grad) {
          b->grad[i] += y->grad[i];
        }
      }
    });
  }
  return y;
}

NodePtr Graph::mul_scalar(const NodePtr& x, double s) {
  Tensor out = x->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  NodePtr y = result(std::move(out), x->requires_grad);
  if (y->requires_grad) {
    push(y, [x, y, s]() {
      x->ensure_grad();
      for (int64_t i = 0; i < x->value.numel(); ++i) x->grad[i] += s * y->grad[i];
    });
  }
  return y;
}

NodePtr Graph::upsample2x_nearest(const NodePtr& x) { return upsample_nearest(x, 2); }

NodePtr Graph::upsample_nearest(const NodePtr& x, int factor) {
  const int64_t c = x->value.size(0), h = x->value.size(1), w = x->value.size(2);
  const int64_t f = factor;
  Tensor out({c, h * f, w * f});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h * f; ++y)
      for (int64_t xx = 0; xx < w * f; ++xx) out.at3(ch, y, xx) = x->value.at3(ch, y / f, xx / f);
  NodePtr y = result(std::move(out), x->requires_grad);
  if (y->requires_grad) {
    push(y, [x, y, c, h, w, f]() {
      x->ensure_grad();
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t yy = 0; yy < h * f; ++yy)
          for (int64_t xx = 0; xx < w * f; ++xx)
            x->grad.at3(ch, yy / f, xx / f) += y->grad.at3(ch, yy, xx);
    });
  }
  return y;
}

NodePtr Graph::spatial_softmax_gate(const NodePtr& logits) {
  if (logits->value.dim() != 3 || logits->value.size(0) != 1)
    throw std::invalid_argument("spatial_softmax_gate: expects (1,H,W) logits");
  const int64_t n = logits->value.numel();
  double zmax = logits->value[0];
  for (int64_t i = 1; i < n; ++i) zmax = std::max(zmax, logits->value[i]);
  auto soft = std::make_shared<Tensor>(logits->value.shape());
  double denom = 0;
  for (int64_t i = 0; i < n; ++i) {
    (*soft)[i] = std::exp(logits->value[i] - zmax);
    denom += (*soft)[i];
  }
  Tensor out(logits->value.shape());
  const double scale = static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i) {
    (*soft)[i] /= denom;
    out[i] = scale * (*soft)[i];
  }
  NodePtr y = result(std::move(out), logits->requires_grad);
  if (y->requires_grad) {
    push(y, [logits, y, soft, n, scale]() {
      logits->ensure_grad();
      double inner = 0;
      for (int64_t i = 0; i < n; ++i) inner += y->grad[i] * (*soft)[i];
      for (int64_t i = 0; i < n; ++i)
        logits->grad[i] += scale * (*soft)[i] * (y->grad[i] - inner);
    });
  }
  return y;
}

NodePtr Graph::scale_by_gate(const NodePtr& feature, const NodePtr& gate) {
  const int64_t c = feature->value.size(0), h = feature->value.size(1), w = feature->value.size(2);
  if (gate->value.size(0) != 1 || gate->value.size(1) != h || gate->value.size(2) != w)
    throw std::invalid_argument("scale_by_gate: gate shape mismatch");
  Tensor out(feature->value.shape());
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        out.at3(ch, y, x) = feature->value.at3(ch, y, x) * gate->value.at3(0, y, x);
  NodePtr y = result(std::move(out), feature->requires_grad || gate->requires_grad);
  if (y->requires_grad) {
    push(y, [feature, gate, y, c, h, w]() {
      if (feature->requires_grad) {
        feature->ensure_grad();
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t yy = 0; yy < h; ++yy)
            for (int64_t x = 0; x < w; ++x)
              feature->grad.at3(ch, yy, x) += y->grad.at3(ch, yy, x) * gate->value.at3(0, yy, x);
      }
      if (gate->requires_grad) {
        gate->ensure_grad();
        for (int64_t yy = 0; yy < h; ++yy)
          for (int64_t x = 0; x < w; ++x) {
            double s = 0;
            for (int64_t ch = 0; ch < c; ++ch)
              s += y->grad.at3(ch, yy, x) * feature->value.at3(ch, yy, x);
            gate->grad.at3(0, yy, x) += s;
          }
      }
    });
  }
  return y;
}

NodePtr Graph::roi_align(const NodePtr& feature, const Box& roi, int output_size,
                         int samples_per_bin) {
  if (roi.degenerate()) throw std::invalid_argument("roi_align: degenerate roi");
  if (output_size <= 0 || samples_per_bin <= 0)
    throw std::invalid_argument("roi_align: output_size and samples_per_bin must be positive");
  const int64_t c = feature->value.size(0), h = feature->value.size(1), w = feature->value.size(2);
  const int k = output_size;
  const int n = samples_per_bin;
  const double bw = roi.width() / k;
  const double bh = roi.height() / k;
  const double inv = 1.0 / (n * n);

  Tensor out({c, k, k});
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      for (int sy = 0; sy < n; ++sy)
        for (int sx = 0; sx < n; ++sx) {
          const double x = roi.x1 + (j + (sx + 0.5) / n) * bw;
          const double y = roi.y1 + (i + (sy + 0.5) / n) * bh;
          int64_t x0, x1i, y0, y1i;
          double fx, fy;
          bilinear_axis(x - 0.5, w, x0, x1i, fx);
          bilinear_axis(y - 0.5, h, y0, y1i, fy);
          for (int64_t ch = 0; ch < c; ++ch) {
            const double v = (1 - fy) * ((1 - fx) * feature->value.at3(ch, y0, x0) +
                                         fx * feature->value.at3(ch, y0, x1i)) +
                             fy * ((1 - fx) * feature->value.at3(ch, y1i, x0) +
                                   fx * feature->value.at3(ch, y1i, x1i));
            out.at3(ch, i, j) += v * inv;
          }
        }
    }
  NodePtr y = result(std::move(out), feature->requires_grad);
  if (y->requires_grad) {
    const Box roi_copy = roi;
    push(y, [feature, y, roi_copy, k, n, bw, bh, inv, c, h, w]() {
      feature->ensure_grad();
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          for (int sy = 0; sy < n; ++sy)
            for (int sx = 0; sx < n; ++sx) {
              const double x = roi_copy.x1 + (j + (sx + 0.5) / n) * bw;
              const double yy = roi_copy.y1 + (i + (sy + 0.5) / n) * bh;
              int64_t x0, x1i, y0, y1i;
              double fx, fy;
              bilinear_axis(x - 0.5, w, x0, x1i, fx);
              bilinear_axis(yy - 0.5, h, y0, y1i, fy);
              for (int64_t ch = 0; ch < c; ++ch) {
                const double g = y->grad.at3(ch, i, j) * inv;
                feature->grad.at3(ch, y0, x0) += g * (1 - fy) * (1 - fx);
                feature->grad.at3(ch, y0, x1i) += g * (1 - fy) * fx;
                feature->grad.at3(ch, y1i, x0) += g * fy * (1 - fx);
                feature->grad.at3(ch, y1i, x1i) += g * fy * fx;
              }
            }
        }
    });
  }
  return y;
}

NodePtr Graph::stack_flatten(const std::vector<NodePtr>& xs) {
  if (xs.empty()) throw std::invalid_argument("stack_flatten: empty input");
  const int64_t per = xs[0]->value.numel();
  bool rg = false;
  for (const auto& x : xs) {
    if (x->value.numel() != per) throw std::invalid_argument("stack_flatten: size mismatch");
    rg = rg || x->requires_grad;
  }
  Tensor out({static_cast<int64_t>(xs.size()), per});
  for (size_t r = 0; r < xs.size(); ++r)
    for (int64_t i = 0; i < per; ++i) out[static_cast<int64_t>(r) * per + i] = xs[r]->value[i];
  NodePtr y = result(std::move(out), rg);
  if (y->requires_grad) {
    push(y, [xs, y, per]() {
      for (size_t r = 0; r < xs.size(); ++r) {
        if (!xs[r]->requires_grad) continue;
        xs[r]->ensure_grad();
        for (int64_t i = 0; i < per; ++i)
          xs[r]->grad[i] += y->grad[static_cast<int64_t>(r) * per + i];
      }
    });
  }
  return y;
}

NodePtr Graph::gather(const NodePtr& x, std::vector<int64_t> indices) {
  Tensor out({static_cast<int64_t>(indices.size())});
  for (size_t i = 0; i < indices.size(); ++i) out[static_cast<int64_t>(i)] = x->value[indices[i]];
  NodePtr y = result(std::move(out), x->requires_grad);
  if (y->requires_grad) {
    auto idx = std::make_shared<std::vector<int64_t>>(std::move(indices));
    push(y, [x, y, idx]() {
      x->ensure_grad();
      for (size_t i = 0; i < idx->size(); ++i)
        x->grad[(*idx)[i]] += y->grad[static_cast<int64_t>(i)];
    });
  }
  return y;
}

NodePtr Graph::sum(const NodePtr& x) {
  double s = 0;
  for (int64_t i = 0; i < x->value.numel(); ++i) s += x->value[i];
  NodePtr y = result(Tensor::scalar(s), x->requires_grad);
  if (y->requires_grad) {
    push(y, [x, y]() {
      x->ensure_grad();
      for (int64_t i = 0; i < x->value.numel(); ++i) x->grad[i] += y->grad[0];
    });
  }
  return y;
}

NodePtr Graph::mean(const NodePtr& x) {
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x->value.numel()));
}

NodePtr Graph::bce_with_logits_mean(const NodePtr& logits, Tensor targets) {
  if (targets.numel() != logits->value.numel())
    throw std::invalid_argument("bce_with_logits_mean: target size mismatch");
  const int64_t n = logits->value.numel();
  double loss = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double z = logits->value[i];
    const double t = targets[i];
    if (t != 0.0 && t != 1.0) throw std::invalid_argument("bce_with_logits_mean: target not binary");
    loss += softplus(z) - t * z;
  }
  loss /= static_cast<double>(n);
  NodePtr y = result(Tensor::scalar(loss), logits->requires_grad);
  if (y->requires_grad) {
    auto tgt = std::make_shared<Tensor>(std::move(targets));
    push(y, [logits, y, tgt, n]() {
      logits->ensure_grad();
      const double g = y->grad[0] / static_cast<double>(n);
      for (int64_t i = 0; i < n; ++i)
        logits->grad[i] += g * (sigmoid(logits->value[i]) - (*tgt)[i]);
    });
  }
  return y;
}

NodePtr Graph::smooth_l1_sum(const NodePtr& pred, Tensor target) {
  if (target.numel() != pred->value.numel())
    throw std::invalid_argument("smooth_l1_sum: target size mismatch");
  const int64_t n = pred->value.numel();
  double loss = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = pred->value[i] - target[i];
    loss += std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
  }
  NodePtr y = result(Tensor::scalar(loss), pred->requires_grad);
  if (y->requires_grad) {
    auto tgt = std::make_shared<Tensor>(std::move(target));
    push(y, [pred, y, tgt, n]() {
      pred->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const double d = pred->value[i] - (*tgt)[i];
        const double dd = std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0);
        pred->grad[i] += y->grad[0] * dd;
      }
    });
  }
  return y;
}

void Graph::backward(const NodePtr& root) {
  if (!recording_) throw std::logic_error("backward on a non-recording graph");
  root->ensure_grad();
  root->grad.fill(1.0);
  // Entries whose output never received a gradient belong to branches that do
  // not feed the root; their closures would read an unallocated buffer.
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it)
    if (it->out->grad.same_shape(it->out->value)) it->fn();
}

}  // namespace crackseg::nn
