#include "crackseg/tensor.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace crackseg {

Tensor::Tensor(std::vector<int64_t> shape, double fill) : shape_(std::move(shape)) {
  int64_t n = 1;
  for (int64_t s : shape_) {
    if (s < 0) throw std::invalid_argument("tensor dimension must be non-negative");
    n *= s;
  }
  data_.assign(static_cast<size_t>(n), fill);
}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t[0] = v;
  return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<int64_t> new_shape) const {
  int64_t n = 1;
  for (int64_t s : new_shape) n *= s;
  if (n != numel()) throw std::invalid_argument("reshape element count mismatch");
  Tensor out;
  out.shape_ = std::move(new_shape);
  out.data_ = data_;
  return out;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

int64_t Mask::count() const {
  int64_t n = 0;
  for (uint8_t v : data_) n += v;
  return n;
}

}  // namespace crackseg
