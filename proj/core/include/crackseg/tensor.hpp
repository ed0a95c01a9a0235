#pragma once

#include <cstdint>
#include <vector>

namespace crackseg {

// Dense row-major double tensor. All model math runs in 64-bit.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape, double fill = 0.0);

  static Tensor scalar(double v);

  const std::vector<int64_t>& shape() const { return shape_; }
  int dim() const { return static_cast<int>(shape_.size()); }
  int64_t size(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Indexed access for the common ranks.
  double& at2(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * shape_[1] + c)]; }
  double at2(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * shape_[1] + c)]; }
  double& at3(int64_t c, int64_t y, int64_t x) {
    return data_[static_cast<size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }
  double at3(int64_t c, int64_t y, int64_t x) const {
    return data_[static_cast<size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }
  double& at4(int64_t n, int64_t c, int64_t y, int64_t x) {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
  }
  double at4(int64_t n, int64_t c, int64_t y, int64_t x) const {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
  }

  void fill(double v);
  Tensor reshaped(std::vector<int64_t> new_shape) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

 private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

// Binary mask, row-major uint8 {0,1}.
class Mask {
 public:
  Mask() = default;
  Mask(int64_t height, int64_t width) : h_(height), w_(width), data_(static_cast<size_t>(height * width), 0) {}

  int64_t height() const { return h_; }
  int64_t width() const { return w_; }
  uint8_t& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * w_ + c)]; }
  uint8_t at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * w_ + c)]; }
  const std::vector<uint8_t>& raw() const { return data_; }
  std::vector<uint8_t>& raw() { return data_; }
  int64_t count() const;
  bool operator==(const Mask& other) const { return h_ == other.h_ && w_ == other.w_ && data_ == other.data_; }

 private:
  int64_t h_ = 0;
  int64_t w_ = 0;
  std::vector<uint8_t> data_;
};

}  // namespace crackseg
