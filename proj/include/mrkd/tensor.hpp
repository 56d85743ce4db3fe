#pragma once

#include <cstdint>
#include <vector>

namespace mrkd {

// Dense row-major tensor of doubles. Feature maps use NCHW order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // NCHW accessors
  double& at(int n, int c, int h, int w) {
    return data_[static_cast<std::size_t>(((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double at(int n, int c, int h, int w) const {
    return data_[static_cast<std::size_t>(((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double& at(int c, int h, int w) {
    return data_[static_cast<std::size_t>((static_cast<std::int64_t>(c) * shape_[1] + h) * shape_[2] + w)];
  }
  double at(int c, int h, int w) const {
    return data_[static_cast<std::size_t>((static_cast<std::int64_t>(c) * shape_[1] + h) * shape_[2] + w)];
  }
  double& at(int h, int w) { return data_[static_cast<std::size_t>(static_cast<std::int64_t>(h) * shape_[1] + w)]; }
  double at(int h, int w) const { return data_[static_cast<std::size_t>(static_cast<std::int64_t>(h) * shape_[1] + w)]; }

  void fill(double v);
  void zero() { fill(0.0); }

  Tensor& add_(const Tensor& other);          // elementwise +=
  Tensor& scale_(double s);                   // elementwise *=
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  // slice along dim 0: returns a copy of rows [begin, end)
  Tensor narrow0(int begin, int end) const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

// FNV-1a over the raw bytes; used for parameter checksums.
std::uint64_t tensor_checksum(const Tensor& t, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace mrkd
