#include "mrkd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace mrkd {

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
  std::int64_t n = 1;
  for (int d : shape_) {
    if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
    n *= d;
  }
  data_.assign(static_cast<std::size_t>(n), fill);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::add_(const Tensor& other) {
  if (!same_shape(other)) throw std::invalid_argument("Tensor::add_: shape mismatch");
  const double* src = other.data();
  double* dst = data();
  for (std::int64_t i = 0; i < numel(); ++i) dst[i] += src[i];
  return *this;
}

Tensor& Tensor::scale_(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::narrow0(int begin, int end) const {
  if (shape_.empty() || begin < 0 || end > shape_[0] || begin > end)
    throw std::invalid_argument("Tensor::narrow0: bad range");
  std::vector<int> out_shape = shape_;
  out_shape[0] = end - begin;
  Tensor out(out_shape);
  std::int64_t stride = numel() / std::max(1, shape_[0]);
  std::memcpy(out.data(), data() + begin * stride,
              static_cast<std::size_t>((end - begin) * stride) * sizeof(double));
  return out;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.numel()) * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

std::uint64_t tensor_checksum(const Tensor& t, std::uint64_t seed) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
  std::size_t n = static_cast<std::size_t>(t.numel()) * sizeof(double);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace mrkd
