#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mrkd/rng.hpp"
#include "mrkd/tensor.hpp"

namespace mrkd::nn {

struct Param {
  Tensor value;
  Tensor grad;
};

// Named views over a module tree: trainable parameters and persistent
// buffers (batch-norm running statistics). std::map keeps iteration order
// stable, which the optimizer and checkpoint format rely on.
struct ParamGroup {
  std::map<std::string, Param*> params;
  std::map<std::string, Tensor*> buffers;

  void add_param(const std::string& name, Param* p) { params[name] = p; }
  void add_buffer(const std::string& name, Tensor* t) { buffers[name] = t; }
  void zero_grad();
  std::uint64_t checksum() const;  // over parameter values, name order
};

std::string join_key(const std::string& prefix, const std::string& name);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int ksize, int stride, int pad, bool bias, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect(ParamGroup& pg, const std::string& prefix);
  void set_training(bool t) { training_ = t; }

  int out_channels() const { return out_ch_; }

 private:
  int in_ch_ = 0, out_ch_ = 0, ksize_ = 0, stride_ = 1, pad_ = 0;
  bool has_bias_ = false;
  Param weight_;  // [out_ch, in_ch*k*k]
  Param bias_;    // [out_ch]
  bool training_ = false;
  Tensor cached_x_;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels, double eps = 1e-5, double momentum = 0.1);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect(ParamGroup& pg, const std::string& prefix);
  void set_training(bool t) { training_ = t; }

 private:
  int channels_ = 0;
  double eps_ = 1e-5, momentum_ = 0.1;
  Param gamma_, beta_;
  Tensor running_mean_, running_var_;
  bool training_ = false;
  Tensor cached_xhat_;
  std::vector<double> cached_invstd_;
};

class ReLU {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void set_training(bool t) { training_ = t; }

 private:
  bool training_ = false;
  std::vector<unsigned char> mask_;
};

// 3x3 stride-2 pad-1 max pooling would not cover the resnet stem; this is
// the general kernel/stride/pad version. Ties resolve to the first scan hit.
class MaxPool2d {
 public:
  MaxPool2d(int ksize, int stride, int pad) : ksize_(ksize), stride_(stride), pad_(pad) {}
  Tensor forward(const Tensor& x);

 private:
  int ksize_, stride_, pad_;
};

// Bilinear interpolation with half-pixel centers (align_corners = false),
// source coordinates clamped at the edges. in == out is an exact identity.
Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w);
Tensor upsample_bilinear_backward(const Tensor& gy, int in_h, int in_w);

// conv3x3 -> BN -> ReLU -> conv3x3 -> BN plus a projection shortcut when
// the channel count or stride changes; final ReLU.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(int in_ch, int out_ch, int stride, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect(ParamGroup& pg, const std::string& prefix);
  void set_training(bool t);

 private:
  bool project_ = false;
  Conv2d conv1_, conv2_, proj_;
  BatchNorm2d bn1_, bn2_, proj_bn_;
  ReLU relu1_, relu2_;
};

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamGroup& pg);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> state_;  // m, v
};

// He-normal initialization for a conv weight laid out [out_ch, in_ch*k*k].
void he_init(Tensor& w, int fan_in, Rng& rng);

}  // namespace mrkd::nn
