#include "mrkd/nn.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mrkd::nn {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

namespace {

int conv_out_size(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// col layout: [C*k*k, OH*OW] row-major
void im2col(const double* x, int C, int H, int W, int k, int s, int p, int OH, int OW,
            double* col) {
  const std::int64_t L = static_cast<std::int64_t>(OH) * OW;
  for (int c = 0; c < C; ++c) {
    const double* xc = x + static_cast<std::int64_t>(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* dst = col + (static_cast<std::int64_t>(c) * k * k + ki * k + kj) * L;
        for (int oh = 0; oh < OH; ++oh) {
          int ih = oh * s - p + ki;
          double* row = dst + static_cast<std::int64_t>(oh) * OW;
          if (ih < 0 || ih >= H) {
            std::memset(row, 0, sizeof(double) * static_cast<std::size_t>(OW));
            continue;
          }
          const double* xrow = xc + static_cast<std::int64_t>(ih) * W;
          for (int ow = 0; ow < OW; ++ow) {
            int iw = ow * s - p + kj;
            row[ow] = (iw >= 0 && iw < W) ? xrow[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int C, int H, int W, int k, int s, int p, int OH, int OW,
                double* x) {
  const std::int64_t L = static_cast<std::int64_t>(OH) * OW;
  for (int c = 0; c < C; ++c) {
    double* xc = x + static_cast<std::int64_t>(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* src = col + (static_cast<std::int64_t>(c) * k * k + ki * k + kj) * L;
        for (int oh = 0; oh < OH; ++oh) {
          int ih = oh * s - p + ki;
          if (ih < 0 || ih >= H) continue;
          double* xrow = xc + static_cast<std::int64_t>(ih) * W;
          const double* row = src + static_cast<std::int64_t>(oh) * OW;
          for (int ow = 0; ow < OW; ++ow) {
            int iw = ow * s - p + kj;
            if (iw >= 0 && iw < W) xrow[iw] += row[ow];
          }
        }
      }
    }
  }
}

}  // namespace

void ParamGroup::zero_grad() {
  for (auto& [name, p] : params) p->grad.zero();
}

std::uint64_t ParamGroup::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, p] : params) h = tensor_checksum(p->value, h);
  return h;
}

std::string join_key(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

void he_init(Tensor& w, int fan_in, Rng& rng) {
  double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.normal() * std;
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(int in_ch, int out_ch, int ksize, int stride, int pad, bool bias, Rng& rng)
    : in_ch_(in_ch), out_ch_(out_ch), ksize_(ksize), stride_(stride), pad_(pad), has_bias_(bias) {
  weight_.value = Tensor({out_ch, in_ch * ksize * ksize});
  weight_.grad = Tensor::zeros_like(weight_.value);
  he_init(weight_.value, in_ch * ksize * ksize, rng);
  if (has_bias_) {
    bias_.value = Tensor({out_ch});
    bias_.grad = Tensor::zeros_like(bias_.value);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * ksize * ksize));
    for (int i = 0; i < out_ch; ++i) bias_.value[i] = rng.uniform(-bound, bound);
  }
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.ndim() != 4 || x.dim(1) != in_ch_)
    throw std::invalid_argument("Conv2d: expected [N," + std::to_string(in_ch_) + ",H,W] input");
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int OH = conv_out_size(H, ksize_, stride_, pad_);
  const int OW = conv_out_size(W, ksize_, stride_, pad_);
  const std::int64_t K = static_cast<std::int64_t>(in_ch_) * ksize_ * ksize_;
  const std::int64_t L = static_cast<std::int64_t>(OH) * OW;

  Tensor y({N, out_ch_, OH, OW});
  CMapRM wm(weight_.value.data(), out_ch_, K);

#pragma omp parallel
  {
    std::vector<double> col(static_cast<std::size_t>(K * L));
#pragma omp for schedule(static)
    for (int n = 0; n < N; ++n) {
      im2col(x.data() + static_cast<std::int64_t>(n) * in_ch_ * H * W, in_ch_, H, W, ksize_,
             stride_, pad_, OH, OW, col.data());
      CMapRM cm(col.data(), K, L);
      MapRM ym(y.data() + static_cast<std::int64_t>(n) * out_ch_ * L, out_ch_, L);
      ym.noalias() = wm * cm;
      if (has_bias_)
        for (int oc = 0; oc < out_ch_; ++oc) ym.row(oc).array() += bias_.value[oc];
    }
  }
  if (training_) cached_x_ = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& gy) {
  if (cached_x_.empty()) throw std::logic_error("Conv2d::backward without recorded forward");
  const Tensor& x = cached_x_;
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int OH = gy.dim(2), OW = gy.dim(3);
  const std::int64_t K = static_cast<std::int64_t>(in_ch_) * ksize_ * ksize_;
  const std::int64_t L = static_cast<std::int64_t>(OH) * OW;

  Tensor gx = Tensor::zeros_like(x);
  CMapRM wm(weight_.value.data(), out_ch_, K);

  const int T = num_threads();
  std::vector<Tensor> dw_local(static_cast<std::size_t>(T));
  std::vector<Tensor> db_local(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    dw_local[static_cast<std::size_t>(t)] = Tensor::zeros_like(weight_.value);
    if (has_bias_) db_local[static_cast<std::size_t>(t)] = Tensor::zeros_like(bias_.value);
  }

#pragma omp parallel
  {
#ifdef _OPENMP
    const int tid = omp_get_thread_num();
#else
    const int tid = 0;
#endif
    std::vector<double> col(static_cast<std::size_t>(K * L));
    std::vector<double> dcol(static_cast<std::size_t>(K * L));
    MapRM dwm(dw_local[static_cast<std::size_t>(tid)].data(), out_ch_, K);
#pragma omp for schedule(static)
    for (int n = 0; n < N; ++n) {
      im2col(x.data() + static_cast<std::int64_t>(n) * in_ch_ * H * W, in_ch_, H, W, ksize_,
             stride_, pad_, OH, OW, col.data());
      CMapRM cm(col.data(), K, L);
      CMapRM gym(gy.data() + static_cast<std::int64_t>(n) * out_ch_ * L, out_ch_, L);
      dwm.noalias() += gym * cm.transpose();
      MapRM dcm(dcol.data(), K, L);
      dcm.noalias() = wm.transpose() * gym;
      col2im_add(dcol.data(), in_ch_, H, W, ksize_, stride_, pad_, OH, OW,
                 gx.data() + static_cast<std::int64_t>(n) * in_ch_ * H * W);
      if (has_bias_) {
        Tensor& db = db_local[static_cast<std::size_t>(tid)];
        for (int oc = 0; oc < out_ch_; ++oc) db[oc] += gym.row(oc).sum();
      }
    }
  }
  // fixed-order reduction keeps gradient bytes reproducible run to run
  for (int t = 0; t < T; ++t) {
    weight_.grad.add_(dw_local[static_cast<std::size_t>(t)]);
    if (has_bias_) bias_.grad.add_(db_local[static_cast<std::size_t>(t)]);
  }
  return gx;
}

void Conv2d::collect(ParamGroup& pg, const std::string& prefix) {
  pg.add_param(join_key(prefix, "weight"), &weight_);
  if (has_bias_) pg.add_param(join_key(prefix, "bias"), &bias_);
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, double eps, double momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
  gamma_.value = Tensor({channels}, 1.0);
  gamma_.grad = Tensor({channels});
  beta_.value = Tensor({channels});
  beta_.grad = Tensor({channels});
  running_mean_ = Tensor({channels});
  running_var_ = Tensor({channels}, 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x) {
  if (x.ndim() != 4 || x.dim(1) != channels_) throw std::invalid_argument("BatchNorm2d: bad input");
  const int N = x.dim(0), C = channels_, H = x.dim(2), W = x.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  const std::int64_t M = static_cast<std::int64_t>(N) * plane;
  Tensor y = Tensor::zeros_like(x);

  if (!training_) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
      const double invstd = 1.0 / std::sqrt(running_var_[c] + eps_);
      const double g = gamma_.value[c], b = beta_.value[c], mu = running_mean_[c];
      for (int n = 0; n < N; ++n) {
        const double* xs = x.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
        double* ys = y.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) ys[i] = g * (xs[i] - mu) * invstd + b;
      }
    }
    return y;
  }

  cached_xhat_ = Tensor::zeros_like(x);
  cached_invstd_.assign(static_cast<std::size_t>(C), 0.0);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double sum = 0.0, sq = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* xs = x.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        sum += xs[i];
        sq += xs[i] * xs[i];
      }
    }
    const double mean = sum / static_cast<double>(M);
    double var = sq / static_cast<double>(M) - mean * mean;
    if (var < 0.0) var = 0.0;
    const double invstd = 1.0 / std::sqrt(var + eps_);
    cached_invstd_[static_cast<std::size_t>(c)] = invstd;
    const double g = gamma_.value[c], b = beta_.value[c];
    for (int n = 0; n < N; ++n) {
      const double* xs = x.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
      double* xh = cached_xhat_.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
      double* ys = y.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        xh[i] = (xs[i] - mean) * invstd;
        ys[i] = g * xh[i] + b;
      }
    }
    const double unbiased = M > 1 ? var * static_cast<double>(M) / static_cast<double>(M - 1) : var;
    running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mean;
    running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * unbiased;
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& gy) {
  if (cached_xhat_.empty()) throw std::logic_error("BatchNorm2d::backward without training forward");
  const int N = gy.dim(0), C = channels_, H = gy.dim(2), W = gy.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  const double M = static_cast<double>(static_cast<std::int64_t>(N) * plane);
  Tensor gx = Tensor::zeros_like(gy);

#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double sg = 0.0, sb = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* g = gy.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
      const double* xh = cached_xhat_.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        sg += g[i] * xh[i];
        sb += g[i];
      }
    }
    gamma_.grad[c] += sg;
    beta_.grad[c] += sb;
    const double coef = gamma_.value[c] * cached_invstd_[static_cast<std::size_t>(c)];
    for (int n = 0; n < N; ++n) {
      const double* g = gy.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
      const double* xh = cached_xhat_.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
      double* out = gx.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) out[i] = coef * (g[i] - sb / M - xh[i] * sg / M);
    }
  }
  return gx;
}

void BatchNorm2d::collect(ParamGroup& pg, const std::string& prefix) {
  pg.add_param(join_key(prefix, "weight"), &gamma_);
  pg.add_param(join_key(prefix, "bias"), &beta_);
  pg.add_buffer(join_key(prefix, "running_mean"), &running_mean_);
  pg.add_buffer(join_key(prefix, "running_var"), &running_var_);
}

// ---------------------------------------------------------------------------
// ReLU

Tensor ReLU::forward(const Tensor& x) {
  Tensor y = x;
  if (training_) mask_.assign(static_cast<std::size_t>(x.numel()), 0);
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    if (y[i] > 0.0) {
      if (training_) mask_[static_cast<std::size_t>(i)] = 1;
    } else {
      y[i] = 0.0;
    }
  }
  return y;
}

Tensor ReLU::backward(const Tensor& gy) {
  if (mask_.size() != static_cast<std::size_t>(gy.numel()))
    throw std::logic_error("ReLU::backward without training forward");
  Tensor gx = gy;
  for (std::int64_t i = 0; i < gx.numel(); ++i)
    if (!mask_[static_cast<std::size_t>(i)]) gx[i] = 0.0;
  return gx;
}

// ---------------------------------------------------------------------------
// MaxPool2d

Tensor MaxPool2d::forward(const Tensor& x) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = conv_out_size(H, ksize_, stride_, pad_);
  const int OW = conv_out_size(W, ksize_, stride_, pad_);
  Tensor y({N, C, OH, OW});
#pragma omp parallel for schedule(static) collapse(2)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* xs = x.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
      double* ys = y.data() + (static_cast<std::int64_t>(n) * C + c) * OH * OW;
      for (int oh = 0; oh < OH; ++oh) {
        for (int ow = 0; ow < OW; ++ow) {
          double best = -std::numeric_limits<double>::infinity();
          for (int ki = 0; ki < ksize_; ++ki) {
            int ih = oh * stride_ - pad_ + ki;
            if (ih < 0 || ih >= H) continue;
            for (int kj = 0; kj < ksize_; ++kj) {
              int iw = ow * stride_ - pad_ + kj;
              if (iw < 0 || iw >= W) continue;
              best = std::max(best, xs[static_cast<std::int64_t>(ih) * W + iw]);
            }
          }
          ys[static_cast<std::int64_t>(oh) * OW + ow] = best;
        }
      }
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// bilinear resize

namespace {
struct LerpTable {
  std::vector<int> i0, i1;
  std::vector<double> w1;  // weight of i1; i0 gets 1 - w1
};

LerpTable make_lerp(int in, int out) {
  LerpTable t;
  t.i0.resize(static_cast<std::size_t>(out));
  t.i1.resize(static_cast<std::size_t>(out));
  t.w1.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    int i1 = std::min(i0 + 1, in - 1);
    t.i0[static_cast<std::size_t>(o)] = i0;
    t.i1[static_cast<std::size_t>(o)] = i1;
    t.w1[static_cast<std::size_t>(o)] = src - static_cast<double>(i0);
  }
  return t;
}
}  // namespace

Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H == out_h && W == out_w) return x;
  LerpTable th = make_lerp(H, out_h), tw = make_lerp(W, out_w);
  Tensor y({N, C, out_h, out_w});
#pragma omp parallel for schedule(static) collapse(2)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* xs = x.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
      double* ys = y.data() + (static_cast<std::int64_t>(n) * C + c) * out_h * out_w;
      for (int oh = 0; oh < out_h; ++oh) {
        const int h0 = th.i0[static_cast<std::size_t>(oh)], h1 = th.i1[static_cast<std::size_t>(oh)];
        const double wh1 = th.w1[static_cast<std::size_t>(oh)], wh0 = 1.0 - wh1;
        for (int ow = 0; ow < out_w; ++ow) {
          const int w0 = tw.i0[static_cast<std::size_t>(ow)], w1i = tw.i1[static_cast<std::size_t>(ow)];
          const double ww1 = tw.w1[static_cast<std::size_t>(ow)], ww0 = 1.0 - ww1;
          ys[static_cast<std::int64_t>(oh) * out_w + ow] =
              wh0 * (ww0 * xs[static_cast<std::int64_t>(h0) * W + w0] +
                     ww1 * xs[static_cast<std::int64_t>(h0) * W + w1i]) +
              wh1 * (ww0 * xs[static_cast<std::int64_t>(h1) * W + w0] +
                     ww1 * xs[static_cast<std::int64_t>(h1) * W + w1i]);
        }
      }
    }
  }
  return y;
}

Tensor upsample_bilinear_backward(const Tensor& gy, int in_h, int in_w) {
  const int N = gy.dim(0), C = gy.dim(1), OH = gy.dim(2), OW = gy.dim(3);
  if (OH == in_h && OW == in_w) return gy;
  LerpTable th = make_lerp(in_h, OH), tw = make_lerp(in_w, OW);
  Tensor gx({N, C, in_h, in_w});
#pragma omp parallel for schedule(static) collapse(2)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* gs = gy.data() + (static_cast<std::int64_t>(n) * C + c) * OH * OW;
      double* out = gx.data() + (static_cast<std::int64_t>(n) * C + c) * in_h * in_w;
      for (int oh = 0; oh < OH; ++oh) {
        const int h0 = th.i0[static_cast<std::size_t>(oh)], h1 = th.i1[static_cast<std::size_t>(oh)];
        const double wh1 = th.w1[static_cast<std::size_t>(oh)], wh0 = 1.0 - wh1;
        for (int ow = 0; ow < OW; ++ow) {
          const int w0 = tw.i0[static_cast<std::size_t>(ow)], w1i = tw.i1[static_cast<std::size_t>(ow)];
          const double ww1 = tw.w1[static_cast<std::size_t>(ow)], ww0 = 1.0 - ww1;
          const double g = gs[static_cast<std::int64_t>(oh) * OW + ow];
          out[static_cast<std::int64_t>(h0) * in_w + w0] += wh0 * ww0 * g;
          out[static_cast<std::int64_t>(h0) * in_w + w1i] += wh0 * ww1 * g;
          out[static_cast<std::int64_t>(h1) * in_w + w0] += wh1 * ww0 * g;
          out[static_cast<std::int64_t>(h1) * in_w + w1i] += wh1 * ww1 * g;
        }
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// ResBlock

ResBlock::ResBlock(int in_ch, int out_ch, int stride, Rng& rng)
    : project_(in_ch != out_ch || stride != 1),
      conv1_(in_ch, out_ch, 3, stride, 1, false, rng),
      conv2_(out_ch, out_ch, 3, 1, 1, false, rng),
      bn1_(out_ch),
      bn2_(out_ch) {
  if (project_) {
    proj_ = Conv2d(in_ch, out_ch, 1, stride, 0, false, rng);
    proj_bn_ = BatchNorm2d(out_ch);
  }
}

Tensor ResBlock::forward(const Tensor& x) {
  Tensor h = relu1_.forward(bn1_.forward(conv1_.forward(x)));
  h = bn2_.forward(conv2_.forward(h));
  if (project_) {
    h.add_(proj_bn_.forward(proj_.forward(x)));
  } else {
    h.add_(x);
  }
  return relu2_.forward(h);
}

Tensor ResBlock::backward(const Tensor& gy) {
  Tensor g = relu2_.backward(gy);
  Tensor gmain = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g)))));
  if (project_) {
    gmain.add_(proj_.backward(proj_bn_.backward(g)));
  } else {
    gmain.add_(g);
  }
  return gmain;
}

void ResBlock::collect(ParamGroup& pg, const std::string& prefix) {
  conv1_.collect(pg, join_key(prefix, "conv1"));
  bn1_.collect(pg, join_key(prefix, "bn1"));
  conv2_.collect(pg, join_key(prefix, "conv2"));
  bn2_.collect(pg, join_key(prefix, "bn2"));
  if (project_) {
    proj_.collect(pg, join_key(prefix, "proj"));
    proj_bn_.collect(pg, join_key(prefix, "proj_bn"));
  }
}

void ResBlock::set_training(bool t) {
  conv1_.set_training(t);
  conv2_.set_training(t);
  bn1_.set_training(t);
  bn2_.set_training(t);
  relu1_.set_training(t);
  relu2_.set_training(t);
  if (project_) {
    proj_.set_training(t);
    proj_bn_.set_training(t);
  }
}

// ---------------------------------------------------------------------------
// Adam

void Adam::step(ParamGroup& pg) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : pg.params) {
    auto it = state_.find(name);
    if (it == state_.end()) {
      it = state_.emplace(name, std::make_pair(Tensor::zeros_like(p->value),
                                               Tensor::zeros_like(p->value)))
               .first;
    }
    Tensor& m = it->second.first;
    Tensor& v = it->second.second;
    for (std::int64_t i = 0; i < p->value.numel(); ++i) {
      const double g = p->grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p->value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace mrkd::nn
