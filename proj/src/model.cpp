#include "mrkd/model.hpp"

#include <cmath>
#include <stdexcept>

namespace mrkd {

Tensor make_mask(int h, int w, double mask_ratio, Rng& rng) {
  if (mask_ratio < 0.0 || mask_ratio > 1.0)
    throw std::invalid_argument("make_mask: mask_ratio must be in [0,1]");
  Tensor m({h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) m.at(i, j) = rng.uniform() < mask_ratio ? 0.0 : 1.0;
  return m;
}

Tensor apply_masks(const Tensor& x, const std::vector<Tensor>& masks) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (static_cast<int>(masks.size()) != N)
    throw std::invalid_argument("apply_masks: one mask per sample required");
  Tensor y = x;
  for (int n = 0; n < N; ++n) {
    const Tensor& m = masks[static_cast<std::size_t>(n)];
    if (m.dim(0) != H || m.dim(1) != W)
      throw std::invalid_argument("apply_masks: mask size does not match feature size");
    for (int c = 0; c < C; ++c) {
      double* ys = y.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
      const double* ms = m.data();
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) ys[i] *= ms[i];
    }
  }
  return y;
}

GenerationModule::GenerationModule(int channels, Rng& rng)
    : conv1_(channels, channels, 3, 1, 1, true, rng), conv2_(channels, channels, 3, 1, 1, true, rng) {}

Tensor GenerationModule::forward(const Tensor& x) {
  return conv2_.forward(relu_.forward(conv1_.forward(x)));
}

Tensor GenerationModule::backward(const Tensor& gy) {
  return conv1_.backward(relu_.backward(conv2_.backward(gy)));
}

void GenerationModule::collect(nn::ParamGroup& pg, const std::string& prefix) {
  conv1_.collect(pg, nn::join_key(prefix, "conv1"));
  conv2_.collect(pg, nn::join_key(prefix, "conv2"));
}

void GenerationModule::set_training(bool t) {
  conv1_.set_training(t);
  conv2_.set_training(t);
  relu_.set_training(t);
}

Tensor restore(const Tensor& level, const std::vector<Tensor>& masks, GenerationModule& gen) {
  return gen.forward(apply_masks(level, masks));
}

// ---------------------------------------------------------------------------
// Bottleneck

namespace {
Tensor concat_channels(const std::vector<Tensor>& parts) {
  const int N = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
  int ctotal = 0;
  for (const auto& p : parts) ctotal += p.dim(1);
  Tensor out({N, ctotal, H, W});
  for (int n = 0; n < N; ++n) {
    std::int64_t coff = 0;
    for (const auto& p : parts) {
      const int C = p.dim(1);
      const double* src = p.data() + static_cast<std::int64_t>(n) * C * H * W;
      double* dst = out.data() + (static_cast<std::int64_t>(n) * ctotal + coff) * H * W;
      std::copy(src, src + static_cast<std::int64_t>(C) * H * W, dst);
      coff += C;
    }
  }
  return out;
}

std::vector<Tensor> split_channels(const Tensor& x, const std::vector<int>& channel_counts) {
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int ctotal = x.dim(1);
  std::vector<Tensor> parts;
  std::int64_t coff = 0;
  for (int C : channel_counts) {
    Tensor p({N, C, H, W});
    for (int n = 0; n < N; ++n) {
      const double* src = x.data() + (static_cast<std::int64_t>(n) * ctotal + coff) * H * W;
      std::copy(src, src + static_cast<std::int64_t>(C) * H * W,
                p.data() + static_cast<std::int64_t>(n) * C * H * W);
    }
    parts.push_back(std::move(p));
    coff += C;
  }
  return parts;
}
}  // namespace

Bottleneck::Bottleneck(const std::vector<int>& level_channels, Rng& rng)
    : level_channels_(level_channels), out_ch_(level_channels.back()) {
  const int n = static_cast<int>(level_channels.size());
  int ctotal = 0;
  for (int l = 0; l < n; ++l) {
    std::vector<DownStage> stages;
    const int c = level_channels[static_cast<std::size_t>(l)];
    for (int s = 0; s < n - 1 - l; ++s) {
      DownStage st;
      st.conv = nn::Conv2d(c, c, 3, 2, 1, false, rng);
      st.bn = nn::BatchNorm2d(c);
      stages.push_back(std::move(st));
    }
    down_.push_back(std::move(stages));
    ctotal += c;
  }
  fuse1_ = nn::ResBlock(ctotal, out_ch_, 1, rng);
  fuse2_ = nn::ResBlock(out_ch_, out_ch_, 1, rng);
}

Tensor Bottleneck::forward(const FeaturePyramid& pyr) {
  if (pyr.size() != level_channels_.size())
    throw std::invalid_argument("Bottleneck: pyramid level count mismatch");
  std::vector<Tensor> reduced;
  for (std::size_t l = 0; l < pyr.size(); ++l) {
    Tensor h = pyr[l];
    if (h.dim(1) != level_channels_[l])
      throw std::invalid_argument("Bottleneck: channel mismatch at level " + std::to_string(l));
    for (auto& st : down_[l]) h = st.relu.forward(st.bn.forward(st.conv.forward(h)));
    reduced.push_back(std::move(h));
  }
  return fuse2_.forward(fuse1_.forward(concat_channels(reduced)));
}

void Bottleneck::backward(const Tensor& gy) {
  Tensor gcat = fuse1_.backward(fuse2_.backward(gy));
  std::vector<Tensor> parts = split_channels(gcat, level_channels_);
  for (std::size_t l = 0; l < parts.size(); ++l) {
    Tensor g = std::move(parts[l]);
    auto& stages = down_[l];
    for (auto it = stages.rbegin(); it != stages.rend(); ++it)
      g = it->conv.backward(it->bn.backward(it->relu.backward(g)));
  }
}

void Bottleneck::collect(nn::ParamGroup& pg, const std::string& prefix) {
  for (std::size_t l = 0; l < down_.size(); ++l) {
    for (std::size_t s = 0; s < down_[l].size(); ++s) {
      const std::string base =
          nn::join_key(prefix, "down" + std::to_string(l) + "." + std::to_string(s));
      down_[l][s].conv.collect(pg, base + ".conv");
      down_[l][s].bn.collect(pg, base + ".bn");
    }
  }
  fuse1_.collect(pg, nn::join_key(prefix, "fuse1"));
  fuse2_.collect(pg, nn::join_key(prefix, "fuse2"));
}

void Bottleneck::set_training(bool t) {
  for (auto& stages : down_) {
    for (auto& st : stages) {
      st.conv.set_training(t);
      st.bn.set_training(t);
      st.relu.set_training(t);
    }
  }
  fuse1_.set_training(t);
  fuse2_.set_training(t);
}

// ---------------------------------------------------------------------------
// StudentDecoder

StudentDecoder::StudentDecoder(const std::vector<int>& level_channels, Rng& rng) {
  const int n = static_cast<int>(level_channels.size());
  blocks_.resize(static_cast<std::size_t>(n));
  for (int l = 0; l < n; ++l) {
    const int in_ch = (l == n - 1) ? level_channels.back() : level_channels[static_cast<std::size_t>(l + 1)];
    blocks_[static_cast<std::size_t>(l)] =
        nn::ResBlock(in_ch, level_channels[static_cast<std::size_t>(l)], 1, rng);
  }
}

FeaturePyramid StudentDecoder::forward(const Tensor& embedding) {
  const int n = static_cast<int>(blocks_.size());
  FeaturePyramid pyr(static_cast<std::size_t>(n));
  sizes_.assign(static_cast<std::size_t>(n), {0, 0});
  pyr[static_cast<std::size_t>(n - 1)] = blocks_[static_cast<std::size_t>(n - 1)].forward(embedding);
  sizes_[static_cast<std::size_t>(n - 1)] = {pyr[static_cast<std::size_t>(n - 1)].dim(2),
                                             pyr[static_cast<std::size_t>(n - 1)].dim(3)};
  for (int l = n - 2; l >= 0; --l) {
    const Tensor& prev = pyr[static_cast<std::size_t>(l + 1)];
    Tensor up = nn::upsample_bilinear(prev, prev.dim(2) * 2, prev.dim(3) * 2);
    pyr[static_cast<std::size_t>(l)] = blocks_[static_cast<std::size_t>(l)].forward(up);
    sizes_[static_cast<std::size_t>(l)] = {pyr[static_cast<std::size_t>(l)].dim(2),
                                           pyr[static_cast<std::size_t>(l)].dim(3)};
  }
  return pyr;
}

Tensor StudentDecoder::backward(const FeaturePyramid& level_grads) {
  const int n = static_cast<int>(blocks_.size());
  if (static_cast<int>(level_grads.size()) != n)
    throw std::invalid_argument("StudentDecoder::backward: grad count mismatch");
  Tensor acc = level_grads[0];
  for (int l = 0; l < n - 1; ++l) {
    Tensor gin = blocks_[static_cast<std::size_t>(l)].backward(acc);
    Tensor gup = nn::upsample_bilinear_backward(gin, sizes_[static_cast<std::size_t>(l + 1)].first,
                                                sizes_[static_cast<std::size_t>(l + 1)].second);
    acc = level_grads[static_cast<std::size_t>(l + 1)];
    acc.add_(gup);
  }
  return blocks_[static_cast<std::size_t>(n - 1)].backward(acc);
}

void StudentDecoder::collect(nn::ParamGroup& pg, const std::string& prefix) {
  for (std::size_t l = 0; l < blocks_.size(); ++l)
    blocks_[l].collect(pg, nn::join_key(prefix, "block" + std::to_string(l)));
}

void StudentDecoder::set_training(bool t) {
  for (auto& b : blocks_) b.set_training(t);
}

// ---------------------------------------------------------------------------
// loss

double distill_loss(const FeaturePyramid& restored, const FeaturePyramid& target,
                    FeaturePyramid* grads) {
  if (restored.size() != target.size())
    throw std::invalid_argument("distill_loss: level count mismatch");
  if (grads) {
    grads->clear();
    for (const auto& r : restored) grads->push_back(Tensor::zeros_like(r));
  }
  const int batch = restored.empty() ? 0 : restored[0].dim(0);
  if (batch == 0) throw std::invalid_argument("distill_loss: empty batch");

  double loss = 0.0;
  for (std::size_t l = 0; l < restored.size(); ++l) {
    const Tensor& g = restored[l];
    const Tensor& t = target[l];
    if (!g.same_shape(t)) throw std::invalid_argument("distill_loss: shape mismatch at level " + std::to_string(l));
    const std::int64_t len = g.numel() / batch;
    for (int n = 0; n < batch; ++n) {
      const double* gv = g.data() + n * len;
      const double* tv = t.data() + n * len;
      double dot = 0.0, g2 = 0.0, t2 = 0.0;
      for (std::int64_t i = 0; i < len; ++i) {
        dot += gv[i] * tv[i];
        g2 += gv[i] * gv[i];
        t2 += tv[i] * tv[i];
      }
      const double ng = std::sqrt(g2), nt = std::sqrt(t2);
      const double denom = nt * ng + kCosineEpsilon;
      loss += 1.0 - dot / denom;
      if (grads) {
        // d/dg [ -dot/denom ] = -t/denom + dot * nt * g / (ng * denom^2)
        double* out = (*grads)[l].data() + n * len;
        const double a = -1.0 / denom;
        const double b = ng > 0.0 ? dot * nt / (ng * denom * denom) : 0.0;
        for (std::int64_t i = 0; i < len; ++i)
          out[i] = (a * tv[i] + b * gv[i]) / static_cast<double>(batch);
      }
    }
  }
  return loss / static_cast<double>(batch);
}

// ---------------------------------------------------------------------------
// MrkdModel

MrkdModel::MrkdModel(Backbone arch, std::uint64_t teacher_seed, std::uint64_t init_seed,
                     int tap_lo, int tap_hi)
    : teacher_(arch, teacher_seed, tap_lo, tap_hi) {
  Rng rng = Rng(init_seed).fork("init");
  bottleneck_ = Bottleneck(teacher_.level_channels(), rng);
  student_ = StudentDecoder(teacher_.level_channels(), rng);
  for (int c : teacher_.level_channels()) gens_.emplace_back(c, rng);
}

void MrkdModel::set_training(bool t) {
  bottleneck_.set_training(t);
  student_.set_training(t);
  for (auto& g : gens_) g.set_training(t);
}

void MrkdModel::collect_trainables(nn::ParamGroup& pg) {
  bottleneck_.collect(pg, "bottleneck");
  student_.collect(pg, "student");
  for (std::size_t l = 0; l < gens_.size(); ++l)
    gens_[l].collect(pg, "gen" + std::to_string(l));
}

void MrkdModel::collect_all(nn::ParamGroup& pg) {
  collect_trainables(pg);
  teacher_.collect(pg, "teacher");
}

RestorePass MrkdModel::forward_restore(const Tensor& images, double mask_ratio, Rng& flm_rng) {
  RestorePass out;
  out.teacher = teacher_.forward(images);
  Tensor emb = bottleneck_.forward(out.teacher);
  FeaturePyramid decoded = student_.forward(emb);
  const int batch = images.dim(0);
  out.masks.resize(decoded.size());
  out.restored.resize(decoded.size());
  for (std::size_t l = 0; l < decoded.size(); ++l) {
    for (int n = 0; n < batch; ++n)
      out.masks[l].push_back(make_mask(decoded[l].dim(2), decoded[l].dim(3), mask_ratio, flm_rng));
    out.restored[l] = restore(decoded[l], out.masks[l], gens_[l]);
  }
  return out;
}

}  // namespace mrkd
