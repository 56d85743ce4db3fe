#pragma once

#include <string>
#include <vector>

#include "mrkd/backbone.hpp"

namespace mrkd {

// Stabilizer for every cosine denominator in the loss and the score maps.
constexpr double kCosineEpsilon = 1e-8;

// Per-position keep/drop mask: a position is dropped (0) when a uniform
// draw falls below mask_ratio, kept (1) otherwise. Returns [H,W] of {0,1}.
Tensor make_mask(int h, int w, double mask_ratio, Rng& rng);

// Multiplies one [H,W] mask per sample into x [N,C,H,W], broadcasting over
// channels. Also the exact backward of itself.
Tensor apply_masks(const Tensor& x, const std::vector<Tensor>& masks);

// Two channel-preserving 3x3 convolutions around a ReLU; restores feature
// maps whose spatial positions were zeroed out.
class GenerationModule {
 public:
  GenerationModule() = default;
  GenerationModule(int channels, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect(nn::ParamGroup& pg, const std::string& prefix);
  void set_training(bool t);

 private:
  nn::Conv2d conv1_, conv2_;
  nn::ReLU relu_;
};

Tensor restore(const Tensor& level, const std::vector<Tensor>& masks, GenerationModule& gen);

// Compresses a feature pyramid into one embedding at the coarsest level's
// spatial size: each finer level is brought down by stride-2 conv stages,
// the levels are concatenated along channels, and a two-block residual
// stack maps the concatenation to the coarsest level's channel width.
class Bottleneck {
 public:
  Bottleneck() = default;
  Bottleneck(const std::vector<int>& level_channels, Rng& rng);

  Tensor forward(const FeaturePyramid& pyr);
  // Accumulates parameter gradients; input gradients stop here because the
  // feeding extractor is frozen.
  void backward(const Tensor& gy);
  void collect(nn::ParamGroup& pg, const std::string& prefix);
  void set_training(bool t);

  int out_channels() const { return out_ch_; }

 private:
  struct DownStage {
    nn::Conv2d conv;
    nn::BatchNorm2d bn;
    nn::ReLU relu;
  };
  std::vector<int> level_channels_;
  int out_ch_ = 0;
  std::vector<std::vector<DownStage>> down_;  // per level, finest first
  nn::ResBlock fuse1_, fuse2_;
};

// Mirror of the extractor run coarse to fine: one residual block per level
// with 2x bilinear upsampling in between. Emits levels in extractor order
// (finest first); each emitted level is also the input of the next stage.
class StudentDecoder {
 public:
  StudentDecoder() = default;
  StudentDecoder(const std::vector<int>& level_channels, Rng& rng);

  FeaturePyramid forward(const Tensor& embedding);
  // level_grads aligned with the emitted pyramid; returns the gradient at
  // the embedding.
  Tensor backward(const FeaturePyramid& level_grads);
  void collect(nn::ParamGroup& pg, const std::string& prefix);
  void set_training(bool t);

 private:
  std::vector<nn::ResBlock> blocks_;        // index l restores level l
  std::vector<std::pair<int, int>> sizes_;  // spatial size per level, recorded in forward
};

// Batch-mean of sum_l (1 - cos(vec(target_l), vec(restored_l))), cosine over
// each sample's whole flattened level. Bounded by [0, 2N]. When grads is
// non-null it receives d(loss)/d(restored_l) per level.
double distill_loss(const FeaturePyramid& restored, const FeaturePyramid& target,
                    FeaturePyramid* grads = nullptr);

struct RestorePass {
  FeaturePyramid teacher;
  FeaturePyramid restored;
  std::vector<std::vector<Tensor>> masks;  // [level][sample]
};

// Frozen extractor plus the three trainable parts.
class MrkdModel {
 public:
  MrkdModel(Backbone arch, std::uint64_t teacher_seed, std::uint64_t init_seed, int tap_lo = 1,
            int tap_hi = 3);

  Teacher& teacher() { return teacher_; }
  Bottleneck& bottleneck() { return bottleneck_; }
  StudentDecoder& student() { return student_; }
  GenerationModule& gen(int level) { return gens_[static_cast<std::size_t>(level)]; }
  int num_levels() const { return teacher_.num_levels(); }

  void set_training(bool t);
  void collect_trainables(nn::ParamGroup& pg);
  void collect_all(nn::ParamGroup& pg);  // trainables plus frozen extractor

  // Inference-mode pass: extract, compress, decode, mask, restore. Masks are
  // drawn per level then per sample from flm_rng.
  RestorePass forward_restore(const Tensor& images, double mask_ratio, Rng& flm_rng);

 private:
  Teacher teacher_;
  Bottleneck bottleneck_;
  StudentDecoder student_;
  std::vector<GenerationModule> gens_;
};

}  // namespace mrkd
