#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mrkd/nn.hpp"

namespace mrkd {

// Ordered multi-scale feature maps, finest level first.
using FeaturePyramid = std::vector<Tensor>;

enum class Backbone { resnet18, resnet50, wide_resnet50 };

Backbone backbone_from_string(const std::string& s);
std::string backbone_to_string(Backbone b);

// Frozen feature extractor. Runs the stem plus residual stages 1..tap_hi of
// the selected resnet and emits the outputs of stages tap_lo..tap_hi. All
// normalization layers stay in inference mode, so the forward pass is a
// deterministic function of the input.
//
// Weights come either from a seeded deterministic initialization or from a
// weight archive exported with tools/export_teacher.py.
class Teacher {
 public:
  Teacher(Backbone arch, std::uint64_t seed, int tap_lo = 1, int tap_hi = 3);

  FeaturePyramid forward(const Tensor& x);

  int num_levels() const { return tap_hi_ - tap_lo_ + 1; }
  const std::vector<int>& level_channels() const { return level_channels_; }
  Backbone arch() const { return arch_; }
  std::uint64_t seed() const { return seed_; }
  int tap_lo() const { return tap_lo_; }
  int tap_hi() const { return tap_hi_; }
  const std::string& weights_source() const { return weights_source_; }

  void collect(nn::ParamGroup& pg, const std::string& prefix);
  std::uint64_t checksum();

  // Replaces the random initialization with weights from an exported archive.
  void load_weights(const std::string& path);

 private:
  struct Block {
    virtual ~Block() = default;
    virtual Tensor forward(const Tensor& x) = 0;
    virtual void collect(nn::ParamGroup& pg, const std::string& prefix) = 0;
  };
  struct BasicBlock;
  struct BottleneckBlock;

  Backbone arch_;
  std::uint64_t seed_;
  int tap_lo_, tap_hi_;
  std::vector<int> level_channels_;
  std::string weights_source_;

  nn::Conv2d stem_conv_;
  nn::BatchNorm2d stem_bn_;
  nn::ReLU relu_;
  std::vector<std::vector<std::unique_ptr<Block>>> layers_;
};

}  // namespace mrkd
