#include "mrkd/backbone.hpp"

#include <stdexcept>

#include "mrkd/checkpoint.hpp"
#include "mrkd/errors.hpp"

namespace mrkd {

Backbone backbone_from_string(const std::string& s) {
  if (s == "resnet18") return Backbone::resnet18;
  if (s == "resnet50") return Backbone::resnet50;
  if (s == "wide_resnet50") return Backbone::wide_resnet50;
  throw ConfigError("unknown backbone: " + s);
}

std::string backbone_to_string(Backbone b) {
  switch (b) {
    case Backbone::resnet18: return "resnet18";
    case Backbone::resnet50: return "resnet50";
    case Backbone::wide_resnet50: return "wide_resnet50";
  }
  return "?";
}

struct Teacher::BasicBlock : Teacher::Block {
  nn::ResBlock block;
  BasicBlock(int in_ch, int out_ch, int stride, Rng& rng) : block(in_ch, out_ch, stride, rng) {}
  Tensor forward(const Tensor& x) override { return block.forward(x); }
  void collect(nn::ParamGroup& pg, const std::string& prefix) override { block.collect(pg, prefix); }
};

// conv1x1 -> conv3x3(stride) -> conv1x1(expansion), 1x1 projection shortcut
struct Teacher::BottleneckBlock : Teacher::Block {
  bool project;
  nn::Conv2d conv1, conv2, conv3, down;
  nn::BatchNorm2d bn1, bn2, bn3, down_bn;
  nn::ReLU relu;

  BottleneckBlock(int in_ch, int width, int out_ch, int stride, Rng& rng)
      : project(in_ch != out_ch || stride != 1),
        conv1(in_ch, width, 1, 1, 0, false, rng),
        conv2(width, width, 3, stride, 1, false, rng),
        conv3(width, out_ch, 1, 1, 0, false, rng),
        bn1(width),
        bn2(width),
        bn3(out_ch) {
    if (project) {
      down = nn::Conv2d(in_ch, out_ch, 1, stride, 0, false, rng);
      down_bn = nn::BatchNorm2d(out_ch);
    }
  }

  Tensor forward(const Tensor& x) override {
    Tensor h = relu.forward(bn1.forward(conv1.forward(x)));
    h = relu.forward(bn2.forward(conv2.forward(h)));
    h = bn3.forward(conv3.forward(h));
    if (project) {
      h.add_(down_bn.forward(down.forward(x)));
    } else {
      h.add_(x);
    }
    return relu.forward(h);
  }

  void collect(nn::ParamGroup& pg, const std::string& prefix) override {
    conv1.collect(pg, nn::join_key(prefix, "conv1"));
    bn1.collect(pg, nn::join_key(prefix, "bn1"));
    conv2.collect(pg, nn::join_key(prefix, "conv2"));
    bn2.collect(pg, nn::join_key(prefix, "bn2"));
    conv3.collect(pg, nn::join_key(prefix, "conv3"));
    bn3.collect(pg, nn::join_key(prefix, "bn3"));
    if (project) {
      down.collect(pg, nn::join_key(prefix, "proj"));
      down_bn.collect(pg, nn::join_key(prefix, "proj_bn"));
    }
  }
};

namespace {
struct ArchLayout {
  std::vector<int> blocks;   // residual blocks per stage
  int expansion;             // out = planes * expansion
  int width_mult;            // inner 3x3 width multiplier (wide variants)
  bool bottleneck;
};

ArchLayout layout_for(Backbone b) {
  switch (b) {
    case Backbone::resnet18: return {{2, 2, 2}, 1, 1, false};
    case Backbone::resnet50: return {{3, 4, 6}, 4, 1, true};
    case Backbone::wide_resnet50: return {{3, 4, 6}, 4, 2, true};
  }
  throw std::logic_error("unreachable");
}
}  // namespace

Teacher::Teacher(Backbone arch, std::uint64_t seed, int tap_lo, int tap_hi)
    : arch_(arch), seed_(seed), tap_lo_(tap_lo), tap_hi_(tap_hi) {
  if (tap_lo < 1 || tap_hi > 3 || tap_lo > tap_hi)
    throw ConfigError("tap_blocks must be a contiguous range within 1..3");
  weights_source_ = "seed:" + std::to_string(seed);

  Rng rng = Rng(seed).fork("teacher");
  stem_conv_ = nn::Conv2d(3, 64, 7, 2, 3, false, rng);
  stem_bn_ = nn::BatchNorm2d(64);

  const ArchLayout lay = layout_for(arch);
  const int planes[3] = {64, 128, 256};
  int in_ch = 64;
  for (int stage = 0; stage < tap_hi_; ++stage) {
    std::vector<std::unique_ptr<Block>> blocks;
    const int out_ch = planes[stage] * lay.expansion;
    for (int i = 0; i < lay.blocks[static_cast<std::size_t>(stage)]; ++i) {
      const int stride = (i == 0 && stage > 0) ? 2 : 1;
      if (lay.bottleneck) {
        const int width = planes[stage] * lay.width_mult;
        blocks.push_back(std::make_unique<BottleneckBlock>(in_ch, width, out_ch, stride, rng));
      } else {
        blocks.push_back(std::make_unique<BasicBlock>(in_ch, out_ch, stride, rng));
      }
      in_ch = out_ch;
    }
    layers_.push_back(std::move(blocks));
    if (stage + 1 >= tap_lo_) level_channels_.push_back(out_ch);
  }
}

FeaturePyramid Teacher::forward(const Tensor& x) {
  if (x.ndim() != 4 || x.dim(1) != 3)
    throw std::invalid_argument("Teacher::forward: expected [N,3,H,W] input");
  nn::MaxPool2d pool(3, 2, 1);
  Tensor h = pool.forward(relu_.forward(stem_bn_.forward(stem_conv_.forward(x))));
  FeaturePyramid pyr;
  for (int stage = 0; stage < static_cast<int>(layers_.size()); ++stage) {
    for (auto& blk : layers_[static_cast<std::size_t>(stage)]) h = blk->forward(h);
    if (stage + 1 >= tap_lo_) pyr.push_back(h);
  }
  return pyr;
}

void Teacher::collect(nn::ParamGroup& pg, const std::string& prefix) {
  stem_conv_.collect(pg, nn::join_key(prefix, "stem.conv"));
  stem_bn_.collect(pg, nn::join_key(prefix, "stem.bn"));
  for (std::size_t stage = 0; stage < layers_.size(); ++stage) {
    for (std::size_t i = 0; i < layers_[stage].size(); ++i) {
      layers_[stage][i]->collect(
          pg, nn::join_key(prefix, "layer" + std::to_string(stage + 1) + "." + std::to_string(i)));
    }
  }
}

std::uint64_t Teacher::checksum() {
  nn::ParamGroup pg;
  collect(pg, "");
  std::uint64_t h = pg.checksum();
  for (const auto& [name, buf] : pg.buffers) h = tensor_checksum(*buf, h);
  return h;
}

void Teacher::load_weights(const std::string& path) {
  TensorArchive ar = read_tensor_archive(path, "MRKDTW01");
  const std::string arch = ar.meta.value("arch", "");
  if (arch != backbone_to_string(arch_))
    throw CheckpointError("teacher weights are for '" + arch + "', model wants '" +
                          backbone_to_string(arch_) + "'");
  nn::ParamGroup pg;
  collect(pg, "");
  for (auto& [name, p] : pg.params) {
    auto it = ar.tensors.find(name);
    if (it == ar.tensors.end()) throw CheckpointError("teacher weights missing tensor: " + name);
    if (it->second.numel() != p->value.numel())
      throw CheckpointError("teacher weights size mismatch for: " + name);
    // shapes may be collapsed in the archive; element order is what matters
    for (std::int64_t i = 0; i < p->value.numel(); ++i) p->value[i] = it->second[i];
  }
  for (auto& [name, buf] : pg.buffers) {
    auto it = ar.tensors.find(name);
    if (it == ar.tensors.end()) throw CheckpointError("teacher weights missing buffer: " + name);
    if (it->second.numel() != buf->numel())
      throw CheckpointError("teacher weights size mismatch for: " + name);
    for (std::int64_t i = 0; i < buf->numel(); ++i) (*buf)[i] = it->second[i];
  }
  weights_source_ = "file:" + path;
}

}  // namespace mrkd
