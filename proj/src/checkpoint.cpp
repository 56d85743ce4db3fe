#include "mrkd/checkpoint.hpp"

#include <cstdio>
#include <fstream>

#include "mrkd/config.hpp"
#include "mrkd/errors.hpp"
#include "mrkd/model.hpp"

namespace mrkd {

namespace {
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace

void write_tensor_archive(const std::string& path, const std::string& magic,
                          const nlohmann::json& meta,
                          const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  if (magic.size() != 8) throw std::invalid_argument("archive magic must be 8 bytes");
  nlohmann::json full = meta;
  nlohmann::json tlist = nlohmann::json::array();
  for (const auto& [name, t] : tensors)
    tlist.push_back({{"name", name}, {"shape", t->shape()}, {"numel", t->numel()}});
  full["tensors"] = tlist;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open for writing: " + path);
  f.write(magic.data(), 8);
  const std::string js = full.dump();
  const std::uint64_t len = js.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(js.data(), static_cast<std::streamsize>(js.size()));
  for (const auto& [name, t] : tensors)
    f.write(reinterpret_cast<const char*>(t->data()),
            static_cast<std::streamsize>(t->numel() * static_cast<std::int64_t>(sizeof(double))));
  if (!f) throw CheckpointError("write failed: " + path);
}

TensorArchive read_tensor_archive(const std::string& path, const std::string& magic) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open: " + path);
  char got[8];
  f.read(got, 8);
  if (!f || std::string(got, 8) != magic)
    throw CheckpointError("bad magic in " + path + " (expected " + magic + ")");
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string js(len, '\0');
  f.read(js.data(), static_cast<std::streamsize>(len));
  if (!f) throw CheckpointError("truncated archive: " + path);

  TensorArchive ar;
  ar.file_checksum = fnv1a(magic.data(), 8, 0xcbf29ce484222325ULL);
  ar.file_checksum = fnv1a(js.data(), js.size(), ar.file_checksum);
  try {
    ar.meta = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("bad archive metadata in " + path + ": " + e.what());
  }
  for (const auto& entry : ar.meta.at("tensors")) {
    const std::string name = entry.at("name");
    std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * static_cast<std::int64_t>(sizeof(double))));
    if (!f) throw CheckpointError("truncated tensor data in " + path + " at " + name);
    ar.file_checksum = fnv1a(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(double),
                             ar.file_checksum);
    ar.tensors.emplace(name, std::move(t));
  }
  return ar;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {
      {"alpha", cfg.synth.alpha},
      {"lambda", cfg.lambda_mask},
      {"lr", cfg.learning_rate},
      {"epochs", cfg.epochs},
      {"batch_size", cfg.batch_size},
      {"seed", cfg.seed},
      {"backbone", backbone_to_string(cfg.backbone)},
      {"image_size", cfg.image_size},
      {"tap_lo", cfg.tap_lo},
      {"tap_hi", cfg.tap_hi},
      {"teacher_weights", cfg.teacher_weights},
      {"patch_count", {cfg.synth.patch_count_range.first, cfg.synth.patch_count_range.second}},
      {"patch_area", {cfg.synth.patch_area_range.first, cfg.synth.patch_area_range.second}},
      {"aspect", {cfg.synth.aspect_range.first, cfg.synth.aspect_range.second}},
      {"blend", cfg.synth.blend == SynthesisParams::Blend::seamless ? "seamless" : "paste"},
      {"foreground",
       cfg.synth.foreground == SynthesisParams::Foreground::otsu ? "otsu" : "full"},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.synth.alpha = j.at("alpha");
  cfg.lambda_mask = j.at("lambda");
  cfg.learning_rate = j.at("lr");
  cfg.epochs = j.at("epochs");
  cfg.batch_size = j.at("batch_size");
  cfg.seed = j.at("seed");
  cfg.backbone = backbone_from_string(j.at("backbone"));
  cfg.image_size = j.at("image_size");
  cfg.tap_lo = j.at("tap_lo");
  cfg.tap_hi = j.at("tap_hi");
  cfg.teacher_weights = j.at("teacher_weights");
  cfg.synth.patch_count_range = {j.at("patch_count")[0], j.at("patch_count")[1]};
  cfg.synth.patch_area_range = {j.at("patch_area")[0], j.at("patch_area")[1]};
  cfg.synth.aspect_range = {j.at("aspect")[0], j.at("aspect")[1]};
  cfg.synth.blend = j.at("blend") == "seamless" ? SynthesisParams::Blend::seamless
                                                : SynthesisParams::Blend::paste;
  cfg.synth.foreground = j.at("foreground") == "otsu" ? SynthesisParams::Foreground::otsu
                                                      : SynthesisParams::Foreground::full;
  return cfg;
}

static const std::string kCkptMagic = "MRKDCKP1";

void save_checkpoint(const std::string& path, MrkdModel& model, const TrainConfig& cfg, int epoch,
                     double final_loss) {
  nn::ParamGroup pg;
  model.collect_all(pg);
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (const auto& [name, p] : pg.params) tensors.emplace_back(name, &p->value);
  for (const auto& [name, buf] : pg.buffers) tensors.emplace_back(name, buf);

  nlohmann::json meta = {
      {"format_version", kCheckpointVersion},
      {"config", train_config_to_json(cfg)},
      {"epoch", epoch},
      {"final_loss", final_loss},
      {"teacher",
       {{"arch", backbone_to_string(model.teacher().arch())},
        {"seed", model.teacher().seed()},
        {"source", model.teacher().weights_source()},
        {"checksum", model.teacher().checksum()}}},
  };
  write_tensor_archive(path, kCkptMagic, meta, tensors);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  TensorArchive ar = read_tensor_archive(path, kCkptMagic);
  const int version = ar.meta.value("format_version", -1);
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint " + path + " has format version " + std::to_string(version) +
                          ", this build reads version " + std::to_string(kCheckpointVersion));

  LoadedCheckpoint out;
  out.config = std::make_shared<TrainConfig>(train_config_from_json(ar.meta.at("config")));
  out.epoch = ar.meta.value("epoch", 0);
  out.final_loss = ar.meta.value("final_loss", 0.0);
  out.teacher_checksum = ar.meta.at("teacher").value("checksum", 0ULL);

  const std::uint64_t teacher_seed = ar.meta.at("teacher").value("seed", 0ULL);
  out.model = std::make_shared<MrkdModel>(out.config->backbone, teacher_seed, out.config->seed,
                                          out.config->tap_lo, out.config->tap_hi);

  nn::ParamGroup pg;
  out.model->collect_all(pg);
  for (auto& [name, p] : pg.params) {
    auto it = ar.tensors.find(name);
    if (it == ar.tensors.end()) throw CheckpointError("checkpoint missing tensor: " + name);
    if (it->second.numel() != p->value.numel())
      throw CheckpointError("checkpoint tensor size mismatch: " + name);
    p->value = it->second;
  }
  for (auto& [name, buf] : pg.buffers) {
    auto it = ar.tensors.find(name);
    if (it == ar.tensors.end()) throw CheckpointError("checkpoint missing buffer: " + name);
    if (it->second.numel() != buf->numel())
      throw CheckpointError("checkpoint buffer size mismatch: " + name);
    *buf = it->second;
  }
  if (out.model->teacher().checksum() != out.teacher_checksum)
    throw CheckpointError("checkpoint teacher checksum mismatch in " + path);

  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(ar.file_checksum));
  out.id = buf;
  out.model->set_training(false);
  return out;
}

}  // namespace mrkd
