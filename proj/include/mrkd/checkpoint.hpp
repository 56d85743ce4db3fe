#pragma once

#include <json.hpp>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mrkd/tensor.hpp"

namespace mrkd {

struct TrainConfig;
class MrkdModel;

// On-disk container shared by checkpoints and exported teacher weights:
// 8-byte magic, u64 little-endian JSON length, JSON metadata, then the raw
// f64 payloads of the tensors listed (in order) under meta["tensors"].
struct TensorArchive {
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;
  std::uint64_t file_checksum = 0;
};

void write_tensor_archive(const std::string& path, const std::string& magic,
                          const nlohmann::json& meta,
                          const std::vector<std::pair<std::string, const Tensor*>>& tensors);
TensorArchive read_tensor_archive(const std::string& path, const std::string& magic);

constexpr int kCheckpointVersion = 1;

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::string& path, MrkdModel& model, const TrainConfig& cfg, int epoch,
                     double final_loss);

struct LoadedCheckpoint {
  std::shared_ptr<MrkdModel> model;
  std::shared_ptr<TrainConfig> config;
  int epoch = 0;
  double final_loss = 0.0;
  std::uint64_t teacher_checksum = 0;
  std::string id;  // short hex of the file checksum
};

// Rebuilds the model from the stored config and fills every parameter and
// buffer by name. Refuses unknown format versions.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace mrkd
