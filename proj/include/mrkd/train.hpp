#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mrkd/checkpoint.hpp"
#include "mrkd/config.hpp"
#include "mrkd/dataset.hpp"
#include "mrkd/model.hpp"

namespace mrkd {

struct TrainResult {
  std::shared_ptr<MrkdModel> model;
  std::vector<double> epoch_losses;  // mean loss per epoch
  std::uint64_t teacher_checksum_before = 0;
  std::uint64_t teacher_checksum_after = 0;
};

using ProgressFn = std::function<void(int epoch, double mean_loss)>;

// One optimizer stream over the normal training entries of the index: per
// batch the records are augmented, both the original and augmented batches
// go through the frozen extractor, only the augmented pyramid is compressed
// and decoded, every decoded level is masked and restored, and the restored
// pyramid is pulled towards the original-batch features.
TrainResult train(const TrainConfig& cfg, const DatasetIndex& index,
                  const ProgressFn& progress = {});

// epoch,mean_loss rows
void write_loss_csv(const std::string& path, const std::vector<double>& losses);

}  // namespace mrkd
