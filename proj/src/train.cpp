#include "mrkd/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "mrkd/errors.hpp"
#include "mrkd/synthesis.hpp"

namespace mrkd {

namespace {
Tensor stack_images(const std::vector<const Tensor*>& imgs) {
  const int C = imgs[0]->dim(0), H = imgs[0]->dim(1), W = imgs[0]->dim(2);
  Tensor out({static_cast<int>(imgs.size()), C, H, W});
  const std::int64_t stride = static_cast<std::int64_t>(C) * H * W;
  for (std::size_t n = 0; n < imgs.size(); ++n)
    std::copy(imgs[n]->data(), imgs[n]->data() + stride, out.data() + static_cast<std::int64_t>(n) * stride);
  return out;
}
}  // namespace

TrainResult train(const TrainConfig& cfg, const DatasetIndex& index, const ProgressFn& progress) {
  cfg.validate();

  std::vector<const IndexEntry*> train_entries;
  for (const auto& e : index.entries)
    if (e.split == Split::train) {
      if (e.label != Label::normal)
        throw DataError("train(): abnormal entry in training split: " + e.image_path);
      train_entries.push_back(&e);
    }
  if (train_entries.empty()) throw DataError("train(): empty training set for " + index.category);

  std::vector<ImageRecord> records;
  records.reserve(train_entries.size());
  for (const auto* e : train_entries) records.push_back(load_record(*e, index.category, cfg.image_size));

  TrainResult result;
  result.model = std::make_shared<MrkdModel>(cfg.backbone, cfg.seed, cfg.seed, cfg.tap_lo, cfg.tap_hi);
  MrkdModel& model = *result.model;
  if (!cfg.teacher_weights.empty()) model.teacher().load_weights(cfg.teacher_weights);
  result.teacher_checksum_before = model.teacher().checksum();

  nn::ParamGroup trainables;
  model.collect_trainables(trainables);
  nn::Adam opt(cfg.learning_rate);

  Rng root(cfg.seed);
  Rng shuffle_rng = root.fork("shuffle");
  Rng synth_rng = root.fork("synthesis");
  Rng flm_rng = root.fork("flm-train");

  const int n = static_cast<int>(records.size());
  const int levels = model.num_levels();
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  model.set_training(true);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (int i = n; i > 1; --i)
      std::swap(order[static_cast<std::size_t>(i - 1)],
                order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, i - 1))]);

    double loss_sum = 0.0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int stop = std::min(n, start + cfg.batch_size);
      std::vector<ImageRecord> batch;
      batch.reserve(static_cast<std::size_t>(stop - start));
      for (int i = start; i < stop; ++i)
        batch.push_back(records[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);

      std::vector<SyntheticSample> synth = apply_ilm(batch, cfg.synth, synth_rng);

      std::vector<const Tensor*> normal_ptrs, abnormal_ptrs;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        normal_ptrs.push_back(&batch[b].pixels);
        abnormal_ptrs.push_back(&synth[b].image);
      }
      Tensor x_normal = stack_images(normal_ptrs);
      Tensor x_abnormal = stack_images(abnormal_ptrs);

      FeaturePyramid pyr_normal = model.teacher().forward(x_normal);
      FeaturePyramid pyr_abnormal = model.teacher().forward(x_abnormal);

      Tensor emb = model.bottleneck().forward(pyr_abnormal);
      FeaturePyramid decoded = model.student().forward(emb);

      std::vector<std::vector<Tensor>> masks(static_cast<std::size_t>(levels));
      FeaturePyramid restored(static_cast<std::size_t>(levels));
      for (int l = 0; l < levels; ++l) {
        auto& lv = decoded[static_cast<std::size_t>(l)];
        for (int b = 0; b < lv.dim(0); ++b)
          masks[static_cast<std::size_t>(l)].push_back(
              make_mask(lv.dim(2), lv.dim(3), cfg.lambda_mask, flm_rng));
        restored[static_cast<std::size_t>(l)] =
            restore(lv, masks[static_cast<std::size_t>(l)], model.gen(l));
      }

      FeaturePyramid grads;
      const double loss = distill_loss(restored, pyr_normal, &grads);
      if (!std::isfinite(loss))
        throw std::runtime_error("train(): non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch starting at " + std::to_string(start));
      loss_sum += loss * static_cast<double>(stop - start);

      trainables.zero_grad();
      FeaturePyramid decoded_grads(static_cast<std::size_t>(levels));
      for (int l = 0; l < levels; ++l) {
        Tensor g = model.gen(l).backward(grads[static_cast<std::size_t>(l)]);
        decoded_grads[static_cast<std::size_t>(l)] =
            apply_masks(g, masks[static_cast<std::size_t>(l)]);
      }
      Tensor gemb = model.student().backward(decoded_grads);
      model.bottleneck().backward(gemb);
      opt.step(trainables);
    }

    const double mean_loss = loss_sum / static_cast<double>(n);
    result.epoch_losses.push_back(mean_loss);
    if (progress) progress(epoch, mean_loss);
  }
  model.set_training(false);
  result.teacher_checksum_after = model.teacher().checksum();
  return result;
}

void write_loss_csv(const std::string& path, const std::vector<double>& losses) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write loss csv: " + path);
  f << "epoch,mean_loss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i + 1, losses[i]);
    f << buf;
  }
}

}  // namespace mrkd
