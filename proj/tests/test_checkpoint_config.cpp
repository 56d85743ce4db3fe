#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mrkd/checkpoint.hpp"
#include "mrkd/config.hpp"
#include "mrkd/errors.hpp"
#include "mrkd/scoring.hpp"
#include "toy_dataset.hpp"

using namespace mrkd;

TEST_CASE("config: parse/serialize round trip and precedence") {
  RunConfig cfg;
  apply_config_kv(cfg, "alpha", "0.4");
  apply_config_kv(cfg, "lambda", "0.35");
  apply_config_kv(cfg, "backbone", "resnet18");
  apply_config_kv(cfg, "layer_set", "1,2");
  apply_config_kv(cfg, "patch_area", "0.02,0.1");
  apply_config_kv(cfg, "blend", "paste");
  apply_config_kv(cfg, "categories", "bottle,cable");

  RunConfig round = parse_config_text(serialize_config(cfg));
  CHECK(config_equal(cfg, round));
  CHECK(round.train.synth.alpha == 0.4);
  CHECK(round.train.backbone == Backbone::resnet18);
  CHECK(round.layer_set == std::vector<int>{1, 2});
  CHECK(round.category_list() == std::vector<std::string>{"bottle", "cable"});

  // later assignments win
  apply_config_kv(cfg, "alpha", "0.9");
  CHECK(cfg.train.synth.alpha == 0.9);
}

TEST_CASE("config: unknown keys and malformed values are hard errors") {
  RunConfig cfg;
  CHECK_THROWS_AS(apply_config_kv(cfg, "alhpa", "0.4"), ConfigError);
  CHECK_THROWS_AS(apply_config_kv(cfg, "alpha", "zero"), ConfigError);
  CHECK_THROWS_AS(apply_config_kv(cfg, "backbone", "resnet34"), ConfigError);
  CHECK_THROWS_AS(apply_config_kv(cfg, "blend", "alpha_blend"), ConfigError);
  CHECK_THROWS_AS(apply_config_kv(cfg, "tap_blocks", "1,3"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("epochs 5\n"), ConfigError);

  apply_config_kv(cfg, "lambda", "1.5");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = RunConfig{};
  apply_config_kv(cfg, "fpr_limit", "0");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = RunConfig{};
  apply_config_kv(cfg, "layer_set", "1,4");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("config: documented defaults") {
  RunConfig cfg;
  CHECK(cfg.train.synth.alpha == 1.0);
  CHECK(cfg.train.lambda_mask == 0.2);
  CHECK(cfg.train.learning_rate == 0.005);
  CHECK(cfg.train.epochs == 200);
  CHECK(cfg.train.batch_size == 16);
  CHECK(cfg.train.backbone == Backbone::wide_resnet50);
  CHECK(cfg.train.image_size == 256);
  CHECK(cfg.train.tap_lo == 1);
  CHECK(cfg.train.tap_hi == 3);
  CHECK(cfg.fpr_limit == 0.3);
  CHECK(cfg.smoothing_sigma == 0.0);
  CHECK(cfg.layer_set == std::vector<int>{1, 2, 3});
}

TEST_CASE("checkpoint: save/load reproduces the model bit for bit") {
  const std::string dir = toy::fresh_temp_dir("ckpt");
  TrainConfig cfg;
  cfg.backbone = Backbone::resnet18;
  cfg.image_size = 64;
  cfg.seed = 17;

  MrkdModel model(cfg.backbone, cfg.seed, cfg.seed);
  // nudge a trainable parameter away from its seeded value
  nn::ParamGroup pg;
  model.collect_trainables(pg);
  pg.params.begin()->second->value[0] = 1.25;

  save_checkpoint(dir + "/m.ckpt", model, cfg, 5, 0.125);
  LoadedCheckpoint loaded = load_checkpoint(dir + "/m.ckpt");
  CHECK(loaded.epoch == 5);
  CHECK(loaded.final_loss == 0.125);
  CHECK(loaded.config->backbone == Backbone::resnet18);
  CHECK(loaded.config->image_size == 64);
  CHECK(!loaded.id.empty());

  nn::ParamGroup pg2;
  loaded.model->collect_trainables(pg2);
  CHECK(pg2.params.begin()->second->value[0] == 1.25);
  CHECK(pg.checksum() == pg2.checksum());
  CHECK(model.teacher().checksum() == loaded.model->teacher().checksum());

  // identical scoring behavior after the round trip
  Rng rng(3);
  ImageRecord rec;
  rec.pixels = standardize(toy::texture_image(64, rng));
  ScoreMap a = score_image(rec, model, 0.2, 7, {1, 2, 3});
  ScoreMap b = score_image(rec, *loaded.model, 0.2, 7, {1, 2, 3});
  CHECK(a.values == b.values);
}

TEST_CASE("checkpoint: wrong magic and wrong version are refused") {
  const std::string dir = toy::fresh_temp_dir("ckpt_bad");
  CHECK_THROWS_AS(load_checkpoint(dir + "/missing.ckpt"), CheckpointError);

  {
    std::ofstream f(dir + "/junk.ckpt", std::ios::binary);
    f << "NOTMRKD0" << std::string(64, '\0');
  }
  CHECK_THROWS_AS(load_checkpoint(dir + "/junk.ckpt"), CheckpointError);

  // right magic, unsupported version
  Tensor t({2});
  nlohmann::json meta = {{"format_version", 99}};
  write_tensor_archive(dir + "/v99.ckpt", "MRKDCKP1", meta, {{"x", &t}});
  CHECK_THROWS_AS(load_checkpoint(dir + "/v99.ckpt"), CheckpointError);
}

TEST_CASE("tensor archive: round trips tensors and metadata") {
  const std::string dir = toy::fresh_temp_dir("archive");
  Rng rng(5);
  Tensor a({3, 4});
  Tensor b({2, 2, 2});
  for (std::int64_t i = 0; i < a.numel(); ++i) a[i] = rng.normal();
  for (std::int64_t i = 0; i < b.numel(); ++i) b[i] = rng.normal();

  nlohmann::json meta = {{"format_version", 1}, {"note", "fixture"}};
  write_tensor_archive(dir + "/t.bin", "MRKDTST1", meta, {{"a", &a}, {"b", &b}});
  TensorArchive ar = read_tensor_archive(dir + "/t.bin", "MRKDTST1");
  CHECK(ar.meta.at("note") == "fixture");
  CHECK(bitwise_equal(ar.tensors.at("a"), a));
  CHECK(bitwise_equal(ar.tensors.at("b"), b));
  CHECK_THROWS_AS(read_tensor_archive(dir + "/t.bin", "MRKDTWOO"), CheckpointError);
}
