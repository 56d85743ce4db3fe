#pragma once

#include <string>
#include <vector>

#include "mrkd/backbone.hpp"
#include "mrkd/synthesis.hpp"

namespace mrkd {

struct TrainConfig {
  SynthesisParams synth;  // synth.alpha is the augmentation probability
  double lambda_mask = 0.2;
  double learning_rate = 0.005;
  int epochs = 200;
  int batch_size = 16;
  std::uint64_t seed = 0;
  Backbone backbone = Backbone::wide_resnet50;
  int image_size = 256;
  int tap_lo = 1, tap_hi = 3;
  std::string teacher_weights;  // optional exported-weights archive

  void validate() const;  // throws ConfigError
};

// Experiment-level parameter surface. Flat key=value text representation;
// unknown keys are a hard error.
struct RunConfig {
  TrainConfig train;
  std::string data_root;
  std::string layout = "mvtec";
  std::string categories = "all";  // comma list or "all"
  std::string output_dir = "out";
  double fpr_limit = 0.3;
  double smoothing_sigma = 0.0;
  std::uint64_t eval_seed = 0;
  std::vector<int> layer_set = {1, 2, 3};

  void validate() const;
  std::vector<std::string> category_list() const;  // resolves "all" against data_root
};

// One key=value assignment; throws ConfigError for unknown keys or
// unparseable values.
void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value);

// key = value lines, '#' comments, blank lines ignored.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);

// Emits every key; parse(serialize(c)) == c.
std::string serialize_config(const RunConfig& cfg);

bool config_equal(const RunConfig& a, const RunConfig& b);

std::vector<int> parse_int_list(const std::string& s);  // "1,2,3"
std::string format_int_list(const std::vector<int>& v);

}  // namespace mrkd
