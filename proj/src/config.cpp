#include "mrkd/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mrkd/dataset.hpp"
#include "mrkd/errors.hpp"

namespace mrkd {

void TrainConfig::validate() const {
  synth.validate();
  if (lambda_mask < 0.0 || lambda_mask > 1.0) throw ConfigError("lambda must be in [0,1]");
  if (learning_rate <= 0.0) throw ConfigError("lr must be positive");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (image_size < 32) throw ConfigError("image_size must be >= 32");
  if (tap_lo < 1 || tap_hi > 3 || tap_lo > tap_hi)
    throw ConfigError("tap_blocks must be a contiguous range within 1..3");
}

void RunConfig::validate() const {
  train.validate();
  if (fpr_limit <= 0.0 || fpr_limit > 1.0) throw ConfigError("fpr_limit must be in (0,1]");
  if (smoothing_sigma < 0.0) throw ConfigError("smoothing_sigma must be >= 0");
  if (layer_set.empty()) throw ConfigError("layer_set must not be empty");
  const int n_levels = train.tap_hi - train.tap_lo + 1;
  for (int l : layer_set)
    if (l < 1 || l > n_levels)
      throw ConfigError("layer_set entry out of range 1.." + std::to_string(n_levels) + ": " +
                        std::to_string(l));
  layout_from_string(layout);
}

std::vector<std::string> RunConfig::category_list() const {
  if (categories != "all") {
    std::vector<std::string> out;
    std::stringstream ss(categories);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) out.push_back(item);
    }
    if (out.empty()) throw ConfigError("categories is empty");
    return out;
  }
  if (data_root.empty()) throw ConfigError("data_root is required to resolve categories=all");
  return list_categories(data_root, layout_from_string(layout));
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("bad integer list entry: " + item);
    }
  }
  return out;
}

std::string format_int_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

namespace {

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for " + key + ": " + v);
  }
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    int i = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("bad integer value for " + key + ": " + v);
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    std::uint64_t i = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("bad integer value for " + key + ": " + v);
  }
}

std::pair<double, double> parse_double_pair(const std::string& key, const std::string& v) {
  auto comma = v.find(',');
  if (comma == std::string::npos) throw ConfigError("expected 'lo,hi' for " + key + ": " + v);
  return {parse_double(key, v.substr(0, comma)), parse_double(key, v.substr(comma + 1))};
}

std::pair<int, int> parse_int_pair(const std::string& key, const std::string& v) {
  auto comma = v.find(',');
  if (comma == std::string::npos) throw ConfigError("expected 'lo,hi' for " + key + ": " + v);
  return {parse_int(key, v.substr(0, comma)), parse_int(key, v.substr(comma + 1))};
}

std::string fmt_double(double d) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", d);
  return buf;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
  TrainConfig& t = cfg.train;
  if (key == "data_root") cfg.data_root = value;
  else if (key == "layout") cfg.layout = value;
  else if (key == "categories") cfg.categories = value;
  else if (key == "output_dir") cfg.output_dir = value;
  else if (key == "fpr_limit") cfg.fpr_limit = parse_double(key, value);
  else if (key == "smoothing_sigma") cfg.smoothing_sigma = parse_double(key, value);
  else if (key == "eval_seed") cfg.eval_seed = parse_u64(key, value);
  else if (key == "layer_set") cfg.layer_set = parse_int_list(value);
  else if (key == "alpha") t.synth.alpha = parse_double(key, value);
  else if (key == "lambda") t.lambda_mask = parse_double(key, value);
  else if (key == "lr") t.learning_rate = parse_double(key, value);
  else if (key == "epochs") t.epochs = parse_int(key, value);
  else if (key == "batch_size") t.batch_size = parse_int(key, value);
  else if (key == "seed") t.seed = parse_u64(key, value);
  else if (key == "backbone") t.backbone = backbone_from_string(value);
  else if (key == "image_size") t.image_size = parse_int(key, value);
  else if (key == "tap_blocks") {
    std::vector<int> taps = parse_int_list(value);
    if (taps.empty()) throw ConfigError("tap_blocks is empty");
    for (std::size_t i = 1; i < taps.size(); ++i)
      if (taps[i] != taps[i - 1] + 1) throw ConfigError("tap_blocks must be contiguous");
    t.tap_lo = taps.front();
    t.tap_hi = taps.back();
  } else if (key == "teacher_weights") t.teacher_weights = value;
  else if (key == "patch_count") t.synth.patch_count_range = parse_int_pair(key, value);
  else if (key == "patch_area") t.synth.patch_area_range = parse_double_pair(key, value);
  else if (key == "aspect") t.synth.aspect_range = parse_double_pair(key, value);
  else if (key == "blend") {
    if (value == "seamless") t.synth.blend = SynthesisParams::Blend::seamless;
    else if (value == "paste") t.synth.blend = SynthesisParams::Blend::paste;
    else throw ConfigError("blend must be 'seamless' or 'paste', got: " + value);
  } else if (key == "foreground") {
    if (value == "otsu") t.synth.foreground = SynthesisParams::Foreground::otsu;
    else if (value == "full") t.synth.foreground = SynthesisParams::Foreground::full;
    else throw ConfigError("foreground must be 'otsu' or 'full', got: " + value);
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + " is not key = value: " + line);
    apply_config_kv(cfg, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialize_config(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  std::string out;
  auto kv = [&out](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
  kv("data_root", cfg.data_root);
  kv("layout", cfg.layout);
  kv("categories", cfg.categories);
  kv("output_dir", cfg.output_dir);
  kv("fpr_limit", fmt_double(cfg.fpr_limit));
  kv("smoothing_sigma", fmt_double(cfg.smoothing_sigma));
  kv("eval_seed", std::to_string(cfg.eval_seed));
  kv("layer_set", format_int_list(cfg.layer_set));
  kv("alpha", fmt_double(t.synth.alpha));
  kv("lambda", fmt_double(t.lambda_mask));
  kv("lr", fmt_double(t.learning_rate));
  kv("epochs", std::to_string(t.epochs));
  kv("batch_size", std::to_string(t.batch_size));
  kv("seed", std::to_string(t.seed));
  kv("backbone", backbone_to_string(t.backbone));
  kv("image_size", std::to_string(t.image_size));
  std::vector<int> taps;
  for (int l = t.tap_lo; l <= t.tap_hi; ++l) taps.push_back(l);
  kv("tap_blocks", format_int_list(taps));
  kv("teacher_weights", t.teacher_weights);
  kv("patch_count", std::to_string(t.synth.patch_count_range.first) + "," +
                        std::to_string(t.synth.patch_count_range.second));
  kv("patch_area", fmt_double(t.synth.patch_area_range.first) + "," +
                       fmt_double(t.synth.patch_area_range.second));
  kv("aspect", fmt_double(t.synth.aspect_range.first) + "," + fmt_double(t.synth.aspect_range.second));
  kv("blend", t.synth.blend == SynthesisParams::Blend::seamless ? "seamless" : "paste");
  kv("foreground", t.synth.foreground == SynthesisParams::Foreground::otsu ? "otsu" : "full");
  return out;
}

bool config_equal(const RunConfig& a, const RunConfig& b) {
  return serialize_config(a) == serialize_config(b);
}

}  // namespace mrkd
