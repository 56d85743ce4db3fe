#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "mrkd/config.hpp"
#include "mrkd/errors.hpp"
#include "mrkd/figures.hpp"
#include "mrkd/metrics.hpp"
#include "mrkd/train.hpp"

namespace fs = std::filesystem;
using namespace mrkd;

namespace {

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::string> data_root, layout, category, out, backbone, layers, teacher_weights;
  std::optional<std::uint64_t> seed, eval_seed;
  std::optional<int> epochs, batch_size, image_size;
  std::optional<double> alpha, lambda, lr, fpr_limit, smoothing_sigma;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_file, "config file (key = value lines)");
  cmd->add_option("--set", o.sets, "override a config key, e.g. --set epochs=5")->take_all();
  cmd->add_option("--data-root", o.data_root, "dataset root directory");
  cmd->add_option("--layout", o.layout, "dataset layout: mvtec | mtd | btad");
  cmd->add_option("--category", o.category, "category name, comma list, or 'all'");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "training seed (all randomness derives from it)");
  cmd->add_option("--eval-seed", o.eval_seed, "seed of the test-time masking stream");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--batch-size", o.batch_size, "training batch size");
  cmd->add_option("--image-size", o.image_size, "square image size");
  cmd->add_option("--alpha", o.alpha, "fraction of training images augmented");
  cmd->add_option("--lambda", o.lambda, "feature masking ratio");
  cmd->add_option("--lr", o.lr, "learning rate");
  cmd->add_option("--backbone", o.backbone, "resnet18 | resnet50 | wide_resnet50");
  cmd->add_option("--layers", o.layers, "score-map layer set, e.g. 1,2,3");
  cmd->add_option("--fpr-limit", o.fpr_limit, "PRO integration limit");
  cmd->add_option("--smoothing-sigma", o.smoothing_sigma, "score map blur (0 = off)");
  cmd->add_option("--teacher-weights", o.teacher_weights, "exported teacher weight archive");
}

RunConfig assemble(const CommonOpts& o) {
  RunConfig cfg = o.config_file.empty() ? RunConfig{} : load_config_file(o.config_file);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + kv);
    apply_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  auto set = [&cfg](const std::string& k, const std::string& v) { apply_config_kv(cfg, k, v); };
  if (o.data_root) set("data_root", *o.data_root);
  if (o.layout) set("layout", *o.layout);
  if (o.category) set("categories", *o.category);
  if (o.out) set("output_dir", *o.out);
  if (o.seed) set("seed", std::to_string(*o.seed));
  if (o.eval_seed) set("eval_seed", std::to_string(*o.eval_seed));
  if (o.epochs) set("epochs", std::to_string(*o.epochs));
  if (o.batch_size) set("batch_size", std::to_string(*o.batch_size));
  if (o.image_size) set("image_size", std::to_string(*o.image_size));
  if (o.alpha) set("alpha", std::to_string(*o.alpha));
  if (o.lambda) set("lambda", std::to_string(*o.lambda));
  if (o.lr) set("lr", std::to_string(*o.lr));
  if (o.backbone) set("backbone", *o.backbone);
  if (o.layers) set("layer_set", *o.layers);
  if (o.fpr_limit) set("fpr_limit", std::to_string(*o.fpr_limit));
  if (o.smoothing_sigma) set("smoothing_sigma", std::to_string(*o.smoothing_sigma));
  if (o.teacher_weights) set("teacher_weights", *o.teacher_weights);
  cfg.validate();
  return cfg;
}

void cmd_train(const RunConfig& cfg) {
  for (const std::string& cat : cfg.category_list()) {
    DatasetIndex idx =
        scan_dataset(cfg.data_root, layout_from_string(cfg.layout), cat, cfg.train.seed);
    std::cerr << "[" << cat << "] " << idx.count(Split::train) << " training images\n";
    TrainResult result = train(cfg.train, idx, [&](int epoch, double loss) {
      std::fprintf(stderr, "[%s] epoch %d/%d mean loss %.6f\n", cat.c_str(), epoch,
                   cfg.train.epochs, loss);
    });
    if (result.teacher_checksum_before != result.teacher_checksum_after)
      throw std::runtime_error("teacher parameters changed during training");
    const fs::path dir = fs::path(cfg.output_dir) / cat;
    fs::create_directories(dir);
    save_checkpoint((dir / "model.ckpt").string(), *result.model, cfg.train,
                    cfg.train.epochs, result.epoch_losses.back());
    write_loss_csv((dir / "loss.csv").string(), result.epoch_losses);
    std::cerr << "[" << cat << "] wrote " << (dir / "model.ckpt").string() << "\n";
  }
}

void cmd_eval(const RunConfig& cfg, const std::string& checkpoint_override, bool dump_scores,
              bool save_maps) {
  MetricsReport report;
  report.eval_seed = cfg.eval_seed;
  report.layer_set = cfg.layer_set;
  report.fpr_limit = cfg.fpr_limit;
  report.smoothing_sigma = cfg.smoothing_sigma;

  std::string ids;
  for (const std::string& cat : cfg.category_list()) {
    DatasetIndex idx =
        scan_dataset(cfg.data_root, layout_from_string(cfg.layout), cat, cfg.train.seed);
    const fs::path dir = fs::path(cfg.output_dir) / cat;
    const std::string ckpt_path =
        checkpoint_override.empty() ? (dir / "model.ckpt").string() : checkpoint_override;
    LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);

    EvalConfig ecfg;
    ecfg.eval_seed = cfg.eval_seed;
    ecfg.layers = cfg.layer_set;
    ecfg.fpr_limit = cfg.fpr_limit;
    ecfg.smoothing_sigma = cfg.smoothing_sigma;
    if (dump_scores || save_maps) fs::create_directories(dir);
    if (dump_scores) ecfg.score_dump_path = (dir / "scores.csv").string();
    if (save_maps) ecfg.map_dump_dir = (dir / "maps").string();

    CategoryEvalResult res = evaluate_category(ckpt, idx, ecfg);
    report.per_category[cat] = res.metrics;
    if (!ids.empty()) ids += ";";
    ids += cat + "=" + ckpt.id;
    std::fprintf(stderr, "[%s] auroc_il %.4f auroc_pl %.4f aupro %.4f\n", cat.c_str(),
                 res.metrics.auroc_il, res.metrics.auroc_pl, res.metrics.aupro);
  }
  report.checkpoint_id = ids;
  report.recompute_averages();
  fs::create_directories(cfg.output_dir);
  write_report_csv(report, (fs::path(cfg.output_dir) / "report.csv").string());
  write_report_json(report, (fs::path(cfg.output_dir) / "report.json").string());
}

void cmd_predict(const RunConfig& cfg, const std::string& checkpoint_path,
                 const std::string& image_path) {
  if (checkpoint_path.empty()) throw CheckpointError("predict: --checkpoint is required");
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
  ImageRecord rec;
  rec.pixels = load_image(image_path, ckpt.config->image_size);
  rec.source_path = image_path;

  const std::uint64_t seed = Rng(cfg.eval_seed).fork("flm-eval").state();
  ScoreMap map = score_image(rec, *ckpt.model, ckpt.config->lambda_mask, seed, cfg.layer_set);
  if (cfg.smoothing_sigma > 0.0) map = smooth_map(map, cfg.smoothing_sigma);

  fs::create_directories(cfg.output_dir);
  const std::string out_png =
      (fs::path(cfg.output_dir) / (fs::path(image_path).stem().string() + "_heatmap.png")).string();
  write_heatmap_overlay(out_png, rec.pixels, map);
  std::fprintf(stdout, "%.17g\n", map.image_score);
  std::cerr << "wrote " << out_png << "\n";
}

void cmd_plot_dist(const RunConfig& cfg) {
  if (!fs::exists(cfg.output_dir)) throw DataError("plot-dist: no such directory: " + cfg.output_dir);
  bool any = false;
  for (const auto& entry : fs::directory_iterator(cfg.output_dir)) {
    if (!entry.is_directory()) continue;
    const fs::path scores = entry.path() / "scores.csv";
    if (!fs::exists(scores)) continue;
    any = true;
    auto [all_scores, labels] = read_scores_csv(scores.string());
    std::vector<double> normal, abnormal;
    for (std::size_t i = 0; i < all_scores.size(); ++i)
      (labels[i] ? abnormal : normal).push_back(all_scores[i]);
    if (normal.empty() || abnormal.empty())
      std::cerr << "warning: " << scores.string()
                << " has a single class; plotting one density\n";
    const std::string cat = entry.path().filename().string();
    write_score_distribution_plot((entry.path() / "score_dist.png").string(), normal, abnormal, cat);
    std::cerr << "wrote " << (entry.path() / "score_dist.png").string() << "\n";
  }
  if (!any) throw DataError("plot-dist: no <category>/scores.csv found under " + cfg.output_dir +
                            " (run eval with --dump-scores first)");
}

std::vector<std::string> split_values(const std::string& values, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : values) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

void cmd_sweep(const RunConfig& base, const std::string& axis, const std::string& values) {
  static const std::map<std::string, std::string> axis_key = {{"alpha", "alpha"},
                                                              {"lambda", "lambda"},
                                                              {"layers", "layer_set"},
                                                              {"backbone", "backbone"}};
  auto it = axis_key.find(axis);
  if (it == axis_key.end())
    throw ConfigError("sweep axis must be one of alpha | lambda | layers | backbone, got: " + axis);
  // layers values contain commas, so entries are ';'-separated there
  const char sep = values.find(';') != std::string::npos ? ';' : ',';
  if (axis == "layers" && sep != ';')
    throw ConfigError("sweep over layers requires ';'-separated layer sets, e.g. 1;2;1,2");
  std::vector<std::string> entries = split_values(values, sep);
  if (entries.empty()) throw ConfigError("sweep: no values given");

  fs::create_directories(base.output_dir);
  const std::string csv_path = (fs::path(base.output_dir) / "sweep.csv").string();
  std::ofstream csv(csv_path);
  if (!csv) throw DataError("cannot write sweep csv: " + csv_path);
  csv << "axis,value,auroc_il,auroc_pl,aupro\n";

  for (const std::string& value : entries) {
    RunConfig cfg = base;
    apply_config_kv(cfg, it->second, value);
    std::string tag = value;
    for (char& c : tag)
      if (c == ',') c = '-';
    cfg.output_dir = (fs::path(base.output_dir) / ("sweep_" + axis + "_" + tag)).string();
    cfg.validate();

    std::cerr << "== sweep " << axis << " = " << value << " ==\n";
    cmd_train(cfg);
    cmd_eval(cfg, "", false, false);

    // pull the averages back out of the fresh report
    std::ifstream rep((fs::path(cfg.output_dir) / "report.csv").string());
    std::string line, last;
    while (std::getline(rep, line))
      if (!line.empty()) last = line;
    // last line is "average,<il>,<pl>,<pro>"
    csv << axis << "," << value << last.substr(std::string("average").size()) << "\n";
  }
  std::cerr << "wrote " << csv_path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anomaly detection by masked reverse distillation"};
  app.require_subcommand(1);

  CommonOpts train_o, eval_o, predict_o, plot_o, sweep_o;
  std::string eval_ckpt, predict_ckpt, predict_image, sweep_axis, sweep_values;
  bool dump_scores = false, save_maps = false;

  CLI::App* c_train = app.add_subcommand("train", "train one model per category");
  add_common(c_train, train_o);

  CLI::App* c_eval = app.add_subcommand("eval", "score the test split and write reports");
  add_common(c_eval, eval_o);
  c_eval->add_option("--checkpoint", eval_ckpt, "explicit checkpoint path");
  c_eval->add_flag("--dump-scores", dump_scores, "write per-image scores.csv per category");
  c_eval->add_flag("--save-maps", save_maps, "write per-image score maps (raw + png)");

  CLI::App* c_predict = app.add_subcommand("predict", "score one image and write a heatmap");
  add_common(c_predict, predict_o);
  c_predict->add_option("--checkpoint", predict_ckpt, "checkpoint path")->required();
  c_predict->add_option("--image", predict_image, "image to score")->required();

  CLI::App* c_plot = app.add_subcommand("plot-dist", "score distribution figure per category");
  add_common(c_plot, plot_o);

  CLI::App* c_sweep = app.add_subcommand("sweep", "train+eval over one config axis");
  add_common(c_sweep, sweep_o);
  c_sweep->add_option("--axis", sweep_axis, "alpha | lambda | layers | backbone")->required();
  c_sweep->add_option("--values", sweep_values, "axis values (';'-separated for layers)")
      ->required();

  try {
    app.parse(argc, argv);
    if (c_train->parsed()) cmd_train(assemble(train_o));
    if (c_eval->parsed()) cmd_eval(assemble(eval_o), eval_ckpt, dump_scores, save_maps);
    if (c_predict->parsed()) cmd_predict(assemble(predict_o), predict_ckpt, predict_image);
    if (c_plot->parsed()) cmd_plot_dist(assemble(plot_o));
    if (c_sweep->parsed()) cmd_sweep(assemble(sweep_o), sweep_axis, sweep_values);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
