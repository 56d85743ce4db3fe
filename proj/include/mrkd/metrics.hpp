#pragma once

#include <map>
#include <string>
#include <vector>

#include "mrkd/checkpoint.hpp"
#include "mrkd/dataset.hpp"
#include "mrkd/scoring.hpp"

namespace mrkd {

// Exact rank statistic (ties counted one half). Both classes required.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// auroc over the pooled pixel population of all maps; gt_masks aligned with
// maps (all-zero masks for normal images).
double pixel_auroc(const std::vector<ScoreMap>& maps, const std::vector<Tensor>& gt_masks);

// Per-region-overlap curve vs false-positive rate, regions being the
// 8-connected components of each mask. The threshold sweep visits every
// distinct score value; the curve is integrated to fpr_limit by trapezoid
// and normalized by fpr_limit.
double aupro(const std::vector<ScoreMap>& maps, const std::vector<Tensor>& gt_masks,
             double fpr_limit);

struct CategoryMetrics {
  double auroc_il = 0.0;
  double auroc_pl = 0.0;
  double aupro = 0.0;
};

struct MetricsReport {
  std::map<std::string, CategoryMetrics> per_category;
  CategoryMetrics averages;

  std::string checkpoint_id;
  std::uint64_t eval_seed = 0;
  std::vector<int> layer_set;
  double fpr_limit = 0.3;
  double smoothing_sigma = 0.0;

  void recompute_averages();
};

struct EvalConfig {
  std::uint64_t eval_seed = 0;
  std::vector<int> layers = {1, 2, 3};
  double fpr_limit = 0.3;
  double smoothing_sigma = 0.0;
  double lambda_override = -1.0;  // < 0 means: use the checkpoint's ratio
  std::string score_dump_path;    // per-image csv (path,label,score) when set
  std::string map_dump_dir;       // raw + png16 score maps when set
};

struct CategoryEvalResult {
  CategoryMetrics metrics;
  std::vector<double> scores;  // per test image, index-aligned with paths
  std::vector<int> labels;
  std::vector<std::string> paths;
};

// Scores every test record of the index with a per-image masking stream
// derived from (eval_seed, image position) and assembles the three metrics.
CategoryEvalResult evaluate_category(const LoadedCheckpoint& ckpt, const DatasetIndex& index,
                                     const EvalConfig& eval_cfg);

void write_report_csv(const MetricsReport& report, const std::string& path);
void write_report_json(const MetricsReport& report, const std::string& path);

void write_scores_csv(const CategoryEvalResult& result, const std::string& path);
// returns (scores, labels) pairs read back from a dump
std::pair<std::vector<double>, std::vector<int>> read_scores_csv(const std::string& path);

}  // namespace mrkd
