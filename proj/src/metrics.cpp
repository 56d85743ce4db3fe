#include "mrkd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mrkd/config.hpp"
#include "mrkd/errors.hpp"

namespace mrkd {

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("auroc: scores and labels must be non-empty and aligned");
  std::int64_t n_pos = 0;
  for (int l : labels) n_pos += (l != 0);
  const std::int64_t n_neg = static_cast<std::int64_t>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auroc: both classes required");

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // average ranks over tie groups
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k)
      if (labels[idx[k]] != 0) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

namespace {
void check_aligned(const std::vector<ScoreMap>& maps, const std::vector<Tensor>& gt_masks) {
  if (maps.size() != gt_masks.size() || maps.empty())
    throw std::invalid_argument("maps and gt_masks must be non-empty and aligned");
  for (std::size_t i = 0; i < maps.size(); ++i)
    if (gt_masks[i].dim(0) != maps[i].h || gt_masks[i].dim(1) != maps[i].w)
      throw std::invalid_argument("map/mask size mismatch at index " + std::to_string(i));
}
}  // namespace

double pixel_auroc(const std::vector<ScoreMap>& maps, const std::vector<Tensor>& gt_masks) {
  check_aligned(maps, gt_masks);
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const ScoreMap& m = maps[i];
    const Tensor& g = gt_masks[i];
    for (int r = 0; r < m.h; ++r)
      for (int c = 0; c < m.w; ++c) {
        scores.push_back(m.at(r, c));
        labels.push_back(g.at(r, c) > 0.5 ? 1 : 0);
      }
  }
  return auroc(scores, labels);
}

namespace {

// 8-connected components; returns region id per pixel (-1 for background)
// and appends each region's area.
std::vector<int> label_regions(const Tensor& mask, int first_id, std::vector<std::int64_t>& areas) {
  const int H = mask.dim(0), W = mask.dim(1);
  std::vector<int> region(static_cast<std::size_t>(H) * W, -1);
  int next = first_id;
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      if (mask.at(i, j) <= 0.5 || region[static_cast<std::size_t>(i) * W + j] != -1) continue;
      std::deque<std::pair<int, int>> queue{{i, j}};
      region[static_cast<std::size_t>(i) * W + j] = next;
      std::int64_t area = 0;
      while (!queue.empty()) {
        auto [r, c] = queue.front();
        queue.pop_front();
        ++area;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int nr = r + dr, nc = c + dc;
            if (nr < 0 || nr >= H || nc < 0 || nc >= W) continue;
            if (mask.at(nr, nc) <= 0.5) continue;
            if (region[static_cast<std::size_t>(nr) * W + nc] != -1) continue;
            region[static_cast<std::size_t>(nr) * W + nc] = next;
            queue.emplace_back(nr, nc);
          }
        }
      }
      areas.push_back(area);
      ++next;
    }
  }
  return region;
}

}  // namespace

double aupro(const std::vector<ScoreMap>& maps, const std::vector<Tensor>& gt_masks,
             double fpr_limit) {
  check_aligned(maps, gt_masks);
  if (fpr_limit <= 0.0 || fpr_limit > 1.0)
    throw std::invalid_argument("aupro: fpr_limit must be in (0,1]");

  struct Pix {
    double score;
    int region;  // -1 = negative pixel
  };
  std::vector<Pix> pixels;
  std::vector<std::int64_t> areas;
  std::int64_t total_neg = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    std::vector<int> region = label_regions(gt_masks[i], static_cast<int>(areas.size()), areas);
    const ScoreMap& m = maps[i];
    for (int r = 0; r < m.h; ++r)
      for (int c = 0; c < m.w; ++c) {
        const int reg = region[static_cast<std::size_t>(r) * m.w + c];
        pixels.push_back({m.at(r, c), reg});
        total_neg += (reg == -1);
      }
  }
  if (areas.empty()) throw std::invalid_argument("aupro: no ground-truth regions");
  if (total_neg == 0) throw std::invalid_argument("aupro: no negative pixels");

  std::sort(pixels.begin(), pixels.end(),
            [](const Pix& a, const Pix& b) { return a.score > b.score; });

  const double n_regions = static_cast<double>(areas.size());
  std::vector<std::int64_t> tp(areas.size(), 0);
  double pro_sum = 0.0;  // sum over regions of tp_r / area_r
  std::int64_t fp = 0;

  // descending sweep over distinct score values; each point is the curve at
  // "predict positive where score >= value"
  double area_under = 0.0;
  double prev_fpr = 0.0, prev_pro = 0.0;
  bool done = false;
  std::size_t i = 0;
  while (i < pixels.size() && !done) {
    std::size_t j = i;
    while (j < pixels.size() && pixels[j].score == pixels[i].score) {
      const int reg = pixels[j].region;
      if (reg == -1) {
        ++fp;
      } else {
        pro_sum += 1.0 / static_cast<double>(areas[static_cast<std::size_t>(reg)]);
      }
      ++j;
    }
    const double fpr = static_cast<double>(fp) / static_cast<double>(total_neg);
    const double pro = pro_sum / n_regions;
    if (fpr >= fpr_limit) {
      const double pro_at_limit =
          prev_fpr == fpr ? pro
                          : prev_pro + (pro - prev_pro) * (fpr_limit - prev_fpr) / (fpr - prev_fpr);
      area_under += (fpr_limit - prev_fpr) * 0.5 * (prev_pro + pro_at_limit);
      done = true;
    } else {
      area_under += (fpr - prev_fpr) * 0.5 * (prev_pro + pro);
      prev_fpr = fpr;
      prev_pro = pro;
    }
    i = j;
  }
  if (!done) {
    // curve exhausted below the limit (can only happen at fpr_limit == 1
    // when the final point lands exactly on 1, handled above) — close flat
    area_under += (fpr_limit - prev_fpr) * prev_pro;
  }
  return area_under / fpr_limit;
}

void MetricsReport::recompute_averages() {
  CategoryMetrics sum;
  for (const auto& [name, m] : per_category) {
    sum.auroc_il += m.auroc_il;
    sum.auroc_pl += m.auroc_pl;
    sum.aupro += m.aupro;
  }
  const double n = static_cast<double>(per_category.size());
  averages = {sum.auroc_il / n, sum.auroc_pl / n, sum.aupro / n};
}

CategoryEvalResult evaluate_category(const LoadedCheckpoint& ckpt, const DatasetIndex& index,
                                     const EvalConfig& eval_cfg) {
  std::vector<const IndexEntry*> test_entries;
  for (const auto& e : index.entries)
    if (e.split == Split::test) test_entries.push_back(&e);
  if (test_entries.empty()) throw DataError("evaluate: no test entries for " + index.category);

  const double lambda =
      eval_cfg.lambda_override >= 0.0 ? eval_cfg.lambda_override : ckpt.config->lambda_mask;
  const int image_size = ckpt.config->image_size;
  Rng eval_root = Rng(eval_cfg.eval_seed).fork("flm-eval");

  CategoryEvalResult result;
  std::vector<ScoreMap> maps;
  std::vector<Tensor> gts;
  if (!eval_cfg.map_dump_dir.empty()) std::filesystem::create_directories(eval_cfg.map_dump_dir);

  for (std::size_t i = 0; i < test_entries.size(); ++i) {
    const IndexEntry& entry = *test_entries[i];
    ImageRecord rec = load_record(entry, index.category, image_size);
    const std::uint64_t seed = eval_root.fork(static_cast<std::uint64_t>(i)).state();
    ScoreMap map = score_image(rec, *ckpt.model, lambda, seed, eval_cfg.layers);
    if (eval_cfg.smoothing_sigma > 0.0) map = smooth_map(map, eval_cfg.smoothing_sigma);

    result.scores.push_back(map.image_score);
    result.labels.push_back(rec.label == Label::abnormal ? 1 : 0);
    result.paths.push_back(entry.image_path);
    if (!eval_cfg.map_dump_dir.empty()) {
      char stem[32];
      std::snprintf(stem, sizeof(stem), "%04zu", i);
      write_map_raw(map, eval_cfg.map_dump_dir + "/" + stem + ".map");
      write_map_png16(map, eval_cfg.map_dump_dir + "/" + stem + ".png");
    }
    gts.push_back(rec.gt_mask.empty() ? Tensor({image_size, image_size}) : rec.gt_mask);
    maps.push_back(std::move(map));
  }

  result.metrics.auroc_il = auroc(result.scores, result.labels);
  result.metrics.auroc_pl = pixel_auroc(maps, gts);
  result.metrics.aupro = aupro(maps, gts, eval_cfg.fpr_limit);

  if (!eval_cfg.score_dump_path.empty()) write_scores_csv(result, eval_cfg.score_dump_path);
  return result;
}

namespace {
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}
}  // namespace

void write_report_csv(const MetricsReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write report: " + path);
  f << "category,auroc_il,auroc_pl,aupro\n";
  for (const auto& [name, m] : report.per_category)
    f << name << "," << fmt(m.auroc_il) << "," << fmt(m.auroc_pl) << "," << fmt(m.aupro) << "\n";
  f << "average," << fmt(report.averages.auroc_il) << "," << fmt(report.averages.auroc_pl) << ","
    << fmt(report.averages.aupro) << "\n";
}

void write_report_json(const MetricsReport& report, const std::string& path) {
  nlohmann::json per;
  for (const auto& [name, m] : report.per_category)
    per[name] = {{"auroc_il", m.auroc_il}, {"auroc_pl", m.auroc_pl}, {"aupro", m.aupro}};
  nlohmann::json doc = {
      {"per_category", per},
      {"averages",
       {{"auroc_il", report.averages.auroc_il},
        {"auroc_pl", report.averages.auroc_pl},
        {"aupro", report.averages.aupro}}},
      {"metadata",
       {{"checkpoint_id", report.checkpoint_id},
        {"eval_seed", report.eval_seed},
        {"layer_set", report.layer_set},
        {"fpr_limit", report.fpr_limit},
        {"smoothing_sigma", report.smoothing_sigma}}},
  };
  std::ofstream f(path);
  if (!f) throw DataError("cannot write report: " + path);
  f << doc.dump(2) << "\n";
}

void write_scores_csv(const CategoryEvalResult& result, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write scores: " + path);
  f << "path,label,score\n";
  char buf[64];
  for (std::size_t i = 0; i < result.scores.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", result.scores[i]);
    f << result.paths[i] << "," << result.labels[i] << "," << buf << "\n";
  }
}

std::pair<std::vector<double>, std::vector<int>> read_scores_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open scores csv: " + path);
  std::string line;
  std::getline(f, line);  // header
  std::vector<double> scores;
  std::vector<int> labels;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto c2 = line.rfind(',');
    const auto c1 = line.rfind(',', c2 - 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw DataError("bad scores csv line: " + line);
    labels.push_back(std::stoi(line.substr(c1 + 1, c2 - c1 - 1)));
    scores.push_back(std::stod(line.substr(c2 + 1)));
  }
  return {scores, labels};
}

}  // namespace mrkd
