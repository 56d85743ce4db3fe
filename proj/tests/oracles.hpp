#pragma once

// Independent reference implementations used to check the metric code.
// These deliberately recompute everything from scratch at each threshold
// (no incremental bookkeeping) and label regions with a union-find scan
// instead of BFS.

#include <map>
#include <set>
#include <vector>

#include "mrkd/scoring.hpp"
#include "mrkd/tensor.hpp"

namespace oracle {

// exhaustive pair-comparison statistic, ties counted one half
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

struct UnionFind {
  std::vector<int> parent;
  int add() {
    parent.push_back(static_cast<int>(parent.size()));
    return parent.back();
  }
  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)];
    return x;
  }
  void unite(int a, int b) { parent[static_cast<std::size_t>(find(a))] = find(b); }
};

// 8-connectivity via two-pass scan with union-find
inline std::vector<int> label_regions(const mrkd::Tensor& mask, int& n_regions) {
  const int H = mask.dim(0), W = mask.dim(1);
  std::vector<int> lbl(static_cast<std::size_t>(H) * W, -1);
  UnionFind uf;
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      if (mask.at(i, j) <= 0.5) continue;
      std::set<int> neighbors;
      for (auto [di, dj] : {std::pair{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}}) {
        const int ni = i + di, nj = j + dj;
        if (ni < 0 || nj < 0 || nj >= W) continue;
        const int l = lbl[static_cast<std::size_t>(ni) * W + nj];
        if (l >= 0) neighbors.insert(uf.find(l));
      }
      if (neighbors.empty()) {
        lbl[static_cast<std::size_t>(i) * W + j] = uf.add();
      } else {
        const int keep = *neighbors.begin();
        lbl[static_cast<std::size_t>(i) * W + j] = keep;
        for (int other : neighbors) uf.unite(other, keep);
      }
    }
  std::map<int, int> remap;
  for (auto& l : lbl)
    if (l >= 0) {
      const int root = uf.find(l);
      auto it = remap.find(root);
      if (it == remap.end()) it = remap.emplace(root, static_cast<int>(remap.size())).first;
      l = it->second;
    }
  n_regions = static_cast<int>(remap.size());
  return lbl;
}

// full recomputation at every distinct threshold
inline double aupro(const std::vector<mrkd::ScoreMap>& maps, const std::vector<mrkd::Tensor>& gts,
                    double fpr_limit) {
  std::vector<std::vector<int>> labels(maps.size());
  std::vector<std::int64_t> areas;
  int total_regions = 0;
  for (std::size_t m = 0; m < maps.size(); ++m) {
    int n = 0;
    labels[m] = label_regions(gts[m], n);
    std::vector<std::int64_t> local(static_cast<std::size_t>(n), 0);
    for (int l : labels[m])
      if (l >= 0) ++local[static_cast<std::size_t>(l)];
    for (auto a : local) areas.push_back(a);
    for (auto& l : labels[m])
      if (l >= 0) l += total_regions;
    total_regions += n;
  }

  std::set<double> thresholds;
  std::int64_t total_neg = 0;
  for (std::size_t m = 0; m < maps.size(); ++m) {
    for (double v : maps[m].values) thresholds.insert(v);
    for (std::int64_t i = 0; i < gts[m].numel(); ++i) total_neg += gts[m][i] <= 0.5;
  }

  std::vector<std::pair<double, double>> curve{{0.0, 0.0}};
  for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
    const double t = *it;
    std::int64_t fp = 0;
    std::vector<std::int64_t> tp(static_cast<std::size_t>(total_regions), 0);
    for (std::size_t m = 0; m < maps.size(); ++m) {
      const mrkd::ScoreMap& map = maps[m];
      for (int i = 0; i < map.h; ++i)
        for (int j = 0; j < map.w; ++j) {
          if (map.at(i, j) < t) continue;
          const int reg = labels[m][static_cast<std::size_t>(i) * map.w + j];
          if (reg < 0) ++fp;
          else ++tp[static_cast<std::size_t>(reg)];
        }
    }
    double pro = 0.0;
    for (std::size_t r = 0; r < areas.size(); ++r)
      pro += static_cast<double>(tp[r]) / static_cast<double>(areas[r]);
    pro /= static_cast<double>(total_regions);
    curve.emplace_back(static_cast<double>(fp) / static_cast<double>(total_neg), pro);
  }

  double area = 0.0;
  for (std::size_t k = 1; k < curve.size(); ++k) {
    auto [f0, p0] = curve[k - 1];
    auto [f1, p1] = curve[k];
    if (f1 <= fpr_limit) {
      area += (f1 - f0) * 0.5 * (p0 + p1);
    } else {
      const double pl = f1 == f0 ? p1 : p0 + (p1 - p0) * (fpr_limit - f0) / (f1 - f0);
      area += (fpr_limit - f0) * 0.5 * (p0 + pl);
      break;
    }
  }
  return area / fpr_limit;
}

}  // namespace oracle
