#include "mrkd/synthesis.hpp"

#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>

#include "mrkd/errors.hpp"

namespace mrkd {

void SynthesisParams::validate() const {
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must be in [0,1]");
  if (patch_count_range.first < 0 || patch_count_range.second < patch_count_range.first)
    throw ConfigError("patch_count range must be ordered and non-negative");
  if (patch_area_range.first <= 0.0 || patch_area_range.second < patch_area_range.first ||
      patch_area_range.second > 0.25)
    throw ConfigError("patch_area range must lie in (0, 0.25] and be ordered");
  if (aspect_range.first <= 0.0 || aspect_range.second < aspect_range.first)
    throw ConfigError("aspect range must be positive and ordered");
}

Tensor estimate_foreground(const Tensor& pixels_standardized) {
  Tensor img = destandardize(pixels_standardized);
  const int H = img.dim(1), W = img.dim(2);

  std::vector<double> gray(static_cast<std::size_t>(H) * W);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      gray[static_cast<std::size_t>(i) * W + j] =
          0.299 * img.at(0, i, j) + 0.587 * img.at(1, i, j) + 0.114 * img.at(2, i, j);

  // Otsu over a 256-bin histogram
  int hist[256] = {0};
  for (double g : gray) {
    int b = std::clamp(static_cast<int>(g * 255.0), 0, 255);
    ++hist[b];
  }
  const double total = static_cast<double>(gray.size());
  double sum_all = 0.0;
  for (int b = 0; b < 256; ++b) sum_all += b * static_cast<double>(hist[b]);
  double w0 = 0.0, sum0 = 0.0, best_var = -1.0;
  int thr = 127;
  for (int b = 0; b < 256; ++b) {
    w0 += hist[b];
    if (w0 == 0.0) continue;
    const double w1 = total - w0;
    if (w1 == 0.0) break;
    sum0 += b * static_cast<double>(hist[b]);
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double var = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (var > best_var) {
      best_var = var;
      thr = b;
    }
  }
  auto above_thr = [&](int i, int j) {
    const int b = std::clamp(static_cast<int>(gray[static_cast<std::size_t>(i) * W + j] * 255.0), 0, 255);
    return b > thr;
  };

  // polarity: the class that is rarer on the image border is the object
  int border_above = 0, border_total = 0;
  auto is_border = [&](int i, int j) { return i == 0 || j == 0 || i == H - 1 || j == W - 1; };
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      if (is_border(i, j)) {
        ++border_total;
        border_above += above_thr(i, j);
      }
  const bool fg_above = border_above * 2 < border_total;

  Tensor mask({H, W});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) mask.at(i, j) = (above_thr(i, j) == fg_above) ? 1.0 : 0.0;
  return mask;
}

namespace {

struct PatchRect {
  int top, left, h, w;     // placement in target
  int src_top, src_left;   // crop origin in source
};

// Gradient-domain blend of the source crop over the target rect. The rect is
// kept one pixel inside the image so every unknown has four valid neighbors;
// boundary values come from the current target.
void poisson_blend(Tensor& dst01, const Tensor& src01, const PatchRect& r) {
  const int W = dst01.dim(2);
  const int n = r.h * r.w;
  auto idx = [&](int i, int j) { return i * r.w + j; };

  Eigen::SparseMatrix<double> A(n, n);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(n) * 5);
  for (int i = 0; i < r.h; ++i) {
    for (int j = 0; j < r.w; ++j) {
      trip.emplace_back(idx(i, j), idx(i, j), 4.0);
      if (i > 0) trip.emplace_back(idx(i, j), idx(i - 1, j), -1.0);
      if (i < r.h - 1) trip.emplace_back(idx(i, j), idx(i + 1, j), -1.0);
      if (j > 0) trip.emplace_back(idx(i, j), idx(i, j - 1), -1.0);
      if (j < r.w - 1) trip.emplace_back(idx(i, j), idx(i, j + 1), -1.0);
    }
  }
  A.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  solver.compute(A);
  if (solver.info() != Eigen::Success) throw std::runtime_error("poisson blend: factorization failed");

  const int di[4] = {-1, 1, 0, 0};
  const int dj[4] = {0, 0, -1, 1};
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd b(n);
    const double* dp = dst01.data() + static_cast<std::int64_t>(c) * dst01.dim(1) * W;
    const double* sp = src01.data() + static_cast<std::int64_t>(c) * src01.dim(1) * src01.dim(2);
    const int sW = src01.dim(2);
    for (int i = 0; i < r.h; ++i) {
      for (int j = 0; j < r.w; ++j) {
        const int ti = r.top + i, tj = r.left + j;
        const int si = r.src_top + i, sj = r.src_left + j;
        double rhs = 0.0;
        for (int k = 0; k < 4; ++k) {
          // guidance: source gradients
          rhs += sp[static_cast<std::int64_t>(si) * sW + sj] -
                 sp[static_cast<std::int64_t>(si + di[k]) * sW + (sj + dj[k])];
          const int ni = i + di[k], nj = j + dj[k];
          if (ni < 0 || ni >= r.h || nj < 0 || nj >= r.w) {
            // Dirichlet boundary from the target
            rhs += dp[static_cast<std::int64_t>(ti + di[k]) * W + (tj + dj[k])];
          }
        }
        b[idx(i, j)] = rhs;
      }
    }
    Eigen::VectorXd u = solver.solve(b);
    double* out = dst01.data() + static_cast<std::int64_t>(c) * dst01.dim(1) * W;
    for (int i = 0; i < r.h; ++i)
      for (int j = 0; j < r.w; ++j)
        out[static_cast<std::int64_t>(r.top + i) * W + (r.left + j)] =
            std::clamp(u[idx(i, j)], 0.0, 1.0);
  }
}

}  // namespace

SyntheticSample synthesize(const ImageRecord& target, const ImageRecord& source,
                           const SynthesisParams& params, Rng& rng) {
  params.validate();
  const int H = target.pixels.dim(1), W = target.pixels.dim(2);
  if (source.pixels.dim(1) != H || source.pixels.dim(2) != W)
    throw std::invalid_argument("synthesize: target and source sizes differ");

  SyntheticSample out;
  out.image = target.pixels;
  out.anomaly_mask = Tensor({H, W});

  const int k = rng.uniform_int(params.patch_count_range.first, params.patch_count_range.second);
  if (k == 0) return out;

  std::vector<std::pair<int, int>> fg_coords;
  if (params.foreground == SynthesisParams::Foreground::otsu) {
    Tensor fg = estimate_foreground(target.pixels);
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        if (fg.at(i, j) > 0.5) fg_coords.emplace_back(i, j);
    if (fg_coords.empty()) {
      out.foreground_fallback = true;
      std::cerr << "warning: empty foreground estimate for " << target.source_path
                << ", placing patches over the full image\n";
    }
  }
  if (fg_coords.empty()) {
    fg_coords.reserve(static_cast<std::size_t>(H) * W);
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) fg_coords.emplace_back(i, j);
  }

  const double total_frac = rng.uniform(params.patch_area_range.first, params.patch_area_range.second);
  const double per_patch_area = total_frac * H * W / static_cast<double>(k);

  const bool paste = params.blend == SynthesisParams::Blend::paste;
  Tensor dst01;
  Tensor src01;
  if (!paste) {
    dst01 = destandardize(target.pixels);
    src01 = destandardize(source.pixels);
  }

  for (int p = 0; p < k; ++p) {
    const double aspect = std::exp(rng.uniform(std::log(params.aspect_range.first),
                                               std::log(params.aspect_range.second)));
    int ph = std::max(1, static_cast<int>(std::lround(std::sqrt(per_patch_area / aspect))));
    int pw = std::max(1, static_cast<int>(std::lround(std::sqrt(per_patch_area * aspect))));
    ph = std::min(ph, H - 2);
    pw = std::min(pw, W - 2);

    const auto [ci, cj] = fg_coords[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(fg_coords.size()) - 1))];
    const int top = std::clamp(ci - ph / 2, 1, H - 1 - ph);
    const int left = std::clamp(cj - pw / 2, 1, W - 1 - pw);
    const int src_top = rng.uniform_int(1, H - 1 - ph);
    const int src_left = rng.uniform_int(1, W - 1 - pw);

    PatchRect r{top, left, ph, pw, src_top, src_left};
    if (paste) {
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < ph; ++i)
          for (int j = 0; j < pw; ++j)
            out.image.at(c, top + i, left + j) = source.pixels.at(c, src_top + i, src_left + j);
    } else {
      poisson_blend(dst01, src01, r);
    }
    for (int i = 0; i < ph; ++i)
      for (int j = 0; j < pw; ++j) out.anomaly_mask.at(top + i, left + j) = 1.0;
  }

  if (!paste) out.image = standardize(dst01);
  out.was_augmented = true;
  return out;
}

std::vector<SyntheticSample> apply_ilm(const std::vector<ImageRecord>& batch,
                                       const SynthesisParams& params, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("apply_ilm: empty batch");
  std::vector<SyntheticSample> out;
  out.reserve(batch.size());
  const int n = static_cast<int>(batch.size());
  for (int i = 0; i < n; ++i) {
    if (rng.bernoulli(params.alpha)) {
      int j = i;
      if (n > 1) {
        j = rng.uniform_int(0, n - 2);
        if (j >= i) ++j;
      }
      out.push_back(synthesize(batch[static_cast<std::size_t>(i)],
                               batch[static_cast<std::size_t>(j)], params, rng));
    } else {
      SyntheticSample s;
      s.image = batch[static_cast<std::size_t>(i)].pixels;
      s.anomaly_mask = Tensor({batch[static_cast<std::size_t>(i)].pixels.dim(1),
                               batch[static_cast<std::size_t>(i)].pixels.dim(2)});
      out.push_back(std::move(s));
    }
  }
  return out;
}

void dump_synthetic_debug(const SyntheticSample& sample, const std::string& dir,
                          const std::string& stem) {
  std::filesystem::create_directories(dir);
  save_image_png(dir + "/" + stem + "_image.png", sample.image, true);
  save_mask_png(dir + "/" + stem + "_mask.png", sample.anomaly_mask);
}

}  // namespace mrkd
