#include "mrkd/figures.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "mrkd/errors.hpp"

namespace mrkd {

std::vector<double> kde_density(const std::vector<double>& samples, int grid_points) {
  std::vector<double> density(static_cast<std::size_t>(grid_points), 0.0);
  if (samples.empty()) return density;

  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= n;
  double var = 0.0;
  for (double s : samples) var += (s - mean) * (s - mean);
  var /= n;
  double bw = 1.06 * std::sqrt(var) * std::pow(n, -0.2);  // Silverman
  if (bw < 1e-3) bw = 1e-3;                               // constant-score spike

  for (int i = 0; i < grid_points; ++i) {
    const double x = static_cast<double>(i) / static_cast<double>(grid_points - 1);
    double acc = 0.0;
    for (double s : samples) {
      const double u = (x - s) / bw;
      acc += std::exp(-0.5 * u * u);
    }
    density[static_cast<std::size_t>(i)] = acc / (n * bw * std::sqrt(2.0 * M_PI));
  }
  return density;
}

double density_overlap(const std::vector<double>& f, const std::vector<double>& g) {
  if (f.size() != g.size() || f.empty())
    throw std::invalid_argument("density_overlap: grids must match");
  const double dx = 1.0 / static_cast<double>(f.size() - 1);
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < f.size(); ++i) {
    const double a = std::min(f[i], g[i]);
    const double b = std::min(f[i + 1], g[i + 1]);
    acc += 0.5 * (a + b) * dx;
  }
  return acc;
}

namespace {
void draw_density(cv::Mat& canvas, const std::vector<double>& density, double ymax,
                  const cv::Rect& plot, const cv::Scalar& color) {
  if (density.empty() || ymax <= 0.0) return;
  std::vector<cv::Point> pts;
  for (std::size_t i = 0; i < density.size(); ++i) {
    const int x = plot.x + static_cast<int>(std::lround(
                               static_cast<double>(plot.width - 1) * static_cast<double>(i) /
                               static_cast<double>(density.size() - 1)));
    const int y = plot.y + plot.height - 1 -
                  static_cast<int>(std::lround(static_cast<double>(plot.height - 1) *
                                               std::min(1.0, density[i] / ymax)));
    pts.emplace_back(x, y);
  }
  cv::polylines(canvas, pts, false, color, 2, cv::LINE_AA);
}
}  // namespace

void write_score_distribution_plot(const std::string& path, const std::vector<double>& normal_scores,
                                   const std::vector<double>& abnormal_scores,
                                   const std::string& title) {
  // min-max normalize the pooled scores to [0,1]
  std::vector<double> pooled = normal_scores;
  pooled.insert(pooled.end(), abnormal_scores.begin(), abnormal_scores.end());
  if (pooled.empty()) throw std::invalid_argument("score distribution plot: no scores");
  const double lo = *std::min_element(pooled.begin(), pooled.end());
  const double hi = *std::max_element(pooled.begin(), pooled.end());
  const double span = hi - lo;
  auto norm = [&](const std::vector<double>& v) {
    std::vector<double> out;
    out.reserve(v.size());
    for (double s : v) out.push_back(span > 0.0 ? (s - lo) / span : 0.5);
    return out;
  };

  std::vector<double> dn = kde_density(norm(normal_scores));
  std::vector<double> da = kde_density(norm(abnormal_scores));
  double ymax = 0.0;
  for (double v : dn) ymax = std::max(ymax, v);
  for (double v : da) ymax = std::max(ymax, v);

  const int W = 640, H = 480;
  cv::Mat canvas(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
  const cv::Rect plot(60, 50, W - 90, H - 110);
  cv::rectangle(canvas, plot, cv::Scalar(120, 120, 120), 1);
  cv::putText(canvas, title, {plot.x, 32}, cv::FONT_HERSHEY_SIMPLEX, 0.7, cv::Scalar(0, 0, 0), 1,
              cv::LINE_AA);
  cv::putText(canvas, "normalized anomaly score", {plot.x + plot.width / 2 - 110, H - 20},
              cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  cv::putText(canvas, "0", {plot.x - 8, plot.y + plot.height + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
              cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  cv::putText(canvas, "1", {plot.x + plot.width - 4, plot.y + plot.height + 18},
              cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);

  if (!normal_scores.empty()) draw_density(canvas, dn, ymax, plot, cv::Scalar(200, 80, 0));
  if (!abnormal_scores.empty()) draw_density(canvas, da, ymax, plot, cv::Scalar(0, 0, 220));
  cv::putText(canvas, "normal", {plot.x + plot.width - 120, plot.y + 20},
              cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(200, 80, 0), 1, cv::LINE_AA);
  cv::putText(canvas, "abnormal", {plot.x + plot.width - 120, plot.y + 40},
              cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 220), 1, cv::LINE_AA);

  if (!cv::imwrite(path, canvas)) throw DataError("cannot write figure: " + path);
}

void write_heatmap_overlay(const std::string& path, const Tensor& pixels_standardized,
                           const ScoreMap& map) {
  const int H = pixels_standardized.dim(1), W = pixels_standardized.dim(2);
  Tensor img = destandardize(pixels_standardized);
  cv::Mat base(H, W, CV_8UC3);
  for (int i = 0; i < H; ++i) {
    cv::Vec3b* row = base.ptr<cv::Vec3b>(i);
    for (int j = 0; j < W; ++j)
      for (int c = 0; c < 3; ++c)
        row[j][2 - c] = static_cast<unsigned char>(
            std::lround(std::clamp(img.at(c, i, j), 0.0, 1.0) * 255.0));
  }

  const double lo = *std::min_element(map.values.begin(), map.values.end());
  const double hi = *std::max_element(map.values.begin(), map.values.end());
  const double span = hi - lo;
  cv::Mat gray(map.h, map.w, CV_8UC1);
  for (int i = 0; i < map.h; ++i) {
    unsigned char* row = gray.ptr<unsigned char>(i);
    for (int j = 0; j < map.w; ++j)
      row[j] = static_cast<unsigned char>(
          std::lround(span > 0.0 ? (map.at(i, j) - lo) / span * 255.0 : 0.0));
  }
  cv::Mat heat;
  cv::applyColorMap(gray, heat, cv::COLORMAP_JET);
  if (heat.rows != H || heat.cols != W) cv::resize(heat, heat, cv::Size(W, H), 0, 0, cv::INTER_LINEAR);

  cv::Mat blended;
  cv::addWeighted(base, 0.5, heat, 0.5, 0.0, blended);
  if (!cv::imwrite(path, blended)) throw DataError("cannot write heatmap: " + path);
}

}  // namespace mrkd
