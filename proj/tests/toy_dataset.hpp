#pragma once

// Procedural texture fixtures shared by the unit and acceptance suites.
// Normal images are drawn from one woven-texture family; defects are
// elliptical patches of an off-family texture, with pixel-exact masks.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "mrkd/dataset.hpp"
#include "mrkd/rng.hpp"

namespace toy {

inline mrkd::Tensor texture_image(int size, mrkd::Rng& rng) {
  const double f1 = 5.0 + rng.uniform(-0.5, 0.5);
  const double f2 = 7.0 + rng.uniform(-0.5, 0.5);
  const double f3 = 11.0 + rng.uniform(-0.5, 0.5);
  const double p1 = rng.uniform(0.0, 2.0 * M_PI);
  const double p2 = rng.uniform(0.0, 2.0 * M_PI);
  const double p3 = rng.uniform(0.0, 2.0 * M_PI);
  mrkd::Tensor img({3, size, size});
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      const double x = static_cast<double>(j) / size, y = static_cast<double>(i) / size;
      const double g = 0.5 + 0.22 * std::sin(2.0 * M_PI * f1 * x + p1) * std::sin(2.0 * M_PI * f2 * y + p2) +
                       0.12 * std::sin(2.0 * M_PI * f3 * (x + y) + p3);
      const double n = rng.uniform(-0.015, 0.015);
      img.at(0, i, j) = std::clamp(0.75 * g + 0.15 + n, 0.0, 1.0);
      img.at(1, i, j) = std::clamp(0.65 * g + 0.10 + n, 0.0, 1.0);
      img.at(2, i, j) = std::clamp(0.55 * g + 0.30 + n, 0.0, 1.0);
    }
  }
  return img;
}

// paints an elliptical off-family patch; returns the {0,1} footprint
inline mrkd::Tensor paint_anomaly(mrkd::Tensor& img01, mrkd::Rng& rng) {
  const int size = img01.dim(1);
  const double fa = 17.0 + rng.uniform(-1.0, 1.0);
  const double pa = rng.uniform(0.0, 2.0 * M_PI);
  const int ry = rng.uniform_int(size / 10, size / 5);
  const int rx = rng.uniform_int(size / 10, size / 5);
  const int ci = rng.uniform_int(ry + 2, size - ry - 3);
  const int cj = rng.uniform_int(rx + 2, size - rx - 3);

  mrkd::Tensor mask({size, size});
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      const double di = static_cast<double>(i - ci) / ry, dj = static_cast<double>(j - cj) / rx;
      if (di * di + dj * dj > 1.0) continue;
      mask.at(i, j) = 1.0;
      const double x = static_cast<double>(j) / size, y = static_cast<double>(i) / size;
      const double a = 0.5 + 0.4 * std::sin(2.0 * M_PI * fa * (x - y) + pa);
      img01.at(0, i, j) = std::clamp(0.30 * a + 0.10, 0.0, 1.0);
      img01.at(1, i, j) = std::clamp(0.80 * a + 0.10, 0.0, 1.0);
      img01.at(2, i, j) = std::clamp(0.90 * a + 0.05, 0.0, 1.0);
    }
  }
  return mask;
}

struct ToyDatasetSpec {
  int n_train = 50;
  int n_test_normal = 12;
  int n_test_abnormal = 12;
  int image_size = 128;
  std::uint64_t seed = 7;
};

// writes an mvtec-layout tree under root/category
inline void write_toy_dataset(const std::string& root, const std::string& category,
                              const ToyDatasetSpec& spec) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(root) / category;
  fs::create_directories(base / "train" / "good");
  fs::create_directories(base / "test" / "good");
  fs::create_directories(base / "test" / "defect");
  fs::create_directories(base / "ground_truth" / "defect");

  mrkd::Rng rng(spec.seed);
  char name[32];
  for (int i = 0; i < spec.n_train; ++i) {
    mrkd::Tensor img = texture_image(spec.image_size, rng);
    std::snprintf(name, sizeof(name), "%03d.png", i);
    mrkd::save_image_png((base / "train" / "good" / name).string(), img, false);
  }
  for (int i = 0; i < spec.n_test_normal; ++i) {
    mrkd::Tensor img = texture_image(spec.image_size, rng);
    std::snprintf(name, sizeof(name), "%03d.png", i);
    mrkd::save_image_png((base / "test" / "good" / name).string(), img, false);
  }
  for (int i = 0; i < spec.n_test_abnormal; ++i) {
    mrkd::Tensor img = texture_image(spec.image_size, rng);
    mrkd::Tensor mask = paint_anomaly(img, rng);
    std::snprintf(name, sizeof(name), "%03d.png", i);
    mrkd::save_image_png((base / "test" / "defect" / name).string(), img, false);
    std::snprintf(name, sizeof(name), "%03d_mask.png", i);
    mrkd::save_mask_png((base / "ground_truth" / "defect" / name).string(), mask);
  }
}

inline std::string fresh_temp_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / ("mrkd_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

}  // namespace toy
