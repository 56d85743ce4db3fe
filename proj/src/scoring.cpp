#include "mrkd/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <opencv2/imgcodecs.hpp>

#include "mrkd/errors.hpp"

namespace mrkd {

ScoreMap anomaly_map(const FeaturePyramid& teacher_pyr, const FeaturePyramid& restored_pyr,
                     int out_size, const std::vector<int>& layers, bool keep_layer_maps) {
  if (layers.empty()) throw std::invalid_argument("anomaly_map: empty layer set");
  if (teacher_pyr.size() != restored_pyr.size())
    throw std::invalid_argument("anomaly_map: pyramid level count mismatch");

  ScoreMap out;
  out.h = out.w = out_size;
  out.layers = layers;
  out.values.assign(static_cast<std::size_t>(out_size) * out_size, 0.0);

  for (int layer : layers) {
    if (layer < 1 || layer > static_cast<int>(teacher_pyr.size()))
      throw std::invalid_argument("anomaly_map: layer index out of range: " + std::to_string(layer));
    const Tensor& t = teacher_pyr[static_cast<std::size_t>(layer - 1)];
    const Tensor& g = restored_pyr[static_cast<std::size_t>(layer - 1)];
    if (!t.same_shape(g)) throw std::invalid_argument("anomaly_map: level shape mismatch");
    if (t.dim(0) != 1) throw std::invalid_argument("anomaly_map: expected single-sample pyramids");
    const int C = t.dim(1), H = t.dim(2), W = t.dim(3);

    Tensor level({1, 1, H, W});
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        double dot = 0.0, nt = 0.0, ng = 0.0;
        for (int c = 0; c < C; ++c) {
          const double tv = t.at(0, c, i, j), gv = g.at(0, c, i, j);
          dot += tv * gv;
          nt += tv * tv;
          ng += gv * gv;
        }
        level.at(0, 0, i, j) = 1.0 - dot / (std::sqrt(nt) * std::sqrt(ng) + kCosineEpsilon);
      }
    }
    Tensor up = nn::upsample_bilinear(level, out_size, out_size);
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += up[static_cast<std::int64_t>(i)];
    if (keep_layer_maps) out.layer_maps.push_back(std::move(up));
  }

  out.image_score = *std::max_element(out.values.begin(), out.values.end());
  return out;
}

ScoreMap score_image(const ImageRecord& record, MrkdModel& model, double mask_ratio,
                     std::uint64_t seed, const std::vector<int>& layers, bool keep_layer_maps) {
  const int C = record.pixels.dim(0), H = record.pixels.dim(1), W = record.pixels.dim(2);
  Tensor x({1, C, H, W});
  std::memcpy(x.data(), record.pixels.data(), static_cast<std::size_t>(record.pixels.numel()) * sizeof(double));
  Rng rng(seed);
  RestorePass pass = model.forward_restore(x, mask_ratio, rng);
  ScoreMap map = anomaly_map(pass.teacher, pass.restored, H, layers, keep_layer_maps);
  map.seed = seed;
  return map;
}

ScoreMap smooth_map(const ScoreMap& map, double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("smooth_map: sigma must be >= 0");
  if (sigma == 0.0) return map;

  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    ksum += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= ksum;

  // mirror without repeating the edge sample
  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
  };

  ScoreMap out = map;
  std::vector<double> tmp(map.values.size());
  for (int i = 0; i < map.h; ++i) {
    for (int j = 0; j < map.w; ++j) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[static_cast<std::size_t>(k + radius)] * map.at(i, reflect(j + k, map.w));
      tmp[static_cast<std::size_t>(i) * map.w + j] = acc;
    }
  }
  for (int i = 0; i < map.h; ++i) {
    for (int j = 0; j < map.w; ++j) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[static_cast<std::size_t>(k + radius)] *
               tmp[static_cast<std::size_t>(reflect(i + k, map.h)) * map.w + j];
      out.at(i, j) = acc;
    }
  }
  out.layer_maps.clear();
  out.image_score = *std::max_element(out.values.begin(), out.values.end());
  return out;
}

void write_map_png16(const ScoreMap& map, const std::string& path) {
  const double vmax = 2.0 * static_cast<double>(map.layers.size());
  cv::Mat mat(map.h, map.w, CV_16UC1);
  for (int i = 0; i < map.h; ++i) {
    auto* row = mat.ptr<std::uint16_t>(i);
    for (int j = 0; j < map.w; ++j) {
      const double v = std::clamp(map.at(i, j) / vmax, 0.0, 1.0);
      row[j] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    }
  }
  if (!cv::imwrite(path, mat)) throw DataError("cannot write score map png: " + path);
}

static const char kMapMagic[8] = {'M', 'R', 'K', 'D', 'M', 'A', 'P', '1'};

void write_map_raw(const ScoreMap& map, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write score map: " + path);
  f.write(kMapMagic, 8);
  const std::int32_t h = map.h, w = map.w, nl = static_cast<std::int32_t>(map.layers.size());
  f.write(reinterpret_cast<const char*>(&h), 4);
  f.write(reinterpret_cast<const char*>(&w), 4);
  f.write(reinterpret_cast<const char*>(&nl), 4);
  for (int l : map.layers) {
    const std::int32_t li = l;
    f.write(reinterpret_cast<const char*>(&li), 4);
  }
  f.write(reinterpret_cast<const char*>(&map.seed), 8);
  f.write(reinterpret_cast<const char*>(&map.image_score), 8);
  f.write(reinterpret_cast<const char*>(map.values.data()),
          static_cast<std::streamsize>(map.values.size() * sizeof(double)));
  if (!f) throw DataError("write failed: " + path);
}

ScoreMap read_map_raw(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open score map: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMapMagic, 8) != 0)
    throw DataError("bad score map magic: " + path);
  std::int32_t h = 0, w = 0, nl = 0;
  f.read(reinterpret_cast<char*>(&h), 4);
  f.read(reinterpret_cast<char*>(&w), 4);
  f.read(reinterpret_cast<char*>(&nl), 4);
  ScoreMap map;
  map.h = h;
  map.w = w;
  for (int i = 0; i < nl; ++i) {
    std::int32_t li = 0;
    f.read(reinterpret_cast<char*>(&li), 4);
    map.layers.push_back(li);
  }
  f.read(reinterpret_cast<char*>(&map.seed), 8);
  f.read(reinterpret_cast<char*>(&map.image_score), 8);
  map.values.resize(static_cast<std::size_t>(h) * static_cast<std::size_t>(w));
  f.read(reinterpret_cast<char*>(map.values.data()),
         static_cast<std::streamsize>(map.values.size() * sizeof(double)));
  if (!f) throw DataError("truncated score map: " + path);
  return map;
}

}  // namespace mrkd
