#pragma once

#include <string>
#include <vector>

#include "mrkd/dataset.hpp"
#include "mrkd/model.hpp"

namespace mrkd {

// Per-pixel anomaly map plus its scalar reduction. Values are bounded by
// [0, 2*|layers|]; image_score is the exact maximum over the map.
struct ScoreMap {
  int h = 0, w = 0;
  std::vector<double> values;  // row-major
  double image_score = 0.0;
  std::vector<int> layers;  // 1-based selected levels
  std::uint64_t seed = 0;   // masking stream used to produce it

  std::vector<Tensor> layer_maps;  // per-level maps at output size, optional

  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * w + j]; }
  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * w + j]; }
};

// One minus channel-wise cosine per position and level, each level's map
// bilinearly upsampled to out_size^2 and the selected maps summed. Both
// pyramids must be single-sample.
ScoreMap anomaly_map(const FeaturePyramid& teacher_pyr, const FeaturePyramid& restored_pyr,
                     int out_size, const std::vector<int>& layers, bool keep_layer_maps = false);

// Full test-time pass for one record: extract, compress, decode, mask with
// the given ratio, restore, score. The seed drives the masking stream and is
// recorded on the returned map.
ScoreMap score_image(const ImageRecord& record, MrkdModel& model, double mask_ratio,
                     std::uint64_t seed, const std::vector<int>& layers,
                     bool keep_layer_maps = false);

// Gaussian blur with mirrored edges; sigma = 0 returns the map unchanged.
// image_score is recomputed.
ScoreMap smooth_map(const ScoreMap& map, double sigma);

// 16-bit grayscale PNG, values mapped linearly from [0, 2*|layers|].
void write_map_png16(const ScoreMap& map, const std::string& path);

// Flat binary dump: magic, sizes, layer set, seed, score, then raw doubles.
void write_map_raw(const ScoreMap& map, const std::string& path);
ScoreMap read_map_raw(const std::string& path);

}  // namespace mrkd
