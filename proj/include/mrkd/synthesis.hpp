#pragma once

#include <utility>
#include <vector>

#include "mrkd/dataset.hpp"
#include "mrkd/rng.hpp"

namespace mrkd {

struct SynthesisParams {
  double alpha = 1.0;  // probability that a training image is augmented
  std::pair<int, int> patch_count_range{1, 3};
  // summed footprint of all patches, as a fraction of the image area
  std::pair<double, double> patch_area_range{0.01, 0.15};
  std::pair<double, double> aspect_range{0.3, 3.0};

  enum class Blend { seamless, paste };
  enum class Foreground { otsu, full };
  Blend blend = Blend::seamless;
  Foreground foreground = Foreground::otsu;

  void validate() const;  // throws ConfigError
};

struct SyntheticSample {
  Tensor image;         // [3,H,W], standardized domain
  Tensor anomaly_mask;  // [H,W] of {0,1}, the patch footprints
  bool was_augmented = false;
  bool foreground_fallback = false;  // foreground estimate was empty
};

// Luma Otsu threshold; the side of the threshold less common on the image
// border is taken as foreground. Returns [H,W] of {0,1} (possibly all zero).
Tensor estimate_foreground(const Tensor& pixels_standardized);

// Crops patches from `source` and blends them into `target` at positions
// centered on the target's foreground. Paste copies pixels verbatim inside
// each patch; seamless solves a gradient-domain blend over each patch, and
// in both modes pixels outside the footprint are untouched (difference
// exactly zero).
SyntheticSample synthesize(const ImageRecord& target, const ImageRecord& source,
                           const SynthesisParams& params, Rng& rng);

// Bernoulli(alpha) per record; non-augmented records pass through with an
// all-zero mask. The output is aligned index-for-index with the batch, and
// the patch source of each augmented record is another batch member.
std::vector<SyntheticSample> apply_ilm(const std::vector<ImageRecord>& batch,
                                       const SynthesisParams& params, Rng& rng);

void dump_synthetic_debug(const SyntheticSample& sample, const std::string& dir,
                          const std::string& stem);

}  // namespace mrkd
