#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrkd/tensor.hpp"

namespace mrkd {

enum class Layout { mvtec, mtd, btad };
Layout layout_from_string(const std::string& s);
std::string layout_to_string(Layout l);

enum class Split { train, test };
enum class Label { normal, abnormal };

struct IndexEntry {
  std::string image_path;
  Split split = Split::train;
  Label label = Label::normal;
  std::string defect_name;  // empty for normals
  std::string mask_path;    // empty when there is no ground-truth mask
};

// Immutable once built. Entries are sorted by image path, train entries are
// all normal, and every abnormal test entry carries an existing mask path.
struct DatasetIndex {
  std::string root;
  Layout layout = Layout::mvtec;
  std::string category;
  std::uint64_t split_seed = 0;  // only meaningful for the mtd layout
  std::vector<IndexEntry> entries;

  int count(Split s) const;
  int count(Split s, Label l) const;
};

// split_seed drives the 80/20 normal split of the mtd layout and is ignored
// by the other layouts.
DatasetIndex scan_dataset(const std::string& root, Layout layout, const std::string& category,
                          std::uint64_t split_seed = 0);

std::vector<std::string> list_categories(const std::string& root, Layout layout);

extern const double kImagenetMean[3];
extern const double kImagenetStd[3];

// Decode, bilinear-resize to image_size^2, scale to [0,1], standardize with
// the ImageNet channel statistics. Returns [3,S,S].
Tensor load_image(const std::string& path, int image_size);

// Decode grayscale, nearest-resize, threshold at 0.5. Returns [S,S] of {0,1}.
Tensor load_mask(const std::string& path, int image_size);

// Exact inverses of each other on [0,1] images.
Tensor standardize(const Tensor& chw01);
Tensor destandardize(const Tensor& chw);

struct ImageRecord {
  Tensor pixels;  // [3,S,S], standardized
  Label label = Label::normal;
  Tensor gt_mask;  // [S,S] of {0,1}; empty when absent
  std::string category;
  std::string source_path;
};

ImageRecord load_record(const IndexEntry& entry, const std::string& category, int image_size);

// PNG writers used by debug dumps and figure emission. `standardized` images
// are mapped back through the channel statistics first.
void save_image_png(const std::string& path, const Tensor& chw, bool standardized);
void save_mask_png(const std::string& path, const Tensor& hw);

}  // namespace mrkd
