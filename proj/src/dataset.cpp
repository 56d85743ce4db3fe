#include "mrkd/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "mrkd/errors.hpp"
#include "mrkd/rng.hpp"

namespace fs = std::filesystem;

namespace mrkd {

const double kImagenetMean[3] = {0.485, 0.456, 0.406};
const double kImagenetStd[3] = {0.229, 0.224, 0.225};

Layout layout_from_string(const std::string& s) {
  if (s == "mvtec") return Layout::mvtec;
  if (s == "mtd") return Layout::mtd;
  if (s == "btad") return Layout::btad;
  throw ConfigError("unknown layout: " + s);
}

std::string layout_to_string(Layout l) {
  switch (l) {
    case Layout::mvtec: return "mvtec";
    case Layout::mtd: return "mtd";
    case Layout::btad: return "btad";
  }
  return "?";
}

int DatasetIndex::count(Split s) const {
  int n = 0;
  for (const auto& e : entries) n += (e.split == s);
  return n;
}

int DatasetIndex::count(Split s, Label l) const {
  int n = 0;
  for (const auto& e : entries) n += (e.split == s && e.label == l);
  return n;
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" ||
         ext == ".tiff";
}

std::vector<fs::path> sorted_images(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

void finalize(DatasetIndex& idx) {
  std::sort(idx.entries.begin(), idx.entries.end(),
            [](const IndexEntry& a, const IndexEntry& b) { return a.image_path < b.image_path; });
  for (const auto& e : idx.entries) {
    if (e.split == Split::train && e.label != Label::normal)
      throw DataError("abnormal image in train split: " + e.image_path);
    if (e.split == Split::test && e.label == Label::abnormal) {
      if (e.mask_path.empty() || !fs::exists(e.mask_path))
        throw DataError("abnormal test image has no ground-truth mask: " + e.image_path);
    }
  }
}

DatasetIndex scan_mvtec(const fs::path& root, const std::string& category) {
  const fs::path base = root / category;
  if (!fs::exists(base)) throw DataError("dataset category directory not found: " + base.string());
  DatasetIndex idx{root.string(), Layout::mvtec, category, 0, {}};

  for (const auto& p : sorted_images(base / "train" / "good"))
    idx.entries.push_back({p.string(), Split::train, Label::normal, "", ""});

  for (const auto& defect_dir : sorted_subdirs(base / "test")) {
    const std::string defect = defect_dir.filename().string();
    for (const auto& p : sorted_images(defect_dir)) {
      if (defect == "good") {
        idx.entries.push_back({p.string(), Split::test, Label::normal, "", ""});
      } else {
        fs::path mask = base / "ground_truth" / defect / (p.stem().string() + "_mask.png");
        idx.entries.push_back({p.string(), Split::test, Label::abnormal, defect, mask.string()});
      }
    }
  }
  finalize(idx);
  return idx;
}

bool looks_like_mask(const fs::path& p) {
  const std::string stem = p.stem().string();
  return stem.size() > 5 && stem.substr(stem.size() - 5) == "_mask";
}

// mask named "<stem>_mask.*", or any file whose stem extends the image stem
fs::path match_mask_by_stem(const fs::path& dir, const std::string& stem) {
  if (!fs::exists(dir)) return {};
  fs::path prefix_hit;
  std::vector<fs::path> files = sorted_images(dir);
  for (const auto& f : files) {
    const std::string fstem = f.stem().string();
    if (fstem == stem + "_mask" || fstem == stem) return f;
    if (prefix_hit.empty() && fstem.rfind(stem, 0) == 0) prefix_hit = f;
  }
  return prefix_hit;
}

DatasetIndex scan_mtd(const fs::path& root, const std::string& category, std::uint64_t seed) {
  if (!fs::exists(root)) throw DataError("dataset root not found: " + root.string());
  DatasetIndex idx{root.string(), Layout::mtd, category.empty() ? "mtd" : category, seed, {}};

  std::vector<fs::path> normals = sorted_images(root / "normal");
  if (normals.empty()) throw DataError("mtd layout: no images under " + (root / "normal").string());

  // seeded 80/20 split of the normal images; the shuffle decides membership,
  // the final index order is by path
  std::vector<std::size_t> order(normals.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng(seed).fork("mtd-split");
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  const std::size_t n_train = static_cast<std::size_t>(0.8 * static_cast<double>(normals.size()));
  std::vector<bool> in_train(normals.size(), false);
  for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;

  for (std::size_t i = 0; i < normals.size(); ++i)
    idx.entries.push_back({normals[i].string(), in_train[i] ? Split::train : Split::test,
                           Label::normal, "", ""});

  for (const auto& p : sorted_images(root / "defect")) {
    if (looks_like_mask(p)) continue;
    fs::path mask;
    for (const char* ext : {".png", ".jpg", ".bmp", ".tif"}) {
      fs::path cand = root / "defect" / (p.stem().string() + "_mask" + ext);
      if (fs::exists(cand)) {
        mask = cand;
        break;
      }
    }
    if (mask.empty())
      throw DataError("mtd layout: no mask found for defect image: " + p.string());
    idx.entries.push_back({p.string(), Split::test, Label::abnormal, "defect", mask.string()});
  }
  finalize(idx);
  return idx;
}

DatasetIndex scan_btad(const fs::path& root, const std::string& category) {
  const fs::path base = root / category;
  if (!fs::exists(base)) throw DataError("dataset category directory not found: " + base.string());
  DatasetIndex idx{root.string(), Layout::btad, category, 0, {}};

  for (const auto& p : sorted_images(base / "train" / "ok"))
    idx.entries.push_back({p.string(), Split::train, Label::normal, "", ""});
  for (const auto& p : sorted_images(base / "test" / "ok"))
    idx.entries.push_back({p.string(), Split::test, Label::normal, "", ""});
  for (const auto& p : sorted_images(base / "test" / "ko")) {
    fs::path mask = match_mask_by_stem(base / "ground_truth" / "ko", p.stem().string());
    if (mask.empty())
      throw DataError("btad layout: no mask found for defect image: " + p.string());
    idx.entries.push_back({p.string(), Split::test, Label::abnormal, "ko", mask.string()});
  }
  finalize(idx);
  return idx;
}

}  // namespace

DatasetIndex scan_dataset(const std::string& root, Layout layout, const std::string& category,
                          std::uint64_t split_seed) {
  if (!fs::exists(root)) throw DataError("dataset root not found: " + root);
  switch (layout) {
    case Layout::mvtec: return scan_mvtec(root, category);
    case Layout::mtd: return scan_mtd(root, category, split_seed);
    case Layout::btad: return scan_btad(root, category);
  }
  throw DataError("unsupported layout");
}

std::vector<std::string> list_categories(const std::string& root, Layout layout) {
  if (!fs::exists(root)) throw DataError("dataset root not found: " + root);
  if (layout == Layout::mtd) return {"mtd"};
  std::vector<std::string> cats;
  for (const auto& d : sorted_subdirs(root)) cats.push_back(d.filename().string());
  if (cats.empty()) throw DataError("no category directories under: " + root);
  return cats;
}

Tensor standardize(const Tensor& chw01) {
  Tensor out = chw01;
  const int H = out.dim(1), W = out.dim(2);
  for (int c = 0; c < 3; ++c) {
    double* p = out.data() + static_cast<std::int64_t>(c) * H * W;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i)
      p[i] = (p[i] - kImagenetMean[c]) / kImagenetStd[c];
  }
  return out;
}

Tensor destandardize(const Tensor& chw) {
  Tensor out = chw;
  const int H = out.dim(1), W = out.dim(2);
  for (int c = 0; c < 3; ++c) {
    double* p = out.data() + static_cast<std::int64_t>(c) * H * W;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i)
      p[i] = p[i] * kImagenetStd[c] + kImagenetMean[c];
  }
  return out;
}

Tensor load_image(const std::string& path, int image_size) {
  cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
  if (img.empty()) throw DataError("cannot decode image: " + path);
  cv::Mat resized;
  cv::resize(img, resized, cv::Size(image_size, image_size), 0, 0, cv::INTER_LINEAR);
  Tensor out({3, image_size, image_size});
  for (int i = 0; i < image_size; ++i) {
    const cv::Vec3b* row = resized.ptr<cv::Vec3b>(i);
    for (int j = 0; j < image_size; ++j) {
      // OpenCV decodes BGR
      out.at(0, i, j) = static_cast<double>(row[j][2]) / 255.0;
      out.at(1, i, j) = static_cast<double>(row[j][1]) / 255.0;
      out.at(2, i, j) = static_cast<double>(row[j][0]) / 255.0;
    }
  }
  return standardize(out);
}

Tensor load_mask(const std::string& path, int image_size) {
  cv::Mat img = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (img.empty()) throw DataError("cannot decode mask: " + path);
  cv::Mat resized;
  cv::resize(img, resized, cv::Size(image_size, image_size), 0, 0, cv::INTER_NEAREST);
  Tensor out({image_size, image_size});
  for (int i = 0; i < image_size; ++i) {
    const unsigned char* row = resized.ptr<unsigned char>(i);
    for (int j = 0; j < image_size; ++j) out.at(i, j) = (static_cast<double>(row[j]) / 255.0 > 0.5) ? 1.0 : 0.0;
  }
  return out;
}

ImageRecord load_record(const IndexEntry& entry, const std::string& category, int image_size) {
  ImageRecord rec;
  rec.pixels = load_image(entry.image_path, image_size);
  rec.label = entry.label;
  rec.category = category;
  rec.source_path = entry.image_path;
  if (!entry.mask_path.empty()) rec.gt_mask = load_mask(entry.mask_path, image_size);
  return rec;
}

void save_image_png(const std::string& path, const Tensor& chw, bool standardized) {
  Tensor img = standardized ? destandardize(chw) : chw;
  const int H = img.dim(1), W = img.dim(2);
  cv::Mat mat(H, W, CV_8UC3);
  for (int i = 0; i < H; ++i) {
    cv::Vec3b* row = mat.ptr<cv::Vec3b>(i);
    for (int j = 0; j < W; ++j) {
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(img.at(c, i, j), 0.0, 1.0);
        row[j][2 - c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  if (!cv::imwrite(path, mat)) throw DataError("cannot write image: " + path);
}

void save_mask_png(const std::string& path, const Tensor& hw) {
  const int H = hw.dim(0), W = hw.dim(1);
  cv::Mat mat(H, W, CV_8UC1);
  for (int i = 0; i < H; ++i) {
    unsigned char* row = mat.ptr<unsigned char>(i);
    for (int j = 0; j < W; ++j) row[j] = hw.at(i, j) > 0.5 ? 255 : 0;
  }
  if (!cv::imwrite(path, mat)) throw DataError("cannot write mask: " + path);
}

}  // namespace mrkd
