#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mrkd/dataset.hpp"
#include "mrkd/errors.hpp"
#include "toy_dataset.hpp"

namespace fs = std::filesystem;
using namespace mrkd;

namespace {

void write_png(const std::string& path, int size, double r, double g, double b) {
  Tensor img({3, size, size});
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      img.at(0, i, j) = r;
      img.at(1, i, j) = g;
      img.at(2, i, j) = b;
    }
  save_image_png(path, img, false);
}

void write_mask_png(const std::string& path, int size, double ones_fraction_rows) {
  Tensor m({size, size});
  const int rows = static_cast<int>(ones_fraction_rows * size);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < size; ++j) m.at(i, j) = 1.0;
  save_mask_png(path, m);
}

}  // namespace

TEST_CASE("scan_dataset: mvtec fixture tree") {
  const std::string root = toy::fresh_temp_dir("scan_mvtec");
  fs::create_directories(root + "/widget/train/good");
  fs::create_directories(root + "/widget/test/scratch");
  fs::create_directories(root + "/widget/ground_truth/scratch");
  write_png(root + "/widget/train/good/000.png", 32, 0.5, 0.5, 0.5);
  write_png(root + "/widget/train/good/001.png", 32, 0.4, 0.4, 0.4);
  write_png(root + "/widget/test/scratch/000.png", 32, 0.6, 0.3, 0.2);
  write_mask_png(root + "/widget/ground_truth/scratch/000_mask.png", 32, 0.5);

  DatasetIndex idx = scan_dataset(root, Layout::mvtec, "widget");
  CHECK(idx.entries.size() == 3);
  CHECK(idx.count(Split::train) == 2);
  CHECK(idx.count(Split::test, Label::abnormal) == 1);
  for (std::size_t i = 1; i < idx.entries.size(); ++i)
    CHECK(idx.entries[i - 1].image_path < idx.entries[i].image_path);

  // identical rescan
  DatasetIndex idx2 = scan_dataset(root, Layout::mvtec, "widget");
  REQUIRE(idx2.entries.size() == idx.entries.size());
  for (std::size_t i = 0; i < idx.entries.size(); ++i) {
    CHECK(idx.entries[i].image_path == idx2.entries[i].image_path);
    CHECK(idx.entries[i].mask_path == idx2.entries[i].mask_path);
  }

  CHECK_THROWS_AS(scan_dataset(root + "/nope", Layout::mvtec, "widget"), DataError);
  CHECK_THROWS_AS(scan_dataset(root, Layout::mvtec, "missing_cat"), DataError);

  // abnormal test image without a matching mask is fatal
  write_png(root + "/widget/test/scratch/001.png", 32, 0.1, 0.1, 0.1);
  CHECK_THROWS_AS(scan_dataset(root, Layout::mvtec, "widget"), DataError);
}

TEST_CASE("scan_dataset: mtd 80/20 seeded split") {
  const std::string root = toy::fresh_temp_dir("scan_mtd");
  fs::create_directories(root + "/normal");
  fs::create_directories(root + "/defect");
  for (int i = 0; i < 10; ++i)
    write_png(root + "/normal/n" + std::to_string(i) + ".png", 24, 0.5, 0.5, 0.5);
  write_png(root + "/defect/d00.png", 24, 0.9, 0.1, 0.1);
  write_mask_png(root + "/defect/d00_mask.png", 24, 0.25);

  DatasetIndex idx = scan_dataset(root, Layout::mtd, "", 77);
  CHECK(idx.count(Split::train) == 8);  // floor(0.8 * 10)
  CHECK(idx.count(Split::train, Label::normal) == 8);
  CHECK(idx.count(Split::test, Label::normal) == 2);
  CHECK(idx.count(Split::test, Label::abnormal) == 1);
  CHECK(idx.category == "mtd");

  // same seed, same membership; different seed may differ
  DatasetIndex again = scan_dataset(root, Layout::mtd, "", 77);
  for (std::size_t i = 0; i < idx.entries.size(); ++i)
    CHECK(idx.entries[i].split == again.entries[i].split);

  // defect image without mask is fatal
  write_png(root + "/defect/d01.png", 24, 0.9, 0.1, 0.1);
  CHECK_THROWS_AS(scan_dataset(root, Layout::mtd, "", 77), DataError);
}

TEST_CASE("scan_dataset: btad layout with stem-matched masks") {
  const std::string root = toy::fresh_temp_dir("scan_btad");
  fs::create_directories(root + "/01/train/ok");
  fs::create_directories(root + "/01/test/ok");
  fs::create_directories(root + "/01/test/ko");
  fs::create_directories(root + "/01/ground_truth/ko");
  write_png(root + "/01/train/ok/0000.png", 24, 0.5, 0.5, 0.5);
  write_png(root + "/01/test/ok/0000.png", 24, 0.5, 0.5, 0.5);
  write_png(root + "/01/test/ko/0000.png", 24, 0.9, 0.2, 0.2);
  write_mask_png(root + "/01/ground_truth/ko/0000.png", 24, 0.25);

  DatasetIndex idx = scan_dataset(root, Layout::btad, "01");
  CHECK(idx.entries.size() == 3);
  CHECK(idx.count(Split::test, Label::abnormal) == 1);

  CHECK(list_categories(root, Layout::btad) == std::vector<std::string>{"01"});
}

TEST_CASE("standardize: channel-mean image maps to zero, round trip is exact") {
  Tensor img({3, 8, 8});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) img.at(c, i, j) = kImagenetMean[c];
  Tensor z = standardize(img);
  for (std::int64_t i = 0; i < z.numel(); ++i) CHECK(std::fabs(z[i]) < 1e-12);

  Rng rng(3);
  Tensor any({3, 8, 8});
  for (std::int64_t i = 0; i < any.numel(); ++i) any[i] = rng.uniform();
  CHECK(max_abs_diff(destandardize(standardize(any)), any) < 1e-6);
}

TEST_CASE("load_image: shape contract, range, idempotence") {
  const std::string root = toy::fresh_temp_dir("load_img");
  toy::ToyDatasetSpec spec;
  spec.n_train = 1;
  spec.n_test_normal = 0;
  spec.n_test_abnormal = 0;
  spec.image_size = 100;  // force a resize
  toy::write_toy_dataset(root, "tex", spec);
  const std::string path = root + "/tex/train/good/000.png";

  Tensor img = load_image(path, 256);
  CHECK(img.shape() == std::vector<int>{3, 256, 256});
  Tensor img2 = load_image(path, 256);
  CHECK(bitwise_equal(img, img2));

  Tensor raw = destandardize(img);
  for (std::int64_t i = 0; i < raw.numel(); ++i) {
    CHECK(raw[i] >= -1e-9);
    CHECK(raw[i] <= 1.0 + 1e-9);
  }
  CHECK_THROWS_AS(load_image(root + "/missing.png", 64), DataError);
}

TEST_CASE("load_mask: all-white, all-black, half-white resize fraction") {
  const std::string root = toy::fresh_temp_dir("load_mask");
  fs::create_directories(root);
  write_mask_png(root + "/white.png", 64, 1.0);
  write_mask_png(root + "/black.png", 64, 0.0);
  write_mask_png(root + "/half.png", 512, 0.5);

  Tensor white = load_mask(root + "/white.png", 64);
  Tensor black = load_mask(root + "/black.png", 64);
  for (std::int64_t i = 0; i < white.numel(); ++i) {
    CHECK(white[i] == 1.0);
    CHECK(black[i] == 0.0);
  }

  Tensor half = load_mask(root + "/half.png", 256);
  // independent pixel count of the resized fixture
  std::int64_t ones = 0;
  for (std::int64_t i = 0; i < half.numel(); ++i) {
    CHECK((half[i] == 0.0 || half[i] == 1.0));
    ones += half[i] == 1.0;
  }
  const double frac = static_cast<double>(ones) / static_cast<double>(half.numel());
  CHECK(std::fabs(frac - 0.5) < 0.01);
}

TEST_CASE("load_record: satisfies the record invariants") {
  const std::string root = toy::fresh_temp_dir("load_rec");
  toy::ToyDatasetSpec spec;
  spec.n_train = 1;
  spec.n_test_normal = 1;
  spec.n_test_abnormal = 1;
  spec.image_size = 48;
  toy::write_toy_dataset(root, "tex", spec);
  DatasetIndex idx = scan_dataset(root, Layout::mvtec, "tex");

  for (const auto& entry : idx.entries) {
    ImageRecord rec = load_record(entry, "tex", 48);
    CHECK(rec.pixels.shape() == std::vector<int>{3, 48, 48});
    CHECK(rec.category == "tex");
    if (entry.label == Label::abnormal) {
      REQUIRE(!rec.gt_mask.empty());
      CHECK(rec.gt_mask.shape() == std::vector<int>{48, 48});
      for (std::int64_t i = 0; i < rec.gt_mask.numel(); ++i)
        CHECK((rec.gt_mask[i] == 0.0 || rec.gt_mask[i] == 1.0));
    } else {
      CHECK(rec.gt_mask.empty());
    }
  }
}
