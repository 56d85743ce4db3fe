#include <doctest.h>

#include <cmath>

#include "mrkd/errors.hpp"
#include "mrkd/synthesis.hpp"
#include "toy_dataset.hpp"

using namespace mrkd;

namespace {

ImageRecord make_record(int size, Rng& rng) {
  ImageRecord rec;
  rec.pixels = standardize(toy::texture_image(size, rng));
  rec.label = Label::normal;
  rec.category = "tex";
  return rec;
}

SynthesisParams paste_params() {
  SynthesisParams p;
  p.blend = SynthesisParams::Blend::paste;
  p.foreground = SynthesisParams::Foreground::full;
  return p;
}

double mask_area_fraction(const Tensor& mask) {
  double s = 0.0;
  for (std::int64_t i = 0; i < mask.numel(); ++i) s += mask[i];
  return s / static_cast<double>(mask.numel());
}

}  // namespace

TEST_CASE("synthesize: zero patch count is the identity") {
  Rng rng(1);
  ImageRecord target = make_record(48, rng), source = make_record(48, rng);
  SynthesisParams p = paste_params();
  p.patch_count_range = {0, 0};
  SyntheticSample s = synthesize(target, source, p, rng);
  CHECK(!s.was_augmented);
  CHECK(bitwise_equal(s.image, target.pixels));
  CHECK(mask_area_fraction(s.anomaly_mask) == 0.0);
}

TEST_CASE("synthesize: paste semantics are exact inside and outside the mask") {
  Rng rng(2);
  ImageRecord target = make_record(64, rng), source = make_record(64, rng);
  SynthesisParams p = paste_params();
  p.patch_count_range = {1, 1};
  SyntheticSample s = synthesize(target, source, p, rng);
  REQUIRE(s.was_augmented);

  // outside the mask: equals the target bit for bit
  int inside = 0;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) {
      if (s.anomaly_mask.at(i, j) == 0.0) {
        for (int c = 0; c < 3; ++c) CHECK(s.image.at(c, i, j) == target.pixels.at(c, i, j));
      } else {
        ++inside;
      }
    }
  REQUIRE(inside > 0);

  // inside: the single rectangular footprint equals some source crop exactly
  int top = 64, left = 64, bottom = -1, right = -1;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j)
      if (s.anomaly_mask.at(i, j) == 1.0) {
        top = std::min(top, i);
        left = std::min(left, j);
        bottom = std::max(bottom, i);
        right = std::max(right, j);
      }
  const int ph = bottom - top + 1, pw = right - left + 1;
  CHECK(ph * pw == inside);  // solid rectangle
  bool found = false;
  for (int st = 0; st <= 64 - ph && !found; ++st)
    for (int sl = 0; sl <= 64 - pw && !found; ++sl) {
      bool match = true;
      for (int i = 0; i < ph && match; ++i)
        for (int j = 0; j < pw && match; ++j)
          for (int c = 0; c < 3; ++c)
            if (s.image.at(c, top + i, left + j) != source.pixels.at(c, st + i, sl + j)) {
              match = false;
              break;
            }
      found = match;
    }
  CHECK(found);
}

TEST_CASE("synthesize: seamless blending changes nothing outside the footprint") {
  Rng rng(3);
  ImageRecord target = make_record(48, rng), source = make_record(48, rng);
  SynthesisParams p;
  p.blend = SynthesisParams::Blend::seamless;
  p.foreground = SynthesisParams::Foreground::full;
  p.patch_count_range = {1, 2};
  SyntheticSample s = synthesize(target, source, p, rng);
  REQUIRE(s.was_augmented);
  CHECK(s.image.all_finite());

  for (int i = 0; i < 48; ++i)
    for (int j = 0; j < 48; ++j)
      if (s.anomaly_mask.at(i, j) == 0.0)
        for (int c = 0; c < 3; ++c) CHECK(s.image.at(c, i, j) == target.pixels.at(c, i, j));

  // blended region stays in the valid image range
  Tensor raw = destandardize(s.image);
  for (std::int64_t i = 0; i < raw.numel(); ++i) {
    CHECK(raw[i] >= -1e-9);
    CHECK(raw[i] <= 1.0 + 1e-9);
  }
}

TEST_CASE("synthesize: deterministic under a fixed seed, mask always partial") {
  Rng rng_a(4), rng_b(4);
  Rng mk(5);
  ImageRecord target = make_record(48, mk), source = make_record(48, mk);
  SynthesisParams p = paste_params();
  SyntheticSample a = synthesize(target, source, p, rng_a);
  SyntheticSample b = synthesize(target, source, p, rng_b);
  CHECK(bitwise_equal(a.image, b.image));
  CHECK(bitwise_equal(a.anomaly_mask, b.anomaly_mask));

  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    SyntheticSample s = synthesize(target, source, p, rng);
    CHECK(mask_area_fraction(s.anomaly_mask) < 1.0);
  }
}

TEST_CASE("synthesize: monte carlo mean footprint stays inside the configured range") {
  Rng mk(7);
  ImageRecord target = make_record(64, mk), source = make_record(64, mk);
  SynthesisParams p = paste_params();
  Rng rng(8);
  double total = 0.0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    SyntheticSample s = synthesize(target, source, p, rng);
    total += mask_area_fraction(s.anomaly_mask);
  }
  const double mean = total / draws;
  // sampling target: summed footprint ~ U(0.01, 0.15), mean 0.08 minus
  // overlap and rounding losses
  CHECK(mean > p.patch_area_range.first);
  CHECK(mean < p.patch_area_range.second);
  CHECK(std::fabs(mean - 0.08) < 0.02);
}

TEST_CASE("estimate_foreground: object on dark background, empty fallback") {
  // bright square centered on a dark field
  Tensor img01({3, 48, 48}, 0.05);
  for (int c = 0; c < 3; ++c)
    for (int i = 12; i < 36; ++i)
      for (int j = 12; j < 36; ++j) img01.at(c, i, j) = 0.9;
  Tensor fg = estimate_foreground(standardize(img01));
  CHECK(fg.at(24, 24) == 1.0);
  CHECK(fg.at(2, 2) == 0.0);
  // and inverted: dark object on bright background
  Tensor inv({3, 48, 48}, 0.9);
  for (int c = 0; c < 3; ++c)
    for (int i = 12; i < 36; ++i)
      for (int j = 12; j < 36; ++j) inv.at(c, i, j) = 0.05;
  Tensor fg2 = estimate_foreground(standardize(inv));
  CHECK(fg2.at(24, 24) == 1.0);
  CHECK(fg2.at(2, 2) == 0.0);

  // uniform image: empty estimate falls back to full-image placement
  Rng rng(9);
  ImageRecord flat;
  flat.pixels = standardize(Tensor({3, 48, 48}, 0.5));
  flat.label = Label::normal;
  ImageRecord src = make_record(48, rng);
  SynthesisParams p;
  p.blend = SynthesisParams::Blend::paste;
  p.foreground = SynthesisParams::Foreground::otsu;
  SyntheticSample s = synthesize(flat, src, p, rng);
  CHECK(s.was_augmented);
  CHECK(s.foreground_fallback);
}

TEST_CASE("apply_ilm: alpha endpoints and binomial fraction") {
  Rng mk(10);
  std::vector<ImageRecord> batch;
  for (int i = 0; i < 16; ++i) batch.push_back(make_record(32, mk));

  SynthesisParams p = paste_params();
  p.alpha = 0.0;
  Rng r0(11);
  auto none = apply_ilm(batch, p, r0);
  REQUIRE(none.size() == batch.size());
  for (std::size_t i = 0; i < none.size(); ++i) {
    CHECK(!none[i].was_augmented);
    CHECK(bitwise_equal(none[i].image, batch[i].pixels));
    CHECK(mask_area_fraction(none[i].anomaly_mask) == 0.0);
  }

  p.alpha = 1.0;
  Rng r1(12);
  auto all = apply_ilm(batch, p, r1);
  for (const auto& s : all) CHECK(s.was_augmented);

  // alpha = 0.2 over 5000 records: fraction within 3 binomial sigmas
  p.alpha = 0.2;
  std::vector<ImageRecord> tiny;
  for (int i = 0; i < 4; ++i) tiny.push_back(make_record(32, mk));
  Rng r2(13);
  int augmented = 0, n = 0;
  for (int rep = 0; rep < 1250; ++rep) {
    auto out = apply_ilm(tiny, p, r2);
    for (const auto& s : out) {
      augmented += s.was_augmented;
      ++n;
    }
  }
  const double frac = static_cast<double>(augmented) / n;
  CHECK(std::fabs(frac - 0.2) < 0.02);

  CHECK_THROWS(apply_ilm({}, p, r2));
}

TEST_CASE("dump_synthetic_debug: writes the paired png files") {
  Rng rng(14);
  ImageRecord target = make_record(32, rng), source = make_record(32, rng);
  SynthesisParams p = paste_params();
  SyntheticSample s = synthesize(target, source, p, rng);
  const std::string dir = toy::fresh_temp_dir("synth_dump");
  dump_synthetic_debug(s, dir, "sample0");
  CHECK(std::filesystem::exists(dir + "/sample0_image.png"));
  CHECK(std::filesystem::exists(dir + "/sample0_mask.png"));
}
