#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mammo/error.hpp"
#include "mammo/image_io.hpp"
#include "mammo/preprocess.hpp"
#include "mammo/rng.hpp"
#include "synthetic.hpp"

using namespace mammo;
using namespace mammo::testing;

namespace {

void fill_rect(ImageTensor& img, int r0, int c0, int r1, int c1, float v) {
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) img.at(r, c) = v;
}

}  // namespace

TEST_CASE("crop keeps the largest component", "[preprocess]") {
  ImageTensor img(40, 30);
  fill_rect(img, 5, 3, 30, 20, 0.5f);
  fill_rect(img, 35, 25, 37, 28, 1.0f);  // label marker, smaller
  const auto res = crop_breast_region(img);
  CHECK(res.box == CropBox{5, 30, 3, 20});
  CHECK(res.image.rows == 26);
  CHECK(res.image.cols == 18);
  CHECK(res.image.at(0, 0) == 0.5f);
}

TEST_CASE("crop is idempotent and handles blank frames", "[preprocess]") {
  Pcg32 rng(5, 5);
  for (int trial = 0; trial < 20; ++trial) {
    ImageTensor img(30, 30);
    for (int k = 0; k < 4; ++k) {
      const int r0 = rng.uniform_int(0, 25), c0 = rng.uniform_int(0, 25);
      fill_rect(img, r0, c0, r0 + rng.uniform_int(0, 4), c0 + rng.uniform_int(0, 4), 0.8f);
    }
    const auto once = crop_breast_region(img);
    const auto twice = crop_breast_region(once.image);
    CHECK(twice.image == once.image);
  }
  ImageTensor blank(7, 9);
  const auto res = crop_breast_region(blank);
  CHECK(res.box == CropBox{0, 6, 0, 8});
  CHECK(res.image == blank);
}

TEST_CASE("bilinear resize", "[preprocess]") {
  ImageTensor img(2, 2);
  img.pixels = {0.0f, 1.0f, 0.0f, 1.0f};
  CHECK(resize(img, 2, 2) == img);
  const auto up = resize(img, 2, 4);
  // half-pixel centres: x = (c + 0.5) / 2 - 0.5 -> -0.25, 0.25, 0.75, 1.25
  CHECK(up.at(0, 0) == 0.0f);
  CHECK(up.at(0, 1) == Catch::Approx(0.25f));
  CHECK(up.at(0, 2) == Catch::Approx(0.75f));
  CHECK(up.at(0, 3) == 1.0f);
  ImageTensor flat(13, 7, 0.3f);
  for (float v : resize(flat, 29, 5).pixels) CHECK(v == Catch::Approx(0.3f));
}

TEST_CASE("mean aspect ratio", "[preprocess]") {
  const CropBox boxes[] = {{0, 9, 0, 4}, {0, 29, 0, 9}};
  CHECK(compute_mean_aspect_ratio(boxes) == Catch::Approx(2.5));
  try {
    compute_mean_aspect_ratio(std::span<const CropBox>());
    FAIL("expected EmptyManifest");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyManifest);
  }
}

TEST_CASE("preprocess_dataset writes fixed-size images", "[preprocess]") {
  TempDir dir("prep");
  auto patients = smoke_patients();
  patients.resize(3);
  const auto ds = write_synthetic_dataset(dir.path(), patients, 64, 32);
  const auto m = ingest_dataset(ds.clinical, ds.images, dir / "ingest");
  PreprocessConfig cfg;
  cfg.rows = 40;
  cfg.cols = 16;
  auto broken = m;
  broken.records[0].image_path = dir / "missing.png";
  const auto out = preprocess_dataset(broken, cfg, dir / "prep");
  CHECK(out.failed == 1);
  CHECK(out.manifest.records.size() == 5);
  CHECK(out.mean_aspect_ratio > 1.0);
  for (const auto& r : out.manifest.records) {
    const auto img = load_image(r.image_path);
    CHECK(img.rows == 40);
    CHECK(img.cols == 16);
  }
  CHECK(std::filesystem::exists(dir / "prep" / "preprocess.json"));
  CHECK(read_manifest(dir / "prep" / "manifest.csv").records.size() == 5);
}
