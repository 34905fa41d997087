#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "dicom_writer.hpp"
#include "mammo/error.hpp"
#include "mammo/image_io.hpp"
#include "mammo/ingest.hpp"
#include "synthetic.hpp"

using namespace mammo;
using namespace mammo::testing;
namespace fs = std::filesystem;

namespace {

template <typename F>
ErrorCode error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::IoFailure;
}

bool has_warning(const DatasetManifest& m, const std::string& needle) {
  return std::any_of(m.warnings.begin(), m.warnings.end(),
                     [&](const std::string& w) { return w.find(needle) != std::string::npos; });
}

}  // namespace

TEST_CASE("window mapping at the window edges and centre", "[ingest]") {
  const WindowSpec w{100.0, 50.0};
  CHECK(window_value(75.0, w) == 0.0f);
  CHECK(window_value(125.0, w) == 1.0f);
  CHECK(window_value(100.0, w) == 0.5f);
  CHECK(window_value(-1e9, w) == 0.0f);
  CHECK(window_value(1e9, w) == 1.0f);
  CHECK(window_value(87.5, w) == 0.25f);

  RawImage raw;
  raw.rows = 1;
  raw.cols = 3;
  raw.pixels = {0, 50, 100};
  raw.window = {100.0, 200.0};
  raw.rescale_slope = 2.0;
  raw.rescale_intercept = 0.0;
  const auto img = apply_window(raw);
  CHECK(img.pixels == std::vector<float>{0.0f, 0.5f, 1.0f});
  raw.rescale_slope = 1.0;
  raw.monochrome1 = true;
  CHECK(apply_window(raw).pixels == std::vector<float>{1.0f, 0.75f, 0.5f});

  raw.window.width = 0.0;
  CHECK(error_of([&] { apply_window(raw); }) == ErrorCode::NonPositiveWidth);
  CHECK(error_of([&] { apply_window(ImageTensor(2, 2), WindowSpec{0.0, -1.0}); }) == ErrorCode::NonPositiveWidth);
}

TEST_CASE("clinical spellings parse", "[ingest]") {
  CHECK(parse_laterality("L") == Laterality::Left);
  CHECK(parse_laterality("right") == Laterality::Right);
  CHECK(parse_view("MLO") == View::MLO);
  CHECK(parse_pathology("Malignant") == Pathology::Malignant);
  CHECK(parse_subtype("Luminal A") == Subtype::LuminalA);
  CHECK(parse_subtype("luminal b") == Subtype::LuminalB);
  CHECK(parse_subtype("HER2-enriched") == Subtype::HER2);
  CHECK(parse_subtype("triple negative") == Subtype::TripleNegative);
  CHECK(parse_subtype("") == Subtype::Unlabeled);
  CHECK_FALSE(parse_laterality("up").has_value());
}

TEST_CASE("build_manifest joins clinical rows to DICOM files", "[ingest]") {
  TempDir dir("ingest");
  const auto ds = write_synthetic_dataset(dir.path(), smoke_patients(), 32, 16);
  const auto m = build_manifest(ds.clinical, ds.images);
  REQUIRE(m.records.size() == 32);
  CHECK(validate_manifest(m).empty());
  CHECK(std::is_sorted(m.records.begin(), m.records.end(),
                       [](const auto& a, const auto& b) { return a.image_id < b.image_id; }));
  int labeled = 0, benign = 0;
  for (const auto& r : m.records) {
    labeled += r.subtype_labeled();
    benign += r.pathology == Pathology::Benign;
    CHECK(r.age.has_value());
  }
  CHECK(labeled == 24);
  CHECK(benign == 8);
  CHECK(m.source_fingerprint.size() == 64);
}

TEST_CASE("join problems become warnings or typed errors", "[ingest]") {
  TempDir dir("ingest");
  auto patients = smoke_patients();
  patients.resize(3);
  const auto ds = write_synthetic_dataset(dir.path(), patients, 16, 8);

  write_text(dir / "bad_cols.csv", "ID1,Age\nD1-0000,50\n");
  CHECK(error_of([&] { build_manifest(dir / "bad_cols.csv", ds.images); }) == ErrorCode::SchemaMismatch);

  write_text(dir / "nomatch.csv", "ID1,LeftRight,Age,abnormality,classification,subtype\nZZ,L,50,mass,Malignant,Luminal A\n");
  CHECK(error_of([&] { build_manifest(dir / "nomatch.csv", ds.images); }) == ErrorCode::EmptyJoin);

  std::string text = read_text(ds.clinical);
  text += "D1-0001,R,60,1,mass,Malignant,HER2\n";  // conflicts with the existing row
  text += "D1-0099,L,60,1,mass,Benign,Luminal A\n";  // subtype on benign
  write_text(dir / "messy.csv", text);
  const auto m = build_manifest(dir / "messy.csv", ds.images);
  CHECK(m.records.size() == 4);
  CHECK(has_warning(m, "conflicting"));
  CHECK(has_warning(m, "benign"));

  DicomSpec dup;
  dup.pixels.assign(16, 5);
  dup.patient_id = "D1-0000";
  dup.laterality = "L";
  dup.sop_instance_uid = "1.2.826.0.1.3680043.9.1";
  write_dicom(ds.images / "D1-0000" / "copy.dcm", dup);
  const auto m2 = build_manifest(ds.clinical, ds.images);
  CHECK(m2.records.size() == 5);
  CHECK(has_warning(m2, "duplicate image id"));
}

TEST_CASE("manifest CSV round-trip and schema checks", "[ingest]") {
  TempDir dir("ingest");
  auto patients = smoke_patients();
  patients.resize(4);
  const auto ds = write_synthetic_dataset(dir.path(), patients, 32, 16);
  const auto m = ingest_dataset(ds.clinical, ds.images, dir / "out");
  REQUIRE(m.records.size() == 8);
  for (const auto& r : m.records) {
    REQUIRE(fs::exists(r.image_path));
    const auto img = load_image(r.image_path);
    CHECK(img.rows == 32);
    CHECK(img.cols == 16);
  }
  const auto back = read_manifest(dir / "out" / "manifest.csv");
  CHECK(back.records == m.records);
  CHECK(back.source_fingerprint == m.source_fingerprint);
  CHECK(back.warnings.empty());

  std::string text = read_text(dir / "out" / "manifest.csv");
  write_text(dir / "out" / "manifest.csv", text + "\n");
  CHECK(has_warning(read_manifest(dir / "out" / "manifest.csv"), "modified"));

  write_text(dir / "bad.csv", "image_id,patient_id\nx,y\n");
  CHECK(error_of([&] { read_manifest(dir / "bad.csv"); }) == ErrorCode::SchemaMismatch);

  auto broken = m;
  broken.records[1].image_id = broken.records[0].image_id;
  broken.records[2].subtype = Subtype::LuminalA;
  broken.records[2].pathology = Pathology::Benign;
  broken.records[3].has_calcification = broken.records[3].has_mass = false;
  CHECK(validate_manifest(broken).size() == 3);
}

TEST_CASE("jpeg export option", "[ingest]") {
  TempDir dir("ingest");
  auto patients = smoke_patients();
  patients.resize(2);
  const auto ds = write_synthetic_dataset(dir.path(), patients, 32, 16);
  IngestOptions opt;
  opt.format = ImageFormat::Jpeg;
  const auto m = ingest_dataset(ds.clinical, ds.images, dir / "out", opt);
  for (const auto& r : m.records) CHECK(r.image_path.extension() == ".jpg");
  CHECK(load_image(m.records[0].image_path).rows == 32);
}
