#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mammo/image.hpp"
#include "mammo/image_io.hpp"

namespace mammo {

enum class Laterality { Left, Right };
enum class View { CC, MLO };
enum class Pathology { Benign, Malignant };
enum class Subtype { LuminalA, LuminalB, HER2, TripleNegative, Unlabeled };

std::string_view to_string(Laterality v);
std::string_view to_string(View v);
std::string_view to_string(Pathology v);
std::string_view to_string(Subtype v);

/// Lenient parsers accepting both manifest spellings and CMMD clinical-table
/// spellings ("L", "Luminal A", "HER2-enriched", "triple negative", ...).
std::optional<Laterality> parse_laterality(std::string_view s);
std::optional<View> parse_view(std::string_view s);
std::optional<Pathology> parse_pathology(std::string_view s);
std::optional<Subtype> parse_subtype(std::string_view s);

inline bool is_luminal(Subtype s) { return s == Subtype::LuminalA || s == Subtype::LuminalB; }

struct MammogramRecord {
  std::string patient_id;
  std::string image_id;
  Laterality laterality = Laterality::Left;
  View view = View::CC;
  std::optional<int> age;
  bool has_calcification = false;
  bool has_mass = false;
  Pathology pathology = Pathology::Benign;
  Subtype subtype = Subtype::Unlabeled;
  std::filesystem::path image_path;

  bool subtype_labeled() const { return subtype != Subtype::Unlabeled; }

  friend bool operator==(const MammogramRecord&, const MammogramRecord&) = default;
};

struct DatasetManifest {
  static constexpr int kSchemaVersion = 1;

  std::vector<MammogramRecord> records;  // sorted by image_id
  std::string source_fingerprint;        // SHA-256 of the clinical table
  int schema_version = kSchemaVersion;
  std::vector<std::string> warnings;     // not persisted
};

/// Linear VOI mapping: clamp((p - (center - width/2)) / width, 0, 1), applied
/// after the modality rescale; MONOCHROME1 output is inverted.
/// Throws Error{NonPositiveWidth}.
ImageTensor apply_window(const RawImage& raw);
ImageTensor apply_window(const ImageTensor& img, const WindowSpec& window);
float window_value(double p, const WindowSpec& window);

/// Joins a clinical CSV (one row per patient breast) to every DICOM file found
/// under image_root on (patient id, laterality). Image paths in the result
/// point at the DICOM files.
///
/// Throws Error{SchemaMismatch} for a missing required column and
/// Error{EmptyJoin} when no image matches a row. Per-file problems are
/// collected in DatasetManifest::warnings.
DatasetManifest build_manifest(const std::filesystem::path& clinical_table,
                               const std::filesystem::path& image_root);

/// Full ingest stage: build_manifest, then window and export each image to
/// out_dir/images, and write out_dir/manifest.csv (+ sidecar). Records whose
/// DICOM cannot be decoded are dropped with a warning.
struct IngestOptions {
  ImageFormat format = ImageFormat::Png;
  int jpeg_quality = 95;
};
DatasetManifest ingest_dataset(const std::filesystem::path& clinical_table,
                               const std::filesystem::path& image_root,
                               const std::filesystem::path& out_dir, const IngestOptions& options = {});

/// Manifest CSV columns:
///   image_id,patient_id,laterality,view,age,calcification,mass,pathology,subtype,path
/// Paths are written relative to the manifest directory when possible.
/// A sidecar `<stem>.meta.json` stores schema_version, source_fingerprint and
/// the SHA-256 of the CSV bytes.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& csv_path);
DatasetManifest read_manifest(const std::filesystem::path& csv_path);

/// Problems that break the record invariants (duplicate ids, missing files,
/// subtype on a benign record, no finding). Empty means valid.
std::vector<std::string> validate_manifest(const DatasetManifest& manifest, bool check_files = true);

std::filesystem::path manifest_meta_path(const std::filesystem::path& csv_path);

}  // namespace mammo
