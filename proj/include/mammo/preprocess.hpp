#pragma once

#include <filesystem>
#include <span>

#include "mammo/image.hpp"
#include "mammo/ingest.hpp"

namespace mammo {

inline constexpr float kDefaultCropThreshold = 2.0f / 255.0f;
inline constexpr int kTargetRows = 1326;
inline constexpr int kTargetCols = 512;

/// Inclusive pixel bounds.
struct CropBox {
  int row_min = 0;
  int row_max = 0;
  int col_min = 0;
  int col_max = 0;

  int rows() const { return row_max - row_min + 1; }
  int cols() const { return col_max - col_min + 1; }
  friend bool operator==(const CropBox&, const CropBox&) = default;
};

struct CropResult {
  ImageTensor image;
  CropBox box;
};

/// Crops to the bounding box of the largest 8-connected component of
/// pixels > threshold. With no foreground the image is returned unchanged
/// with the full-frame box.
CropResult crop_breast_region(const ImageTensor& img, float threshold = kDefaultCropThreshold);

/// Bilinear resampling (half-pixel centres, edge clamped) to exactly
/// target_rows x target_cols.
ImageTensor resize(const ImageTensor& img, int target_rows = kTargetRows, int target_cols = kTargetCols);

/// Mean of rows/cols over the given crops. Throws Error{EmptyManifest}.
double compute_mean_aspect_ratio(std::span<const CropBox> crops);

/// Loads and crops every record's image; unreadable images are skipped.
double compute_mean_aspect_ratio(const DatasetManifest& manifest, float threshold = kDefaultCropThreshold);

struct PreprocessConfig {
  float threshold = kDefaultCropThreshold;
  int rows = kTargetRows;
  int cols = kTargetCols;
};

struct PreprocessSummary {
  DatasetManifest manifest;  // paths point at processed PNGs
  double mean_aspect_ratio = 0.0;
  std::size_t failed = 0;
};

/// Crop then resize every record, writing out_dir/images/<image_id>.png and
/// out_dir/manifest.csv. Per-record failures are logged in the manifest
/// warnings and the batch continues.
PreprocessSummary preprocess_dataset(const DatasetManifest& manifest, const PreprocessConfig& config,
                                     const std::filesystem::path& out_dir);

}  // namespace mammo
