#include "mammo/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <vector>

#include <json.hpp>

#include "mammo/error.hpp"
#include "mammo/image_io.hpp"

namespace fs = std::filesystem;

namespace mammo {

CropResult crop_breast_region(const ImageTensor& img, float threshold) {
  if (img.empty()) throw Error(ErrorCode::InvalidArgument, "cannot crop an empty image");
  const int rows = img.rows, cols = img.cols;
  const CropBox full{0, rows - 1, 0, cols - 1};

  // Component labelling by iterative flood fill; label 0 is background.
  std::vector<int> label(img.size(), 0);
  std::vector<std::size_t> sizes{0};
  std::vector<CropBox> boxes{CropBox{}};
  std::vector<int> stack;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * cols + c;
      if (label[i] || !(img.pixels[i] > threshold)) continue;
      const int id = static_cast<int>(sizes.size());
      sizes.push_back(0);
      boxes.push_back({r, r, c, c});
      label[i] = id;
      stack.push_back(static_cast<int>(i));
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int pr = p / cols, pc = p % cols;
        ++sizes[id];
        CropBox& b = boxes[id];
        b.row_min = std::min(b.row_min, pr);
        b.row_max = std::max(b.row_max, pr);
        b.col_min = std::min(b.col_min, pc);
        b.col_max = std::max(b.col_max, pc);
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int nr = pr + dr, nc = pc + dc;
            if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
            const std::size_t n = static_cast<std::size_t>(nr) * cols + nc;
            if (label[n] || !(img.pixels[n] > threshold)) continue;
            label[n] = id;
            stack.push_back(static_cast<int>(n));
          }
        }
      }
    }
  }
  if (sizes.size() == 1) return {img, full};

  // Ties for the largest component are merged so cropping stays idempotent.
  const std::size_t best = *std::max_element(sizes.begin() + 1, sizes.end());
  std::optional<CropBox> box;
  for (std::size_t id = 1; id < sizes.size(); ++id) {
    if (sizes[id] != best) continue;
    if (!box) {
      box = boxes[id];
      continue;
    }
    box->row_min = std::min(box->row_min, boxes[id].row_min);
    box->row_max = std::max(box->row_max, boxes[id].row_max);
    box->col_min = std::min(box->col_min, boxes[id].col_min);
    box->col_max = std::max(box->col_max, boxes[id].col_max);
  }

  CropResult out{ImageTensor(box->rows(), box->cols()), *box};
  for (int r = 0; r < box->rows(); ++r) {
    const float* src = &img.pixels[static_cast<std::size_t>(box->row_min + r) * cols + box->col_min];
    std::copy(src, src + box->cols(), &out.image.pixels[static_cast<std::size_t>(r) * box->cols()]);
  }
  return out;
}

ImageTensor resize(const ImageTensor& img, int target_rows, int target_cols) {
  if (img.empty()) throw Error(ErrorCode::InvalidArgument, "cannot resize an empty image");
  if (target_rows < 1 || target_cols < 1) throw Error(ErrorCode::InvalidArgument, "target size must be positive");
  if (img.rows == target_rows && img.cols == target_cols) return img;

  struct Tap {
    int i0, i1;
    float w1;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / out;
    for (int j = 0; j < out; ++j) {
      double x = (j + 0.5) * scale - 0.5;
      x = std::clamp(x, 0.0, static_cast<double>(in - 1));
      const int i0 = static_cast<int>(std::floor(x));
      const int i1 = std::min(i0 + 1, in - 1);
      t[j] = {i0, i1, static_cast<float>(x - i0)};
    }
    return t;
  };
  const auto rt = taps(img.rows, target_rows);
  const auto ct = taps(img.cols, target_cols);

  ImageTensor out(target_rows, target_cols);
  for (int r = 0; r < target_rows; ++r) {
    const float* a = &img.pixels[static_cast<std::size_t>(rt[r].i0) * img.cols];
    const float* b = &img.pixels[static_cast<std::size_t>(rt[r].i1) * img.cols];
    const float wr = rt[r].w1;
    float* dst = &out.pixels[static_cast<std::size_t>(r) * target_cols];
    for (int c = 0; c < target_cols; ++c) {
      const Tap& t = ct[c];
      const float top = a[t.i0] + (a[t.i1] - a[t.i0]) * t.w1;
      const float bottom = b[t.i0] + (b[t.i1] - b[t.i0]) * t.w1;
      dst[c] = std::clamp(top + (bottom - top) * wr, 0.0f, 1.0f);
    }
  }
  return out;
}

double compute_mean_aspect_ratio(std::span<const CropBox> crops) {
  if (crops.empty()) throw Error(ErrorCode::EmptyManifest, "no crops to average");
  double sum = 0.0;
  for (const auto& b : crops) sum += static_cast<double>(b.rows()) / b.cols();
  return sum / static_cast<double>(crops.size());
}

double compute_mean_aspect_ratio(const DatasetManifest& manifest, float threshold) {
  std::vector<CropBox> boxes;
  for (const auto& r : manifest.records) {
    try {
      boxes.push_back(crop_breast_region(load_image(r.image_path), threshold).box);
    } catch (const Error&) {
    }
  }
  return compute_mean_aspect_ratio(boxes);
}

PreprocessSummary preprocess_dataset(const DatasetManifest& manifest, const PreprocessConfig& config,
                                     const fs::path& out_dir) {
  if (manifest.records.empty()) throw Error(ErrorCode::EmptyManifest, "nothing to preprocess");
  const fs::path image_dir = out_dir / "images";
  fs::create_directories(image_dir);

  PreprocessSummary summary;
  summary.manifest.source_fingerprint = manifest.source_fingerprint;
  summary.manifest.schema_version = manifest.schema_version;
  summary.manifest.warnings = manifest.warnings;
  std::vector<CropBox> boxes;
  nlohmann::json crops = nlohmann::json::object();
  for (const auto& rec : manifest.records) {
    try {
      const CropResult crop = crop_breast_region(load_image(rec.image_path), config.threshold);
      const ImageTensor out = resize(crop.image, config.rows, config.cols);
      const fs::path dest = image_dir / (rec.image_path.stem().string() + ".png");
      export_image(out, dest, ImageFormat::Png);
      MammogramRecord r = rec;
      r.image_path = dest;
      summary.manifest.records.push_back(std::move(r));
      boxes.push_back(crop.box);
      crops[rec.image_id] = {crop.box.row_min, crop.box.row_max, crop.box.col_min, crop.box.col_max};
    } catch (const Error& e) {
      ++summary.failed;
      summary.manifest.warnings.push_back(rec.image_id + ": " + e.what());
    }
  }
  if (summary.manifest.records.empty()) throw Error(ErrorCode::EmptyManifest, "every record failed to preprocess");
  summary.mean_aspect_ratio = compute_mean_aspect_ratio(boxes);
  write_manifest(summary.manifest, out_dir / "manifest.csv");

  nlohmann::json info = {{"rows", config.rows},
                         {"cols", config.cols},
                         {"threshold", config.threshold},
                         {"mean_aspect_ratio", summary.mean_aspect_ratio},
                         {"processed", summary.manifest.records.size()},
                         {"failed", summary.failed},
                         {"crop_boxes", crops}};
  std::ofstream os(out_dir / "preprocess.json");
  if (!os) throw Error(ErrorCode::IoFailure, "cannot write preprocess.json");
  os << info.dump(2) << "\n";
  return summary;
}

}  // namespace mammo
