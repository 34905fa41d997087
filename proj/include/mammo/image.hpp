#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace mammo {

/// DICOM VOI window in raw (post modality-rescale) intensity units.
struct WindowSpec {
  double center = 0.0;
  double width = 1.0;
};

/// Decoded single-frame grayscale DICOM pixel data.
struct RawImage {
  int rows = 0;
  int cols = 0;
  std::vector<std::int32_t> pixels;  // row-major, stored values
  WindowSpec window;
  double rescale_slope = 1.0;
  double rescale_intercept = 0.0;
  int bits_stored = 0;
  bool monochrome1 = false;  // inverted photometric interpretation

  std::int32_t at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * cols + c]; }
};

/// Normalized working image, values in [0, 1], row-major.
struct ImageTensor {
  int rows = 0;
  int cols = 0;
  std::vector<float> pixels;

  ImageTensor() = default;
  ImageTensor(int r, int c, float fill = 0.0f)
      : rows(r), cols(c), pixels(static_cast<std::size_t>(r) * c, fill) {}

  float& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * cols + c]; }
  float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * cols + c]; }
  bool empty() const { return rows <= 0 || cols <= 0; }
  std::size_t size() const { return pixels.size(); }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

/// Quantize to the 8-bit code used by every on-disk representation.
inline std::uint8_t to_u8(float v) {
  if (!(v > 0.0f)) return 0;
  if (v >= 1.0f) return 255;
  return static_cast<std::uint8_t>(std::lround(static_cast<double>(v) * 255.0));
}

}  // namespace mammo
