#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "mammo/image.hpp"

namespace mammo {

enum class ImageFormat { Png, Jpeg };

/// Writes an 8-bit grayscale file, storing v as round(v * 255).
/// Throws Error{IoFailure} when the file cannot be created or encoded.
void export_image(const ImageTensor& img, const std::filesystem::path& path, ImageFormat format,
                  int jpeg_quality = 95);

/// Decodes an 8-bit PNG or JPEG (format picked by magic bytes). Colour inputs
/// are reduced to luma. Values are code / 255.
ImageTensor load_image(const std::filesystem::path& path);

struct RgbImage {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> data;  // interleaved RGB

  std::array<std::uint8_t, 3> at(int r, int c) const {
    const std::size_t i = (static_cast<std::size_t>(r) * cols + c) * 3;
    return {data[i], data[i + 1], data[i + 2]};
  }
};

void write_png_rgb(const RgbImage& img, const std::filesystem::path& path);
RgbImage read_png_rgb(const std::filesystem::path& path);

/// Raw 8-bit gray decode, used by the training data cache.
std::vector<std::uint8_t> load_gray_u8(const std::filesystem::path& path, int& rows, int& cols);

}  // namespace mammo
