#include "mammo/image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include "mammo/error.hpp"

namespace mammo {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorCode::IoFailure, std::string("cannot open ") + path.string());
  return f;
}

// --- PNG -------------------------------------------------------------------

void write_png(const std::filesystem::path& path, int rows, int cols, int color_type, int channels,
               const std::uint8_t* data) {
  File f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorCode::IoFailure, "png: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoFailure, "png: encode failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(cols) * channels;
  for (int r = 0; r < rows; ++r) png_write_row(png, const_cast<png_bytep>(data + r * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Decodes to 8-bit with the requested channel count (1 = luma, 3 = RGB).
std::vector<std::uint8_t> read_png(const std::filesystem::path& path, int channels, int& rows, int& cols) {
  File f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error(ErrorCode::IoFailure, "png: out of memory");
  }
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::IoFailure, "png: decode failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  const bool is_gray = color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
  if (channels == 1 && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (channels == 3 && is_gray) png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  rows = static_cast<int>(png_get_image_height(png, info));
  cols = static_cast<int>(png_get_image_width(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  if (stride != static_cast<std::size_t>(cols) * channels) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::IoFailure, "png: unexpected row layout in " + path.string());
  }
  out.resize(stride * rows);
  std::vector<png_bytep> row_ptrs(rows);
  for (int r = 0; r < rows; ++r) row_ptrs[r] = out.data() + r * stride;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

// --- JPEG ------------------------------------------------------------------

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void write_jpeg(const std::filesystem::path& path, int rows, int cols, const std::uint8_t* data, int quality) {
  File f = open_file(path, "wb");
  jpeg_compress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    throw Error(ErrorCode::IoFailure, std::string("jpeg: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, f.get());
  cinfo.image_width = static_cast<JDIMENSION>(cols);
  cinfo.image_height = static_cast<JDIMENSION>(rows);
  cinfo.input_components = 1;
  cinfo.in_color_space = JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(data + static_cast<std::size_t>(cinfo.next_scanline) * cols);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
}

std::vector<std::uint8_t> read_jpeg(const std::filesystem::path& path, int& rows, int& cols) {
  File f = open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorCode::IoFailure, std::string("jpeg: ") + err.message + " in " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_GRAYSCALE;
  jpeg_start_decompress(&cinfo);
  rows = static_cast<int>(cinfo.output_height);
  cols = static_cast<int>(cinfo.output_width);
  out.resize(static_cast<std::size_t>(rows) * cols);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.data() + static_cast<std::size_t>(cinfo.output_scanline) * cols;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

bool has_png_magic(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  unsigned char sig[8] = {};
  is.read(reinterpret_cast<char*>(sig), 8);
  return is.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

}  // namespace

void export_image(const ImageTensor& img, const std::filesystem::path& path, ImageFormat format, int jpeg_quality) {
  if (img.empty()) throw Error(ErrorCode::InvalidArgument, "cannot export an empty image");
  std::vector<std::uint8_t> codes(img.size());
  for (std::size_t i = 0; i < codes.size(); ++i) codes[i] = to_u8(img.pixels[i]);
  if (format == ImageFormat::Png) {
    write_png(path, img.rows, img.cols, PNG_COLOR_TYPE_GRAY, 1, codes.data());
  } else {
    write_jpeg(path, img.rows, img.cols, codes.data(), jpeg_quality);
  }
}

std::vector<std::uint8_t> load_gray_u8(const std::filesystem::path& path, int& rows, int& cols) {
  if (has_png_magic(path)) return read_png(path, 1, rows, cols);
  return read_jpeg(path, rows, cols);
}

ImageTensor load_image(const std::filesystem::path& path) {
  int rows = 0, cols = 0;
  const auto codes = load_gray_u8(path, rows, cols);
  ImageTensor img(rows, cols);
  for (std::size_t i = 0; i < codes.size(); ++i) img.pixels[i] = static_cast<float>(codes[i]) / 255.0f;
  return img;
}

void write_png_rgb(const RgbImage& img, const std::filesystem::path& path) {
  if (img.rows <= 0 || img.cols <= 0 || img.data.size() != static_cast<std::size_t>(img.rows) * img.cols * 3) {
    throw Error(ErrorCode::InvalidArgument, "malformed RGB image");
  }
  write_png(path, img.rows, img.cols, PNG_COLOR_TYPE_RGB, 3, img.data.data());
}

RgbImage read_png_rgb(const std::filesystem::path& path) {
  RgbImage img;
  img.data = read_png(path, 3, img.rows, img.cols);
  return img;
}

}  // namespace mammo
