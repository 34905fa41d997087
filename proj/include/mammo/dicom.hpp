#pragma once

#include <filesystem>
#include <string>

#include "mammo/image.hpp"

namespace mammo {

/// Header attributes the pipeline reads besides the pixel module.
struct DicomAttributes {
  std::string patient_id;
  std::string sop_instance_uid;
  std::string laterality;     // (0020,0062) ImageLaterality, else (0020,0060)
  std::string view_position;  // (0018,5101)
  std::string photometric;
  std::string transfer_syntax;
};

struct DicomImage {
  DicomAttributes attributes;
  RawImage image;
};

/// Reads a Part-10 file (or a bare little-endian dataset) with an uncompressed
/// single-frame grayscale pixel module. Explicit and implicit VR little endian
/// are supported.
///
/// Missing window attributes fall back to the full stored range:
/// center 2^(bits-1), width 2^bits.
///
/// Throws Error{UnreadableFile} for truncated/invalid/compressed files and
/// Error{MissingPixelData} when no usable pixel data element is present.
DicomImage read_dicom(const std::filesystem::path& path);

inline RawImage parse_dicom(const std::filesystem::path& path) { return read_dicom(path).image; }

}  // namespace mammo
