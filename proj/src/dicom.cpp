#include "mammo/dicom.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string_view>
#include <vector>

#include "mammo/error.hpp"

namespace mammo {

namespace {

constexpr std::uint32_t kUndefinedLength = 0xFFFFFFFFu;

constexpr std::uint32_t tag(std::uint16_t group, std::uint16_t element) {
  return (static_cast<std::uint32_t>(group) << 16) | element;
}

constexpr std::uint32_t kTransferSyntax = tag(0x0002, 0x0010);
constexpr std::uint32_t kSopInstanceUid = tag(0x0008, 0x0018);
constexpr std::uint32_t kPatientId = tag(0x0010, 0x0020);
constexpr std::uint32_t kViewPosition = tag(0x0018, 0x5101);
constexpr std::uint32_t kLaterality = tag(0x0020, 0x0060);
constexpr std::uint32_t kImageLaterality = tag(0x0020, 0x0062);
constexpr std::uint32_t kSamplesPerPixel = tag(0x0028, 0x0002);
constexpr std::uint32_t kPhotometric = tag(0x0028, 0x0004);
constexpr std::uint32_t kNumberOfFrames = tag(0x0028, 0x0008);
constexpr std::uint32_t kRows = tag(0x0028, 0x0010);
constexpr std::uint32_t kColumns = tag(0x0028, 0x0011);
constexpr std::uint32_t kBitsAllocated = tag(0x0028, 0x0100);
constexpr std::uint32_t kBitsStored = tag(0x0028, 0x0101);
constexpr std::uint32_t kPixelRepresentation = tag(0x0028, 0x0103);
constexpr std::uint32_t kWindowCenter = tag(0x0028, 0x1050);
constexpr std::uint32_t kWindowWidth = tag(0x0028, 0x1051);
constexpr std::uint32_t kRescaleIntercept = tag(0x0028, 0x1052);
constexpr std::uint32_t kRescaleSlope = tag(0x0028, 0x1053);
constexpr std::uint32_t kPixelData = tag(0x7FE0, 0x0010);
constexpr std::uint32_t kItem = tag(0xFFFE, 0xE000);
constexpr std::uint32_t kItemDelimitation = tag(0xFFFE, 0xE00D);
constexpr std::uint32_t kSequenceDelimitation = tag(0xFFFE, 0xE0DD);

constexpr std::string_view kImplicitLittle = "1.2.840.10008.1.2";
constexpr std::string_view kExplicitLittle = "1.2.840.10008.1.2.1";

bool long_vr(std::string_view vr) {
  for (std::string_view v : {"OB", "OD", "OF", "OL", "OV", "OW", "SQ", "SV", "UC", "UN", "UR", "UT", "UV"})
    if (vr == v) return true;
  return false;
}

struct Element {
  std::uint32_t tag = 0;
  std::string_view vr;  // empty in implicit mode
  std::uint32_t length = 0;
  std::size_t value_offset = 0;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, const std::string& name) : bytes_(bytes), name_(name) {}

  std::size_t pos = 0;
  bool explicit_vr = true;

  bool at_end() const { return pos >= bytes_.size(); }
  std::size_t size() const { return bytes_.size(); }

  void need(std::size_t n) const {
    if (pos + n > bytes_.size()) throw Error(ErrorCode::UnreadableFile, name_ + ": truncated DICOM data");
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(bytes_[pos] | (bytes_[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    const std::uint32_t v = static_cast<std::uint32_t>(bytes_[pos]) | (static_cast<std::uint32_t>(bytes_[pos + 1]) << 8) |
                            (static_cast<std::uint32_t>(bytes_[pos + 2]) << 16) |
                            (static_cast<std::uint32_t>(bytes_[pos + 3]) << 24);
    pos += 4;
    return v;
  }

  Element next() {
    Element e;
    const std::uint16_t group = u16();
    const std::uint16_t element = u16();
    e.tag = tag(group, element);
    if (group == 0xFFFE) {
      e.length = u32();
    } else if (explicit_vr || group == 0x0002) {
      need(2);
      e.vr = std::string_view(reinterpret_cast<const char*>(bytes_.data() + pos), 2);
      pos += 2;
      if (long_vr(e.vr)) {
        u16();
        e.length = u32();
      } else {
        e.length = u16();
      }
    } else {
      e.length = u32();
    }
    e.value_offset = pos;
    return e;
  }

  void skip_value(const Element& e) {
    if (e.length == kUndefinedLength) {
      skip_undefined_sequence();
      return;
    }
    need(e.length);
    pos += e.length;
  }

  std::string_view view(const Element& e) const {
    return {reinterpret_cast<const char*>(bytes_.data() + e.value_offset), e.length};
  }
  const std::uint8_t* data(std::size_t offset) const { return bytes_.data() + offset; }

 private:
  // Items until the sequence delimiter; undefined-length items hold nested
  // datasets closed by an item delimiter.
  void skip_undefined_sequence() {
    for (;;) {
      const Element item = next();
      if (item.tag == kSequenceDelimitation) return;
      if (item.tag != kItem) throw Error(ErrorCode::UnreadableFile, name_ + ": malformed sequence");
      if (item.length != kUndefinedLength) {
        need(item.length);
        pos += item.length;
        continue;
      }
      for (;;) {
        const Element inner = next();
        if (inner.tag == kItemDelimitation) break;
        skip_value(inner);
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  const std::string& name_;
};

std::string trimmed(std::string_view s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\0')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return std::string(s);
}

// First value of a multi-valued DS/IS string.
std::optional<double> decimal(std::string_view s) {
  const auto sep = s.find('\\');
  std::string first = trimmed(s.substr(0, sep));
  if (first.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(first.data(), first.data() + first.size(), v);
  if (ec != std::errc{} || ptr != first.data() + first.size()) return std::nullopt;
  return v;
}

struct PixelModule {
  int rows = 0, cols = 0, bits_allocated = 0, bits_stored = 0, pixel_representation = 0;
  int samples_per_pixel = 1, frames = 1;
  std::optional<double> center, width, slope, intercept;
  std::optional<Element> pixel_data;
};

}  // namespace

DicomImage read_dicom(const std::filesystem::path& path) {
  const std::string name = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::UnreadableFile, name + ": cannot open");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw Error(ErrorCode::UnreadableFile, name + ": too short to be DICOM");

  Reader reader(bytes, name);
  DicomImage out;
  if (bytes.size() >= 132 && std::memcmp(bytes.data() + 128, "DICM", 4) == 0) {
    reader.pos = 132;
  } else {
    // Bare dataset: guess the VR encoding from the first element.
    const bool letters = std::isupper(bytes[4]) && std::isupper(bytes[5]);
    reader.explicit_vr = letters;
  }

  PixelModule pm;
  bool meta_done = reader.pos == 0;
  while (!reader.at_end()) {
    const std::size_t element_start = reader.pos;
    const Element e = reader.next();
    if (!meta_done && (e.tag >> 16) != 0x0002) {
      meta_done = true;
      const std::string& ts = out.attributes.transfer_syntax;
      if (ts.empty() || ts == kExplicitLittle) {
        reader.explicit_vr = true;
      } else if (ts == kImplicitLittle) {
        reader.explicit_vr = false;
      } else {
        throw Error(ErrorCode::UnreadableFile, name + ": unsupported transfer syntax " + ts);
      }
      reader.pos = element_start;
      continue;
    }
    if (e.tag == kPixelData) {
      if (e.length == kUndefinedLength) {
        throw Error(ErrorCode::UnreadableFile, name + ": encapsulated (compressed) pixel data is not supported");
      }
      reader.need(e.length);
      pm.pixel_data = e;
      reader.pos += e.length;
      continue;
    }
    if (e.length == kUndefinedLength || e.vr == "SQ") {
      reader.skip_value(e);
      continue;
    }
    reader.need(e.length);
    const std::string_view v = reader.view(e);
    auto us = [&] { return e.length >= 2 ? static_cast<int>(reader.data(e.value_offset)[0] | (reader.data(e.value_offset)[1] << 8)) : 0; };
    switch (e.tag) {
      case kTransferSyntax: out.attributes.transfer_syntax = trimmed(v); break;
      case kSopInstanceUid: out.attributes.sop_instance_uid = trimmed(v); break;
      case kPatientId: out.attributes.patient_id = trimmed(v); break;
      case kViewPosition: out.attributes.view_position = trimmed(v); break;
      case kImageLaterality: out.attributes.laterality = trimmed(v); break;
      case kLaterality:
        if (out.attributes.laterality.empty()) out.attributes.laterality = trimmed(v);
        break;
      case kPhotometric: out.attributes.photometric = trimmed(v); break;
      case kSamplesPerPixel: pm.samples_per_pixel = us(); break;
      case kNumberOfFrames: pm.frames = static_cast<int>(decimal(v).value_or(1.0)); break;
      case kRows: pm.rows = us(); break;
      case kColumns: pm.cols = us(); break;
      case kBitsAllocated: pm.bits_allocated = us(); break;
      case kBitsStored: pm.bits_stored = us(); break;
      case kPixelRepresentation: pm.pixel_representation = us(); break;
      case kWindowCenter: pm.center = decimal(v); break;
      case kWindowWidth: pm.width = decimal(v); break;
      case kRescaleIntercept: pm.intercept = decimal(v); break;
      case kRescaleSlope: pm.slope = decimal(v); break;
      default: break;
    }
    reader.pos += e.length;
  }

  if (!pm.pixel_data || pm.rows < 1 || pm.cols < 1) throw Error(ErrorCode::MissingPixelData, name);
  if (pm.samples_per_pixel != 1) throw Error(ErrorCode::UnreadableFile, name + ": only grayscale images are supported");
  if (pm.frames != 1) throw Error(ErrorCode::UnreadableFile, name + ": multi-frame objects are not supported");
  if (pm.bits_allocated != 8 && pm.bits_allocated != 16) {
    throw Error(ErrorCode::UnreadableFile, name + ": unsupported BitsAllocated " + std::to_string(pm.bits_allocated));
  }
  if (pm.bits_stored <= 0 || pm.bits_stored > pm.bits_allocated) pm.bits_stored = pm.bits_allocated;

  const std::size_t count = static_cast<std::size_t>(pm.rows) * pm.cols;
  const std::size_t bytes_per = static_cast<std::size_t>(pm.bits_allocated / 8);
  if (pm.pixel_data->length < count * bytes_per) {
    throw Error(ErrorCode::UnreadableFile, name + ": pixel data shorter than Rows x Columns");
  }

  RawImage& img = out.image;
  img.rows = pm.rows;
  img.cols = pm.cols;
  img.bits_stored = pm.bits_stored;
  img.monochrome1 = out.attributes.photometric == "MONOCHROME1";
  img.pixels.resize(count);
  const std::uint8_t* src = reader.data(pm.pixel_data->value_offset);
  const std::uint32_t mask = pm.bits_stored >= 32 ? 0xFFFFFFFFu : ((1u << pm.bits_stored) - 1u);
  const std::uint32_t sign_bit = 1u << (pm.bits_stored - 1);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t raw = bytes_per == 1 ? src[i] : static_cast<std::uint32_t>(src[2 * i] | (src[2 * i + 1] << 8));
    raw &= mask;
    std::int32_t value = static_cast<std::int32_t>(raw);
    if (pm.pixel_representation == 1 && (raw & sign_bit)) value -= static_cast<std::int32_t>(mask) + 1;
    img.pixels[i] = value;
  }

  img.rescale_slope = pm.slope.value_or(1.0);
  img.rescale_intercept = pm.intercept.value_or(0.0);
  if (pm.center && pm.width) {
    img.window = {*pm.center, *pm.width};
  } else {
    const double full = std::ldexp(1.0, pm.bits_stored);
    img.window = {pm.pixel_representation == 1 ? 0.0 : full / 2.0, full};
  }
  return out;
}

}  // namespace mammo
