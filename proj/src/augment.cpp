#include "mammo/augment.hpp"

#include <algorithm>
#include <cmath>

#include "mammo/error.hpp"

namespace mammo {

void AugmentConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidArgument, std::string(name) + " must be in [0, 1]");
  };
  prob(p_hflip, "p_hflip");
  prob(p_augmix, "p_augmix");
  prob(p_histeq, "p_histeq");
  prob(p_erase, "p_erase");
  if (augmix_severity < 1 || augmix_severity > 10) throw Error(ErrorCode::InvalidArgument, "augmix_severity must be in [1, 10]");
  if (augmix_width < 1) throw Error(ErrorCode::InvalidArgument, "augmix_width must be >= 1");
  if (augmix_depth_range.first < 1 || augmix_depth_range.first > augmix_depth_range.second) {
    throw Error(ErrorCode::InvalidArgument, "augmix_depth_range must be a non-empty range of positive depths");
  }
  const auto& [a0, a1] = erase_area_range;
  if (!(a0 > 0.0 && a0 <= a1 && a1 <= 1.0)) throw Error(ErrorCode::InvalidArgument, "erase_area_range must lie in (0, 1]");
  const auto& [r0, r1] = erase_aspect_range;
  if (!(r0 > 0.0 && r0 <= r1)) throw Error(ErrorCode::InvalidArgument, "erase_aspect_range must be positive");
}

ImageTensor hflip(const ImageTensor& img) {
  ImageTensor out = img;
  for (int r = 0; r < img.rows; ++r) {
    auto row = out.pixels.begin() + static_cast<std::ptrdiff_t>(r) * img.cols;
    std::reverse(row, row + img.cols);
  }
  return out;
}

ImageTensor random_horizontal_flip(const ImageTensor& img, double p, Pcg32& rng) {
  return rng.bernoulli(p) ? hflip(img) : img;
}

namespace augmix_ops {

namespace {

// Nearest-neighbour inverse mapping about the centre; (src_r, src_c) = f(r, c).
template <typename F>
ImageTensor remap(const ImageTensor& img, F&& f) {
  ImageTensor out(img.rows, img.cols, 0.0f);
  const double cr = (img.rows - 1) / 2.0, cc = (img.cols - 1) / 2.0;
  for (int r = 0; r < img.rows; ++r) {
    for (int c = 0; c < img.cols; ++c) {
      const auto [sr, sc] = f(r - cr, c - cc);
      const long ir = std::lround(sr + cr), ic = std::lround(sc + cc);
      if (ir < 0 || ir >= img.rows || ic < 0 || ic >= img.cols) continue;
      out.at(r, c) = img.at(static_cast<int>(ir), static_cast<int>(ic));
    }
  }
  return out;
}

double sample_level(int severity, Pcg32& rng) { return rng.uniform(0.1, static_cast<double>(severity)); }
int int_parameter(double level, int maxval) { return static_cast<int>(level * maxval / 10.0); }
double float_parameter(double level, double maxval) { return level * maxval / 10.0; }
double random_sign(Pcg32& rng) { return rng.uniform() > 0.5 ? -1.0 : 1.0; }

}  // namespace

ImageTensor autocontrast(const ImageTensor& img) {
  if (img.empty()) return img;
  const auto [lo_it, hi_it] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  const float lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return img;
  ImageTensor out = img;
  for (float& v : out.pixels) v = std::clamp((v - lo) / (hi - lo), 0.0f, 1.0f);
  return out;
}

ImageTensor equalize(const ImageTensor& img) { return histogram_equalize(img); }

ImageTensor posterize(const ImageTensor& img, int bits) {
  bits = std::clamp(bits, 1, 8);
  const unsigned mask = (0xFFu << (8 - bits)) & 0xFFu;
  ImageTensor out = img;
  for (float& v : out.pixels) v = static_cast<float>(to_u8(v) & mask) / 255.0f;
  return out;
}

ImageTensor rotate(const ImageTensor& img, double degrees) {
  const double t = degrees * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(t), sn = std::sin(t);
  return remap(img, [&](double y, double x) { return std::pair{cs * y - sn * x, sn * y + cs * x}; });
}

ImageTensor shear_x(const ImageTensor& img, double factor) {
  return remap(img, [&](double y, double x) { return std::pair{y, x + factor * y}; });
}

ImageTensor shear_y(const ImageTensor& img, double factor) {
  return remap(img, [&](double y, double x) { return std::pair{y + factor * x, x}; });
}

ImageTensor translate(const ImageTensor& img, int d_rows, int d_cols) {
  return remap(img, [&](double y, double x) {
    return std::pair{y - static_cast<double>(d_rows), x - static_cast<double>(d_cols)};
  });
}

ImageTensor apply_random(Op op, const ImageTensor& img, int severity, Pcg32& rng) {
  switch (op) {
    case Op::AutoContrast: return autocontrast(img);
    case Op::Equalize: return equalize(img);
    case Op::Posterize: return posterize(img, 4 - int_parameter(sample_level(severity, rng), 4));
    case Op::Rotate: {
      const double deg = int_parameter(sample_level(severity, rng), 30);
      return rotate(img, deg * random_sign(rng));
    }
    case Op::ShearX: {
      const double f = float_parameter(sample_level(severity, rng), 0.3);
      return shear_x(img, f * random_sign(rng));
    }
    case Op::ShearY: {
      const double f = float_parameter(sample_level(severity, rng), 0.3);
      return shear_y(img, f * random_sign(rng));
    }
    case Op::TranslateX: {
      const int d = int_parameter(sample_level(severity, rng), img.cols / 3);
      return translate(img, 0, static_cast<int>(d * random_sign(rng)));
    }
    case Op::TranslateY: {
      const int d = int_parameter(sample_level(severity, rng), img.rows / 3);
      return translate(img, static_cast<int>(d * random_sign(rng)), 0);
    }
  }
  return img;
}

}  // namespace augmix_ops

ImageTensor augmix_mix(const ImageTensor& img, const std::vector<Chain>& chains, std::span<const double> weights,
                       double blend) {
  if (weights.size() != chains.size()) throw Error(ErrorCode::LengthMismatch, "one weight per chain required");
  std::vector<double> mix(img.size(), 0.0);
  for (std::size_t i = 0; i < chains.size(); ++i) {
    if (weights[i] == 0.0) continue;
    ImageTensor aug = img;
    for (const auto& op : chains[i]) aug = op(aug);
    for (std::size_t j = 0; j < mix.size(); ++j) mix[j] += weights[i] * aug.pixels[j];
  }
  ImageTensor out(img.rows, img.cols);
  for (std::size_t j = 0; j < mix.size(); ++j) {
    const double v = blend * img.pixels[j] + (1.0 - blend) * mix[j];
    out.pixels[j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

ImageTensor augmix(const ImageTensor& img, const AugmentConfig& config, Pcg32& rng) {
  const int width = config.augmix_width;
  std::vector<double> weights(width);
  double sum = 0.0;
  for (double& w : weights) sum += (w = rng.exponential());
  for (double& w : weights) w = sum > 0.0 ? w / sum : 1.0 / width;
  const double blend = rng.uniform();

  std::vector<Chain> chains(width);
  for (auto& chain : chains) {
    const int depth = rng.uniform_int(config.augmix_depth_range.first, config.augmix_depth_range.second);
    for (int d = 0; d < depth; ++d) {
      const auto op = augmix_ops::kAll[rng.bounded(augmix_ops::kAll.size())];
      // Each op draws its level when it runs, from the same stream.
      chain.push_back([op, &config, &rng](const ImageTensor& x) {
        return augmix_ops::apply_random(op, x, config.augmix_severity, rng);
      });
    }
  }
  return augmix_mix(img, chains, weights, blend);
}

ImageTensor random_augmix(const ImageTensor& img, const AugmentConfig& config, Pcg32& rng) {
  return rng.bernoulli(config.p_augmix) ? augmix(img, config, rng) : img;
}

ImageTensor histogram_equalize(const ImageTensor& img) {
  if (img.empty()) return img;
  std::array<std::size_t, 256> hist{};
  for (float v : img.pixels) ++hist[to_u8(v)];
  const auto levels = std::count_if(hist.begin(), hist.end(), [](std::size_t n) { return n > 0; });
  if (levels <= 1) return img;
  std::array<float, 256> lut{};
  std::size_t cdf = 0;
  const double n = static_cast<double>(img.size());
  for (int q = 0; q < 256; ++q) {
    cdf += hist[q];
    lut[q] = static_cast<float>(cdf / n);
  }
  ImageTensor out = img;
  for (float& v : out.pixels) v = lut[to_u8(v)];
  return out;
}

ImageTensor random_hist_equalization(const ImageTensor& img, double p, Pcg32& rng) {
  return rng.bernoulli(p) ? histogram_equalize(img) : img;
}

ImageTensor erase(const ImageTensor& img, const EraseRect& rect, float fill) {
  ImageTensor out = img;
  const int r0 = std::max(rect.row, 0), r1 = std::min(rect.row + rect.rows, img.rows);
  const int c0 = std::max(rect.col, 0), c1 = std::min(rect.col + rect.cols, img.cols);
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) out.at(r, c) = fill;
  return out;
}

EraseRect sample_erase_rect(int rows, int cols, const AugmentConfig& config, Pcg32& rng) {
  const auto [a0, a1] = config.erase_area_range;
  const double log_r0 = std::log(config.erase_aspect_range.first);
  const double log_r1 = std::log(config.erase_aspect_range.second);
  const double area = static_cast<double>(rows) * cols;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double target = rng.uniform(a0, a1) * area;
    const double aspect = std::exp(rng.uniform(log_r0, log_r1));
    const int h = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    const int w = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (h < 1 || w < 1 || h > rows || w > cols) continue;
    const double frac = static_cast<double>(h) * w / area;
    if (frac < a0 || frac > a1) continue;
    return {rng.uniform_int(0, rows - h), rng.uniform_int(0, cols - w), h, w};
  }
  const int side = std::clamp(static_cast<int>(std::lround(std::sqrt(0.5 * (a0 + a1) * area))), 1,
                              std::min(rows, cols));
  return {(rows - side) / 2, (cols - side) / 2, side, side};
}

ImageTensor random_erasing(const ImageTensor& img, double p, const AugmentConfig& config, Pcg32& rng) {
  if (!rng.bernoulli(p) || img.empty()) return img;
  return erase(img, sample_erase_rect(img.rows, img.cols, config, rng));
}

TrainTransform::TrainTransform(AugmentConfig config) : config_(std::move(config)) { config_.validate(); }

ImageTensor TrainTransform::operator()(const ImageTensor& img, Pcg32& rng) const {
  ImageTensor x = random_horizontal_flip(img, config_.p_hflip, rng);
  x = random_augmix(x, config_, rng);
  x = random_hist_equalization(x, config_.p_histeq, rng);
  return random_erasing(x, config_.p_erase, config_, rng);
}

TrainTransform compose_train_transforms(const AugmentConfig& config) { return TrainTransform(config); }

}  // namespace mammo
