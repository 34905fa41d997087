#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "mammo/image.hpp"
#include "mammo/rng.hpp"

namespace mammo {

struct AugmentConfig {
  double p_hflip = 0.5;
  double p_augmix = 0.2;
  double p_histeq = 0.4;
  double p_erase = 0.1;
  int augmix_severity = 3;
  int augmix_width = 3;
  std::pair<int, int> augmix_depth_range{1, 3};
  std::pair<double, double> erase_area_range{0.02, 0.33};
  std::pair<double, double> erase_aspect_range{0.3, 3.3};
  std::uint64_t rng_seed = 0;

  /// Throws Error{InvalidArgument} on probabilities outside [0,1] or empty /
  /// non-positive ranges.
  void validate() const;
};

ImageTensor hflip(const ImageTensor& img);
ImageTensor random_horizontal_flip(const ImageTensor& img, double p, Pcg32& rng);

/// Single-channel AugMix primitives. `level` follows the AugMix convention of
/// a magnitude in (0, 10]; signed operations take a separate sign.
namespace augmix_ops {
enum class Op { AutoContrast, Equalize, Posterize, Rotate, ShearX, ShearY, TranslateX, TranslateY };
inline constexpr std::array<Op, 8> kAll{Op::AutoContrast, Op::Equalize,   Op::Posterize,  Op::Rotate,
                                        Op::ShearX,       Op::ShearY,     Op::TranslateX, Op::TranslateY};

ImageTensor autocontrast(const ImageTensor& img);
ImageTensor equalize(const ImageTensor& img);
ImageTensor posterize(const ImageTensor& img, int bits);
/// Affine ops: nearest-neighbour sampling about the image centre, zero fill.
ImageTensor rotate(const ImageTensor& img, double degrees);
ImageTensor shear_x(const ImageTensor& img, double factor);
ImageTensor shear_y(const ImageTensor& img, double factor);
ImageTensor translate(const ImageTensor& img, int d_rows, int d_cols);

/// Applies `op` with a randomly drawn level for the given severity.
ImageTensor apply_random(Op op, const ImageTensor& img, int severity, Pcg32& rng);
}  // namespace augmix_ops

using ChainOp = std::function<ImageTensor(const ImageTensor&)>;
using Chain = std::vector<ChainOp>;

/// out = blend * img + (1 - blend) * sum_i weights[i] * chain_i(img),
/// clamped to [0,1]. Exposed for tests that force weights and coefficient.
ImageTensor augmix_mix(const ImageTensor& img, const std::vector<Chain>& chains, std::span<const double> weights,
                       double blend);

/// Samples `augmix_width` chains of depth in augmix_depth_range with
/// Dirichlet(1,..,1) weights and a Beta(1,1) blend coefficient. This is the
/// transform itself, without the p_augmix gate.
ImageTensor augmix(const ImageTensor& img, const AugmentConfig& config, Pcg32& rng);
ImageTensor random_augmix(const ImageTensor& img, const AugmentConfig& config, Pcg32& rng);

/// 256-bin equalization of the 8-bit quantized image: a pixel at level q maps
/// to CDF(q) / N. A single-level histogram is returned unchanged.
ImageTensor histogram_equalize(const ImageTensor& img);
ImageTensor random_hist_equalization(const ImageTensor& img, double p, Pcg32& rng);

struct EraseRect {
  int row = 0;
  int col = 0;
  int rows = 0;
  int cols = 0;
};

ImageTensor erase(const ImageTensor& img, const EraseRect& rect, float fill = 0.0f);

/// Rectangle with area fraction in erase_area_range and aspect (rows/cols)
/// in erase_aspect_range, fully inside an image of the given size.
EraseRect sample_erase_rect(int rows, int cols, const AugmentConfig& config, Pcg32& rng);
ImageTensor random_erasing(const ImageTensor& img, double p, const AugmentConfig& config, Pcg32& rng);

/// flip -> AugMix -> hist-eq -> erasing, all drawing from the caller's stream.
class TrainTransform {
 public:
  explicit TrainTransform(AugmentConfig config);
  ImageTensor operator()(const ImageTensor& img, Pcg32& rng) const;
  const AugmentConfig& config() const { return config_; }

 private:
  AugmentConfig config_;
};

TrainTransform compose_train_transforms(const AugmentConfig& config);

/// Independent stream for data-loading worker `worker_id`.
inline Pcg32 worker_rng(std::uint64_t seed, std::uint64_t worker_id) { return Pcg32(seed, worker_id); }

}  // namespace mammo
