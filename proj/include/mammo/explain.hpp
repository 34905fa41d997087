#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mammo/image.hpp"
#include "mammo/image_io.hpp"
#include "mammo/models.hpp"
#include "mammo/tensor.hpp"

namespace mammo {

inline constexpr std::string_view kGradcamLayer = "layer4";

struct SaliencyMap {
  int rows = 0;
  int cols = 0;
  std::vector<float> grid;  // row-major, values in [0,1]
  int target_class = 0;
  std::string source_layer{kGradcamLayer};

  float at(int r, int c) const { return grid[static_cast<std::size_t>(r) * cols + c]; }
};

/// Channel weights: spatial mean of the gradient, one per channel.
/// Accepts (C, h, w) or (1, C, h, w).
std::vector<double> gradcam_channel_weights(const Tensor& gradient);

/// ReLU(sum_k w_k A_k), bilinearly upsampled to out_rows x out_cols and
/// divided by its maximum (an all-zero map stays zero).
/// Throws Error{ShapeMismatch} and Error{NonFiniteGradient}.
SaliencyMap gradcam_from_activations(const Tensor& activations, const Tensor& gradient, int out_rows, int out_cols);

/// Grad-CAM at the final residual stage for one image. The target is the
/// pre-activation logit of `target_class`. Throws Error{InvalidClass}.
SaliencyMap gradcam(Model& model, const ImageTensor& img, int target_class);

/// Class index of a head by name (e.g. "mass"); Error{InvalidClass}.
int class_index(const TaskSpec& task, std::string_view name);

/// Jet colour map on [0,1].
std::array<float, 3> jet(float h);

/// (1 - alpha) * gray + alpha * jet(map), quantized to 8-bit RGB.
/// Throws Error{ShapeMismatch}.
RgbImage overlay(const SaliencyMap& map, const ImageTensor& img, double alpha = 0.4);
void overlay_and_export(const SaliencyMap& map, const ImageTensor& img, const std::filesystem::path& path,
                        double alpha = 0.4);

}  // namespace mammo
