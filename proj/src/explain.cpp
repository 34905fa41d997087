#include "mammo/explain.hpp"

#include <algorithm>
#include <cmath>

#include "mammo/error.hpp"
#include "mammo/preprocess.hpp"

namespace mammo {

namespace {

struct MapShape {
  int channels, rows, cols;
};

MapShape map_shape(const Tensor& t) {
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  if (t.rank() == 4 && t.dim(0) == 1) return {t.dim(1), t.dim(2), t.dim(3)};
  throw Error(ErrorCode::ShapeMismatch, "Grad-CAM expects a (C,h,w) map, got " + shape_string(t.shape));
}

}  // namespace

std::vector<double> gradcam_channel_weights(const Tensor& gradient) {
  const MapShape s = map_shape(gradient);
  const std::size_t plane = static_cast<std::size_t>(s.rows) * s.cols;
  std::vector<double> w(s.channels, 0.0);
  for (int k = 0; k < s.channels; ++k) {
    double sum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) sum += gradient[k * plane + i];
    w[k] = sum / static_cast<double>(plane);
  }
  return w;
}

SaliencyMap gradcam_from_activations(const Tensor& activations, const Tensor& gradient, int out_rows, int out_cols) {
  if (activations.shape != gradient.shape) {
    throw Error(ErrorCode::ShapeMismatch, "activation " + shape_string(activations.shape) + " vs gradient " +
                                              shape_string(gradient.shape));
  }
  for (std::size_t i = 0; i < gradient.numel(); ++i) {
    if (!std::isfinite(gradient[i])) throw Error(ErrorCode::NonFiniteGradient, "non-finite Grad-CAM gradient");
  }
  const MapShape s = map_shape(activations);
  const auto w = gradcam_channel_weights(gradient);
  const std::size_t plane = static_cast<std::size_t>(s.rows) * s.cols;

  ImageTensor raw(s.rows, s.cols);
  double peak = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    double v = 0.0;
    for (int k = 0; k < s.channels; ++k) v += w[k] * activations[k * plane + i];
    v = std::max(v, 0.0);
    raw.pixels[i] = static_cast<float>(v);
    peak = std::max(peak, v);
  }

  SaliencyMap out;
  out.rows = out_rows;
  out.cols = out_cols;
  if (peak <= 0.0) {
    out.grid.assign(static_cast<std::size_t>(out_rows) * out_cols, 0.0f);
    return out;
  }
  for (float& v : raw.pixels) v = static_cast<float>(v / peak);
  ImageTensor up = resize(raw, out_rows, out_cols);
  const float top = *std::max_element(up.pixels.begin(), up.pixels.end());
  if (top > 0.0f)
    for (float& v : up.pixels) v /= top;
  out.grid = std::move(up.pixels);
  return out;
}

SaliencyMap gradcam(Model& model, const ImageTensor& img, int target_class) {
  const int units = model.head().out_units;
  if (target_class < 0 || target_class >= units) {
    throw Error(ErrorCode::InvalidClass,
                "class " + std::to_string(target_class) + " is not a head unit (0.." + std::to_string(units - 1) + ")");
  }
  const ImageTensor images[] = {img};
  const Tensor batch = make_batch(images);
  Pass pass;
  pass.training = false;
  pass.record = true;
  const Tensor logits = model.forward(batch, pass);
  Tensor d_logits(logits.shape);
  d_logits[static_cast<std::size_t>(target_class)] = 1.0f;
  model.zero_grad();
  model.backward(d_logits);
  SaliencyMap map =
      gradcam_from_activations(model.last_feature_map(), model.last_feature_map_grad(), img.rows, img.cols);
  map.target_class = target_class;
  model.zero_grad();
  return map;
}

int class_index(const TaskSpec& task, std::string_view name) {
  for (int i = 0; i < task.out_units(); ++i)
    if (task.class_names[i] == name) return i;
  throw Error(ErrorCode::InvalidClass, "'" + std::string(name) + "' is not a class of this head");
}

std::array<float, 3> jet(float h) {
  h = std::clamp(h, 0.0f, 1.0f);
  auto ramp = [](float x) { return std::clamp(1.5f - std::abs(x), 0.0f, 1.0f); };
  return {ramp(4.0f * h - 3.0f), ramp(4.0f * h - 2.0f), ramp(4.0f * h - 1.0f)};
}

RgbImage overlay(const SaliencyMap& map, const ImageTensor& img, double alpha) {
  if (map.rows != img.rows || map.cols != img.cols) {
    throw Error(ErrorCode::ShapeMismatch, "saliency map " + std::to_string(map.rows) + "x" + std::to_string(map.cols) +
                                              " vs image " + std::to_string(img.rows) + "x" + std::to_string(img.cols));
  }
  RgbImage out;
  out.rows = img.rows;
  out.cols = img.cols;
  out.data.resize(img.size() * 3);
  const float a = static_cast<float>(alpha);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const auto color = jet(map.grid[i]);
    for (int ch = 0; ch < 3; ++ch) out.data[i * 3 + ch] = to_u8((1.0f - a) * img.pixels[i] + a * color[ch]);
  }
  return out;
}

void overlay_and_export(const SaliencyMap& map, const ImageTensor& img, const std::filesystem::path& path,
                        double alpha) {
  write_png_rgb(overlay(map, img, alpha), path);
}

}  // namespace mammo
