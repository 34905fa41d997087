#include "mammo/losses.hpp"

#include <algorithm>
#include <cmath>

#include "mammo/error.hpp"

namespace mammo {

namespace {

void check_ce(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || static_cast<std::size_t>(logits.dim(0)) != labels.size() || logits.dim(0) == 0) {
    throw Error(ErrorCode::ShapeMismatch, "cross_entropy: logits " + shape_string(logits.shape) + " vs " +
                                              std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || y >= logits.dim(1)) throw Error(ErrorCode::ShapeMismatch, "cross_entropy: label out of range");
  }
}

void check_bce(const Tensor& logits, const Tensor& targets) {
  if (logits.rank() != 2 || logits.shape != targets.shape || logits.numel() == 0) {
    throw Error(ErrorCode::ShapeMismatch, "binary_cross_entropy: logits " + shape_string(logits.shape) +
                                              " vs targets " + shape_string(targets.shape));
  }
}

}  // namespace

LossAndGrad cross_entropy_with_grad(const Tensor& logits, std::span<const int> labels) {
  check_ce(logits, labels);
  const int n = logits.dim(0);
  const int k = logits.dim(1);
  LossAndGrad out{0.0, Tensor(logits.shape)};
  for (int b = 0; b < n; ++b) {
    const float* z = logits.ptr() + static_cast<std::size_t>(b) * k;
    double mx = z[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(z[j]));
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += std::exp(z[j] - mx);
    const double lse = mx + std::log(sum);
    out.loss += lse - z[labels[b]];
    float* g = out.grad.ptr() + static_cast<std::size_t>(b) * k;
    for (int j = 0; j < k; ++j) {
      const double p = std::exp(z[j] - lse);
      g[j] = static_cast<float>((p - (j == labels[b] ? 1.0 : 0.0)) / n);
    }
  }
  out.loss /= n;
  return out;
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  return cross_entropy_with_grad(logits, labels).loss;
}

LossAndGrad binary_cross_entropy_with_grad(const Tensor& logits, const Tensor& targets) {
  check_bce(logits, targets);
  const auto total = static_cast<double>(logits.numel());
  LossAndGrad out{0.0, Tensor(logits.shape)};
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    const double z = logits[i];
    const double t = targets[i];
    out.loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    const double s = 1.0 / (1.0 + std::exp(-z));
    out.grad[i] = static_cast<float>((s - t) / total);
  }
  out.loss /= total;
  return out;
}

double binary_cross_entropy(const Tensor& logits, const Tensor& targets) {
  return binary_cross_entropy_with_grad(logits, targets).loss;
}

}  // namespace mammo
