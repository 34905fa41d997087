#pragma once

#include <span>

#include "mammo/tensor.hpp"

namespace mammo {

struct LossAndGrad {
  double loss = 0.0;
  Tensor grad;  // d(loss)/d(logits), same shape as the logits
};

/// Mean over the batch of -log softmax(logits)[label]. logits (n, k).
/// Throws Error{ShapeMismatch} when sizes disagree or a label is out of range.
double cross_entropy(const Tensor& logits, std::span<const int> labels);
LossAndGrad cross_entropy_with_grad(const Tensor& logits, std::span<const int> labels);

/// Mean over all n*k units of -[t log s(z) + (1-t) log(1-s(z))], evaluated in
/// the overflow-free form max(z,0) - z t + log(1 + exp(-|z|)).
double binary_cross_entropy(const Tensor& logits, const Tensor& targets);
LossAndGrad binary_cross_entropy_with_grad(const Tensor& logits, const Tensor& targets);

}  // namespace mammo
