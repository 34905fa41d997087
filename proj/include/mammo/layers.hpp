#pragma once

#include <string>
#include <vector>

#include "mammo/rng.hpp"
#include "mammo/tensor.hpp"

namespace mammo {

/// Named parameter or buffer. Buffers (BN running statistics) carry no grad
/// and are skipped by the optimizer.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> shape, bool is_trainable = true)
      : name(std::move(n)), value(shape), grad(is_trainable ? Tensor(shape) : Tensor()), trainable(is_trainable) {}
};

/// Forward-pass flags. `training` selects batch statistics and active
/// dropout; `record` keeps what backward needs.
struct Pass {
  bool training = false;
  bool record = false;
  Pcg32* rng = nullptr;  // dropout masks
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int padding);

  Tensor forward(const Tensor& x, const Pass& pass);
  Tensor backward(const Tensor& dy, bool need_input_grad = true);

  /// Kaiming-normal, fan-out mode (ReLU gain).
  void reset_parameters(Pcg32& rng);
  void collect(std::vector<Parameter*>& out) { out.push_back(&weight); }

  Parameter weight;  // (out, in, k, k)
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;

 private:
  Tensor input_;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);

  Tensor forward(const Tensor& x, const Pass& pass);
  Tensor backward(const Tensor& dy);
  void collect(std::vector<Parameter*>& out);

  Parameter weight, bias, running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;

 private:
  Tensor xhat_;
  std::vector<double> inv_std_;
  bool used_batch_stats_ = false;
};

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in_features, int out_features);

  Tensor forward(const Tensor& x, const Pass& pass);  // (N, in) -> (N, out)
  Tensor backward(const Tensor& dy);

  /// U(-1/sqrt(in), 1/sqrt(in)) for weight and bias.
  void reset_parameters(Pcg32& rng);
  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Parameter weight;  // (out, in)
  Parameter bias;    // (out)

 private:
  Tensor input_;
};

/// 3x3, stride 2, padding 1 max pooling (the residual-network stem).
class MaxPool2d {
 public:
  Tensor forward(const Tensor& x, const Pass& pass);
  Tensor backward(const Tensor& dy);

 private:
  std::vector<int> in_shape_;
  std::vector<std::size_t> argmax_;
};

class ReLU {
 public:
  Tensor forward(Tensor x, const Pass& pass);
  Tensor backward(Tensor dy) const;

 private:
  std::vector<bool> mask_;
};

/// Inverted dropout; identity outside training.
class Dropout {
 public:
  explicit Dropout(double p = 0.0) : p_(p) {}
  Tensor forward(Tensor x, const Pass& pass);
  Tensor backward(Tensor dy) const;
  double p() const { return p_; }

 private:
  double p_;
  std::vector<float> mask_;
};

/// (N, C, H, W) -> (N, C)
Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Tensor& dy, const std::vector<int>& in_shape);

}  // namespace mammo
