#include "mammo/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mammo/error.hpp"

namespace mammo {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using ConstMapRM = Eigen::Map<const MatRM>;

// Upper bound on the im2col scratch (floats) before the batch is processed in
// chunks of samples.
constexpr std::size_t kColBudget = std::size_t{1} << 24;

void require_rank4(const Tensor& x, int channels, const char* layer) {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw Error(ErrorCode::ShapeMismatch, std::string(layer) + " expects (N, " + std::to_string(channels) +
                                              ", H, W), got " + shape_string(x.shape));
  }
}

struct ConvGeometry {
  int n, c, h, w, k, stride, pad, ho, wo;
  std::size_t hwo() const { return static_cast<std::size_t>(ho) * wo; }
  std::size_t ckk() const { return static_cast<std::size_t>(c) * k * k; }
};

void im2col(const float* x, const ConvGeometry& g, int n0, int nb, float* col) {
  const std::size_t ld = static_cast<std::size_t>(nb) * g.hwo();
  const std::size_t plane = static_cast<std::size_t>(g.h) * g.w;
  for (int c = 0; c < g.c; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        float* dst_row = col + (static_cast<std::size_t>(c * g.k + ki) * g.k + kj) * ld;
        for (int b = 0; b < nb; ++b) {
          const float* src = x + (static_cast<std::size_t>(n0 + b) * g.c + c) * plane;
          float* dst = dst_row + b * g.hwo();
          for (int oh = 0; oh < g.ho; ++oh) {
            const int ih = oh * g.stride - g.pad + ki;
            float* d = dst + static_cast<std::size_t>(oh) * g.wo;
            if (ih < 0 || ih >= g.h) {
              std::fill(d, d + g.wo, 0.0f);
              continue;
            }
            const float* s = src + static_cast<std::size_t>(ih) * g.w;
            for (int ow = 0; ow < g.wo; ++ow) {
              const int iw = ow * g.stride - g.pad + kj;
              d[ow] = (iw >= 0 && iw < g.w) ? s[iw] : 0.0f;
            }
          }
        }
      }
    }
  }
}

void col2im(const float* col, const ConvGeometry& g, int n0, int nb, float* dx) {
  const std::size_t ld = static_cast<std::size_t>(nb) * g.hwo();
  const std::size_t plane = static_cast<std::size_t>(g.h) * g.w;
  for (int c = 0; c < g.c; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const float* src_row = col + (static_cast<std::size_t>(c * g.k + ki) * g.k + kj) * ld;
        for (int b = 0; b < nb; ++b) {
          float* dst = dx + (static_cast<std::size_t>(n0 + b) * g.c + c) * plane;
          const float* src = src_row + b * g.hwo();
          for (int oh = 0; oh < g.ho; ++oh) {
            const int ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= g.h) continue;
            const float* s = src + static_cast<std::size_t>(oh) * g.wo;
            float* d = dst + static_cast<std::size_t>(ih) * g.w;
            for (int ow = 0; ow < g.wo; ++ow) {
              const int iw = ow * g.stride - g.pad + kj;
              if (iw >= 0 && iw < g.w) d[iw] += s[ow];
            }
          }
        }
      }
    }
  }
}

int chunk_size(const ConvGeometry& g) {
  const std::size_t per_sample = g.ckk() * g.hwo();
  const std::size_t fit = per_sample == 0 ? 1 : kColBudget / per_sample;
  return static_cast<int>(std::clamp<std::size_t>(fit, 1, static_cast<std::size_t>(g.n)));
}

}  // namespace

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(const std::string& name, int in_ch, int out_ch, int k, int s, int p)
    : weight(name + ".weight", {out_ch, in_ch, k, k}),
      in_channels(in_ch),
      out_channels(out_ch),
      kernel(k),
      stride(s),
      padding(p) {}

void Conv2d::reset_parameters(Pcg32& rng) {
  const double std_dev = std::sqrt(2.0 / (static_cast<double>(out_channels) * kernel * kernel));
  for (auto& v : weight.value.data) v = static_cast<float>(rng.normal() * std_dev);
}

Tensor Conv2d::forward(const Tensor& x, const Pass& pass) {
  require_rank4(x, in_channels, "conv2d");
  ConvGeometry g{x.dim(0), in_channels, x.dim(2), x.dim(3), kernel, stride, padding, 0, 0};
  g.ho = (g.h + 2 * padding - kernel) / stride + 1;
  g.wo = (g.w + 2 * padding - kernel) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw Error(ErrorCode::ShapeMismatch, "conv2d input smaller than kernel");

  Tensor y({g.n, out_channels, g.ho, g.wo});
  const int chunk = chunk_size(g);
  std::vector<float> col(g.ckk() * g.hwo() * chunk);
  MatRM scratch;
  ConstMapRM w(weight.value.ptr(), out_channels, static_cast<Eigen::Index>(g.ckk()));
  for (int n0 = 0; n0 < g.n; n0 += chunk) {
    const int nb = std::min(chunk, g.n - n0);
    const auto cols = static_cast<Eigen::Index>(nb * g.hwo());
    im2col(x.ptr(), g, n0, nb, col.data());
    ConstMapRM cm(col.data(), static_cast<Eigen::Index>(g.ckk()), cols);
    if (nb == 1) {
      MapRM ym(y.ptr() + static_cast<std::size_t>(n0) * out_channels * g.hwo(), out_channels, cols);
      ym.noalias() = w * cm;
      continue;
    }
    scratch.noalias() = w * cm;
    for (int b = 0; b < nb; ++b) {
      for (int co = 0; co < out_channels; ++co) {
        const float* src = scratch.data() + static_cast<std::size_t>(co) * cols + b * g.hwo();
        float* dst = y.ptr() + (static_cast<std::size_t>(n0 + b) * out_channels + co) * g.hwo();
        std::copy(src, src + g.hwo(), dst);
      }
    }
  }
  if (pass.record) input_ = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& dy, bool need_input_grad) {
  if (input_.empty()) throw Error(ErrorCode::InvalidArgument, "conv2d backward without recorded forward");
  ConvGeometry g{input_.dim(0), in_channels, input_.dim(2), input_.dim(3), kernel, stride, padding, 0, 0};
  g.ho = (g.h + 2 * padding - kernel) / stride + 1;
  g.wo = (g.w + 2 * padding - kernel) / stride + 1;
  if (dy.shape != std::vector<int>{g.n, out_channels, g.ho, g.wo}) {
    throw Error(ErrorCode::ShapeMismatch, "conv2d backward got " + shape_string(dy.shape));
  }

  Tensor dx;
  if (need_input_grad) dx = Tensor(input_.shape);
  const int chunk = chunk_size(g);
  std::vector<float> col(g.ckk() * g.hwo() * chunk);
  MatRM dy_chunk;
  MatRM dcol;
  ConstMapRM w(weight.value.ptr(), out_channels, static_cast<Eigen::Index>(g.ckk()));
  MapRM dw(weight.grad.ptr(), out_channels, static_cast<Eigen::Index>(g.ckk()));
  for (int n0 = 0; n0 < g.n; n0 += chunk) {
    const int nb = std::min(chunk, g.n - n0);
    const auto cols = static_cast<Eigen::Index>(nb * g.hwo());
    im2col(input_.ptr(), g, n0, nb, col.data());
    ConstMapRM cm(col.data(), static_cast<Eigen::Index>(g.ckk()), cols);
    dy_chunk.resize(out_channels, cols);
    for (int b = 0; b < nb; ++b) {
      for (int co = 0; co < out_channels; ++co) {
        const float* src = dy.ptr() + (static_cast<std::size_t>(n0 + b) * out_channels + co) * g.hwo();
        std::copy(src, src + g.hwo(), dy_chunk.data() + static_cast<std::size_t>(co) * cols + b * g.hwo());
      }
    }
    dw.noalias() += dy_chunk * cm.transpose();
    if (need_input_grad) {
      dcol.noalias() = w.transpose() * dy_chunk;
      col2im(dcol.data(), g, n0, nb, dx.ptr());
    }
  }
  input_ = Tensor();
  return dx;
}

// ---------------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(const std::string& name, int channels)
    : weight(name + ".weight", {channels}),
      bias(name + ".bias", {channels}),
      running_mean(name + ".running_mean", {channels}, false),
      running_var(name + ".running_var", {channels}, false) {
  weight.value.fill(1.0f);
  running_var.value.fill(1.0f);
}

void BatchNorm2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

Tensor BatchNorm2d::forward(const Tensor& x, const Pass& pass) {
  const int channels = weight.value.dim(0);
  require_rank4(x, channels, "batchnorm");
  const int n = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const std::size_t m = plane * n;
  Tensor y(x.shape);
  if (pass.record) xhat_ = Tensor(x.shape);
  inv_std_.assign(channels, 0.0);
  used_batch_stats_ = pass.training;

  for (int c = 0; c < channels; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (pass.training) {
      for (int b = 0; b < n; ++b) {
        const float* p = x.ptr() + (static_cast<std::size_t>(b) * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) mean += p[i];
      }
      mean /= static_cast<double>(m);
      for (int b = 0; b < n; ++b) {
        const float* p = x.ptr() + (static_cast<std::size_t>(b) * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(m);
      const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      running_mean.value[c] = static_cast<float>((1.0 - momentum) * running_mean.value[c] + momentum * mean);
      running_var.value[c] = static_cast<float>((1.0 - momentum) * running_var.value[c] + momentum * unbiased);
    } else {
      mean = running_mean.value[c];
      var = running_var.value[c];
    }
    const double inv_std = 1.0 / std::sqrt(var + eps);
    inv_std_[c] = inv_std;
    const float gamma = weight.value[c];
    const float beta = bias.value[c];
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * plane;
      const float* p = x.ptr() + off;
      float* q = y.ptr() + off;
      for (std::size_t i = 0; i < plane; ++i) {
        const auto xh = static_cast<float>((p[i] - mean) * inv_std);
        if (pass.record) xhat_.ptr()[off + i] = xh;
        q[i] = gamma * xh + beta;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  if (xhat_.empty() || dy.shape != xhat_.shape) {
    throw Error(ErrorCode::ShapeMismatch, "batchnorm backward without matching forward");
  }
  const int channels = weight.value.dim(0);
  const int n = dy.dim(0);
  const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
  const double m = static_cast<double>(plane) * n;
  Tensor dx(dy.shape);
  for (int c = 0; c < channels; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy.ptr()[off + i];
        sum_dy_xhat += static_cast<double>(dy.ptr()[off + i]) * xhat_.ptr()[off + i];
      }
    }
    weight.grad[c] += static_cast<float>(sum_dy_xhat);
    bias.grad[c] += static_cast<float>(sum_dy);
    const double gamma = weight.value[c];
    const double inv_std = inv_std_[c];
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        double g;
        if (used_batch_stats_) {
          g = gamma * inv_std / m * (m * dy.ptr()[off + i] - sum_dy - xhat_.ptr()[off + i] * sum_dy_xhat);
        } else {
          g = gamma * inv_std * dy.ptr()[off + i];
        }
        dx.ptr()[off + i] = static_cast<float>(g);
      }
    }
  }
  xhat_ = Tensor();
  return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(const std::string& name, int in_features, int out_features)
    : weight(name + ".weight", {out_features, in_features}), bias(name + ".bias", {out_features}) {}

void Linear::reset_parameters(Pcg32& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(weight.value.dim(1)));
  for (auto& v : weight.value.data) v = static_cast<float>(rng.uniform(-bound, bound));
  for (auto& v : bias.value.data) v = static_cast<float>(rng.uniform(-bound, bound));
}

Tensor Linear::forward(const Tensor& x, const Pass& pass) {
  const int out = weight.value.dim(0);
  const int in = weight.value.dim(1);
  if (x.rank() != 2 || x.dim(1) != in) {
    throw Error(ErrorCode::ShapeMismatch, "linear expects (N, " + std::to_string(in) + "), got " + shape_string(x.shape));
  }
  const int n = x.dim(0);
  Tensor y({n, out});
  ConstMapRM xm(x.ptr(), n, in);
  ConstMapRM wm(weight.value.ptr(), out, in);
  MapRM ym(y.ptr(), n, out);
  ym.noalias() = xm * wm.transpose();
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < out; ++o) ym(i, o) += bias.value[o];
  if (pass.record) input_ = x;
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  const int out = weight.value.dim(0);
  const int in = weight.value.dim(1);
  if (input_.empty() || dy.rank() != 2 || dy.dim(1) != out || dy.dim(0) != input_.dim(0)) {
    throw Error(ErrorCode::ShapeMismatch, "linear backward got " + shape_string(dy.shape));
  }
  const int n = dy.dim(0);
  ConstMapRM dym(dy.ptr(), n, out);
  ConstMapRM xm(input_.ptr(), n, in);
  MapRM dwm(weight.grad.ptr(), out, in);
  dwm.noalias() += dym.transpose() * xm;
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < out; ++o) bias.grad[o] += dym(i, o);
  Tensor dx({n, in});
  MapRM dxm(dx.ptr(), n, in);
  ConstMapRM wm(weight.value.ptr(), out, in);
  dxm.noalias() = dym * wm;
  input_ = Tensor();
  return dx;
}

// ---------------------------------------------------------------- MaxPool2d

Tensor MaxPool2d::forward(const Tensor& x, const Pass& pass) {
  if (x.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "maxpool expects rank 4");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = (h + 2 - 3) / 2 + 1;
  const int wo = (w + 2 - 3) / 2 + 1;
  Tensor y({n, c, ho, wo});
  if (pass.record) {
    in_shape_ = x.shape;
    argmax_.assign(y.numel(), 0);
  }
  std::size_t out_i = 0;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * h * w;
      for (int oh = 0; oh < ho; ++oh) {
        for (int ow = 0; ow < wo; ++ow, ++out_i) {
          float best = -std::numeric_limits<float>::infinity();
          std::size_t best_i = base;
          for (int ki = 0; ki < 3; ++ki) {
            const int ih = oh * 2 - 1 + ki;
            if (ih < 0 || ih >= h) continue;
            for (int kj = 0; kj < 3; ++kj) {
              const int iw = ow * 2 - 1 + kj;
              if (iw < 0 || iw >= w) continue;
              const std::size_t idx = base + static_cast<std::size_t>(ih) * w + iw;
              if (x.ptr()[idx] > best) {
                best = x.ptr()[idx];
                best_i = idx;
              }
            }
          }
          y.ptr()[out_i] = best;
          if (pass.record) argmax_[out_i] = best_i;
        }
      }
    }
  }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& dy) {
  if (dy.numel() != argmax_.size()) throw Error(ErrorCode::ShapeMismatch, "maxpool backward size");
  Tensor dx(in_shape_);
  for (std::size_t i = 0; i < dy.numel(); ++i) dx.ptr()[argmax_[i]] += dy.ptr()[i];
  argmax_.clear();
  return dx;
}

// ---------------------------------------------------------------- ReLU / Dropout / pooling

Tensor ReLU::forward(Tensor x, const Pass& pass) {
  if (pass.record) mask_.assign(x.numel(), false);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (x.data[i] > 0.0f) {
      if (pass.record) mask_[i] = true;
    } else {
      x.data[i] = 0.0f;
    }
  }
  return x;
}

Tensor ReLU::backward(Tensor dy) const {
  if (dy.numel() != mask_.size()) throw Error(ErrorCode::ShapeMismatch, "relu backward size");
  for (std::size_t i = 0; i < dy.numel(); ++i)
    if (!mask_[i]) dy.data[i] = 0.0f;
  return dy;
}

Tensor Dropout::forward(Tensor x, const Pass& pass) {
  mask_.clear();
  if (!pass.training || p_ <= 0.0) return x;
  if (pass.rng == nullptr) throw Error(ErrorCode::InvalidArgument, "dropout in training needs an rng");
  const auto keep_scale = static_cast<float>(1.0 / (1.0 - p_));
  mask_.resize(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    mask_[i] = pass.rng->uniform() < p_ ? 0.0f : keep_scale;
    x.data[i] *= mask_[i];
  }
  return x;
}

Tensor Dropout::backward(Tensor dy) const {
  if (mask_.empty()) return dy;
  for (std::size_t i = 0; i < dy.numel(); ++i) dy.data[i] *= mask_[i];
  return dy;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "global_avg_pool expects rank 4");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor y({n, c});
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const float* p = x.ptr() + (static_cast<std::size_t>(b) * c + ch) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      y.ptr()[static_cast<std::size_t>(b) * c + ch] = static_cast<float>(s / static_cast<double>(plane));
    }
  }
  return y;
}

Tensor global_avg_pool_backward(const Tensor& dy, const std::vector<int>& in_shape) {
  Tensor dx(in_shape);
  const int n = in_shape[0], c = in_shape[1];
  const std::size_t plane = static_cast<std::size_t>(in_shape[2]) * in_shape[3];
  const float scale = 1.0f / static_cast<float>(plane);
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const float g = dy.ptr()[static_cast<std::size_t>(b) * c + ch] * scale;
      float* p = dx.ptr() + (static_cast<std::size_t>(b) * c + ch) * plane;
      std::fill(p, p + plane, g);
    }
  }
  return dx;
}

}  // namespace mammo
