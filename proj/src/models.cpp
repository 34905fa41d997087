#include "mammo/models.hpp"

#include <cmath>

#include "mammo/checkpoint.hpp"
#include "mammo/error.hpp"

namespace mammo {

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::BaselineLuminal: return "BaselineLuminal";
    case TaskKind::MassVsCalc: return "MassVsCalc";
    case TaskKind::BenignVsMalignant: return "BenignVsMalignant";
    case TaskKind::MLMC: return "MLMC";
    case TaskKind::TransferLuminal: return "TransferLuminal";
  }
  return "?";
}

std::string_view cli_name(TaskKind k) {
  switch (k) {
    case TaskKind::BaselineLuminal: return "baseline";
    case TaskKind::MassVsCalc: return "mass-calc";
    case TaskKind::BenignVsMalignant: return "benign-malignant";
    case TaskKind::MLMC: return "mlmc";
    case TaskKind::TransferLuminal: return "transfer";
  }
  return "?";
}

std::optional<TaskKind> parse_task_kind(std::string_view s) {
  for (TaskKind k : {TaskKind::BaselineLuminal, TaskKind::MassVsCalc, TaskKind::BenignVsMalignant, TaskKind::MLMC,
                     TaskKind::TransferLuminal}) {
    if (s == cli_name(k) || s == to_string(k)) return k;
  }
  return std::nullopt;
}

TaskSpec TaskSpec::make(TaskKind kind) {
  switch (kind) {
    case TaskKind::BaselineLuminal:
    case TaskKind::TransferLuminal:
      return {kind, LossKind::CrossEntropy, {"luminal", "non-luminal"}};
    case TaskKind::BenignVsMalignant:
      return {kind, LossKind::CrossEntropy, {"benign", "malignant"}};
    case TaskKind::MassVsCalc:
      return {kind, LossKind::BinaryCrossEntropy, {"calcification", "mass"}};
    case TaskKind::MLMC:
      return {kind, LossKind::BinaryCrossEntropy, {"calcification", "mass", "malignant"}};
  }
  throw Error(ErrorCode::InvalidArgument, "unknown task kind");
}

HeadSpec HeadSpec::for_task(const TaskSpec& task) {
  return {task, task.out_units(), task.activation(), task.default_dropout()};
}

// ---------------------------------------------------------------- BasicBlock

BasicBlock::BasicBlock(const std::string& prefix, int in_channels, int out_channels, int stride)
    : conv1_(prefix + ".conv1", in_channels, out_channels, 3, stride, 1),
      bn1_(prefix + ".bn1", out_channels),
      conv2_(prefix + ".conv2", out_channels, out_channels, 3, 1, 1),
      bn2_(prefix + ".bn2", out_channels),
      has_downsample_(stride != 1 || in_channels != out_channels) {
  if (has_downsample_) {
    down_conv_ = Conv2d(prefix + ".downsample.0", in_channels, out_channels, 1, stride, 0);
    down_bn_ = BatchNorm2d(prefix + ".downsample.1", out_channels);
  }
}

Tensor BasicBlock::forward(const Tensor& x, const Pass& pass) {
  Tensor out = conv1_.forward(x, pass);
  out = relu1_.forward(bn1_.forward(out, pass), pass);
  out = bn2_.forward(conv2_.forward(out, pass), pass);
  if (has_downsample_) {
    const Tensor shortcut = down_bn_.forward(down_conv_.forward(x, pass), pass);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += shortcut.data[i];
  } else {
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += x.data[i];
  }
  return relu_out_.forward(std::move(out), pass);
}

Tensor BasicBlock::backward(const Tensor& dy) {
  const Tensor d = relu_out_.backward(dy);
  Tensor dx = conv2_.backward(bn2_.backward(d));
  dx = conv1_.backward(bn1_.backward(relu1_.backward(std::move(dx))));
  if (has_downsample_) {
    const Tensor ds = down_conv_.backward(down_bn_.backward(d));
    for (std::size_t i = 0; i < dx.numel(); ++i) dx.data[i] += ds.data[i];
  } else {
    for (std::size_t i = 0; i < dx.numel(); ++i) dx.data[i] += d.data[i];
  }
  return dx;
}

void BasicBlock::reset_parameters(Pcg32& rng) {
  conv1_.reset_parameters(rng);
  conv2_.reset_parameters(rng);
  if (has_downsample_) down_conv_.reset_parameters(rng);
}

void BasicBlock::collect(std::vector<Parameter*>& out) {
  conv1_.collect(out);
  bn1_.collect(out);
  conv2_.collect(out);
  bn2_.collect(out);
  if (has_downsample_) {
    down_conv_.collect(out);
    down_bn_.collect(out);
  }
}

// ---------------------------------------------------------------- Backbone

Backbone::Backbone(BackboneConfig config)
    : config_(std::move(config)),
      conv1_("conv1", config_.in_channels, config_.base_width, 7, 2, 3),
      bn1_("bn1", config_.base_width) {
  if (config_.in_channels < 1 || config_.base_width < 1 || config_.blocks.empty()) {
    throw Error(ErrorCode::InvalidArgument, "invalid backbone configuration");
  }
  int in = config_.base_width;
  for (std::size_t s = 0; s < config_.blocks.size(); ++s) {
    const int out = config_.stage_width(static_cast<int>(s));
    for (int b = 0; b < config_.blocks[s]; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      blocks_.emplace_back("layer" + std::to_string(s + 1) + "." + std::to_string(b), in, out, stride);
      in = out;
    }
  }
}

Tensor Backbone::forward(const Tensor& x, const Pass& pass) {
  Tensor out = relu_.forward(bn1_.forward(conv1_.forward(x, pass), pass), pass);
  out = pool_.forward(out, pass);
  for (auto& block : blocks_) out = block.forward(out, pass);
  return out;
}

void Backbone::backward(const Tensor& d_feature_map) {
  Tensor d = d_feature_map;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = it->backward(d);
  d = pool_.backward(d);
  d = bn1_.backward(relu_.backward(std::move(d)));
  conv1_.backward(d, /*need_input_grad=*/false);
}

void Backbone::reset_parameters(Pcg32& rng) {
  conv1_.reset_parameters(rng);
  for (auto& block : blocks_) block.reset_parameters(rng);
}

std::vector<Parameter*> Backbone::parameters() {
  std::vector<Parameter*> out;
  conv1_.collect(out);
  bn1_.collect(out);
  for (auto& block : blocks_) block.collect(out);
  return out;
}

std::vector<const Parameter*> Backbone::parameters() const {
  auto mutable_params = const_cast<Backbone*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

std::size_t Backbone::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters())
    if (p->trainable) n += p->value.numel();
  return n;
}

Backbone build_backbone(const BackboneConfig& config, const std::optional<std::filesystem::path>& weights,
                        std::uint64_t seed, BackboneLoadReport* report) {
  Backbone backbone(config);
  Pcg32 rng(seed, 0xbacb0e);
  backbone.reset_parameters(rng);
  BackboneLoadReport local;
  auto params = backbone.parameters();
  local.expected = params.size();
  if (weights) {
    const TensorArchive archive = load_tensor_archive(*weights);
    for (Parameter* p : params) {
      const auto it = archive.tensors.find(p->name);
      if (it == archive.tensors.end()) throw Error(ErrorCode::MissingTensor, p->name);
      if (it->second.shape != p->value.shape) {
        throw Error(ErrorCode::ShapeMismatch, p->name + ": expected " + shape_string(p->value.shape) + ", file has " +
                                                  shape_string(it->second.shape));
      }
      p->value = it->second;
      ++local.loaded;
    }
    local.ignored = archive.tensors.size() - local.loaded;
  }
  if (report) *report = local;
  return backbone;
}

// ---------------------------------------------------------------- Model

Model::Model(Backbone backbone, HeadSpec head, std::uint64_t seed)
    : backbone_(std::move(backbone)),
      head_(std::move(head)),
      dropout_(head_.dropout_p),
      fc_("fc", backbone_.config().feature_dim(), head_.out_units) {
  if (head_.out_units < 1) throw Error(ErrorCode::InvalidArgument, "head needs at least one unit");
  if (head_.dropout_p < 0.0 || head_.dropout_p >= 1.0) throw Error(ErrorCode::InvalidArgument, "dropout_p must be in [0,1)");
  Pcg32 rng(seed, 0x4ead);
  fc_.reset_parameters(rng);
}

void Model::replace_head(const TaskSpec& task, std::uint64_t seed) {
  head_ = HeadSpec::for_task(task);
  dropout_ = Dropout(head_.dropout_p);
  fc_ = Linear("fc", backbone_.config().feature_dim(), head_.out_units);
  Pcg32 rng(seed, 0x4ead);
  fc_.reset_parameters(rng);
}

Tensor Model::forward(const Tensor& batch, const Pass& pass) {
  const int in_channels = backbone_.config().in_channels;
  if (batch.rank() != 4 || (batch.dim(1) != 1 && batch.dim(1) != in_channels)) {
    throw Error(ErrorCode::ShapeMismatch, "model input must be (N, 1|" + std::to_string(in_channels) + ", H, W), got " +
                                              shape_string(batch.shape));
  }
  Tensor features;
  if (batch.dim(1) == in_channels) {
    features = backbone_.forward(batch, pass);
  } else {
    const int n = batch.dim(0);
    const std::size_t plane = static_cast<std::size_t>(batch.dim(2)) * batch.dim(3);
    Tensor expanded({n, in_channels, batch.dim(2), batch.dim(3)});
    for (int b = 0; b < n; ++b) {
      const float* src = batch.ptr() + static_cast<std::size_t>(b) * plane;
      for (int c = 0; c < in_channels; ++c)
        std::copy(src, src + plane, expanded.ptr() + (static_cast<std::size_t>(b) * in_channels + c) * plane);
    }
    features = backbone_.forward(expanded, pass);
  }
  feature_shape_ = features.shape;
  Tensor pooled = global_avg_pool(features);
  if (pass.record) feature_map_ = std::move(features);
  pooled = dropout_.forward(std::move(pooled), pass);
  return fc_.forward(pooled, pass);
}

void Model::backward(const Tensor& d_logits) {
  Tensor d = fc_.backward(d_logits);
  d = dropout_.backward(std::move(d));
  feature_map_grad_ = global_avg_pool_backward(d, feature_shape_);
  backbone_.backward(feature_map_grad_);
}

Tensor Model::logits_from_feature_map(const Tensor& feature_map) const {
  const Tensor pooled = global_avg_pool(feature_map);
  const int n = pooled.dim(0);
  const int in = fc_.weight.value.dim(1);
  const int out = fc_.weight.value.dim(0);
  if (pooled.dim(1) != in) throw Error(ErrorCode::ShapeMismatch, "feature map channels do not match head");
  Tensor logits({n, out});
  for (int b = 0; b < n; ++b) {
    for (int o = 0; o < out; ++o) {
      double s = fc_.bias.value[o];
      for (int i = 0; i < in; ++i)
        s += static_cast<double>(fc_.weight.value[static_cast<std::size_t>(o) * in + i]) *
             pooled[static_cast<std::size_t>(b) * in + i];
      logits[static_cast<std::size_t>(b) * out + o] = static_cast<float>(s);
    }
  }
  return logits;
}

std::vector<Parameter*> Model::parameters() {
  auto out = backbone_.parameters();
  fc_.collect(out);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  auto mutable_params = const_cast<Model*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

void Model::zero_grad() {
  for (Parameter* p : parameters())
    if (p->trainable) p->grad.zero();
}

Model attach_head(Backbone backbone, const TaskSpec& task, std::uint64_t seed) {
  return Model(std::move(backbone), HeadSpec::for_task(task), seed);
}

Tensor make_batch(std::span<const ImageTensor> images) {
  if (images.empty()) throw Error(ErrorCode::ShapeMismatch, "empty batch");
  const int rows = images.front().rows;
  const int cols = images.front().cols;
  Tensor batch({static_cast<int>(images.size()), 1, rows, cols});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].rows != rows || images[i].cols != cols) {
      throw Error(ErrorCode::ShapeMismatch, "batch images differ in size");
    }
    std::copy(images[i].pixels.begin(), images[i].pixels.end(),
              batch.ptr() + i * static_cast<std::size_t>(rows) * cols);
  }
  return batch;
}

Tensor forward(Model& model, std::span<const ImageTensor> images) {
  Tensor logits = model.forward(make_batch(images), Pass{});
  for (float v : logits.data)
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteLoss, "non-finite logits");
  return logits;
}

Tensor head_probabilities(const Tensor& logits, HeadActivation activation) {
  Tensor p(logits.shape);
  const int n = logits.dim(0);
  const int k = logits.dim(1);
  for (int b = 0; b < n; ++b) {
    const float* z = logits.ptr() + static_cast<std::size_t>(b) * k;
    float* q = p.ptr() + static_cast<std::size_t>(b) * k;
    if (activation == HeadActivation::Softmax2) {
      double mx = z[0];
      for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(z[j]));
      double s = 0.0;
      for (int j = 0; j < k; ++j) s += std::exp(z[j] - mx);
      for (int j = 0; j < k; ++j) q[j] = static_cast<float>(std::exp(z[j] - mx) / s);
    } else {
      for (int j = 0; j < k; ++j) q[j] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(z[j]))));
    }
  }
  return p;
}

}  // namespace mammo
