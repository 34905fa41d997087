#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mammo/image.hpp"
#include "mammo/layers.hpp"

namespace mammo {

enum class TaskKind { BaselineLuminal, MassVsCalc, BenignVsMalignant, MLMC, TransferLuminal };
enum class LossKind { CrossEntropy, BinaryCrossEntropy };
enum class HeadActivation { Softmax2, SigmoidPerUnit };

std::string_view to_string(TaskKind k);
/// CLI spellings: baseline, transfer, mlmc, mass-calc, benign-malignant.
std::optional<TaskKind> parse_task_kind(std::string_view s);
std::string_view cli_name(TaskKind k);

struct TaskSpec {
  TaskKind kind = TaskKind::BaselineLuminal;
  LossKind loss = LossKind::CrossEntropy;
  std::vector<std::string> class_names;  // one per output unit

  /// Canonical spec for each task:
  ///   BaselineLuminal / TransferLuminal: softmax {luminal, non-luminal}, CE
  ///   BenignVsMalignant: softmax {benign, malignant}, CE
  ///   MassVsCalc: sigmoid {calcification, mass}, BCE
  ///   MLMC: sigmoid {calcification, mass, malignant}, BCE
  static TaskSpec make(TaskKind kind);

  int out_units() const { return static_cast<int>(class_names.size()); }
  HeadActivation activation() const {
    return loss == LossKind::CrossEntropy ? HeadActivation::Softmax2 : HeadActivation::SigmoidPerUnit;
  }
  bool is_luminal() const { return kind == TaskKind::BaselineLuminal || kind == TaskKind::TransferLuminal; }
  /// 0.3 for the luminal tasks, 0 otherwise.
  double default_dropout() const { return is_luminal() ? 0.3 : 0.0; }
};

struct HeadSpec {
  TaskSpec task;
  int out_units = 2;
  HeadActivation activation = HeadActivation::Softmax2;
  double dropout_p = 0.0;

  static HeadSpec for_task(const TaskSpec& task);
};

/// Residual network with basic blocks. Defaults give the 18-layer network:
/// 7x7/2 stem, 3x3/2 max pool, four stages of two blocks at widths
/// 64/128/256/512, global average pooling.
struct BackboneConfig {
  int in_channels = 3;
  int base_width = 64;
  std::vector<int> blocks{2, 2, 2, 2};

  int feature_dim() const { return base_width << (static_cast<int>(blocks.size()) - 1); }
  int stage_width(int stage) const { return base_width << stage; }
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

class BasicBlock {
 public:
  BasicBlock(const std::string& prefix, int in_channels, int out_channels, int stride);

  Tensor forward(const Tensor& x, const Pass& pass);
  Tensor backward(const Tensor& dy);
  void reset_parameters(Pcg32& rng);
  void collect(std::vector<Parameter*>& out);

 private:
  Conv2d conv1_;
  BatchNorm2d bn1_;
  ReLU relu1_;
  Conv2d conv2_;
  BatchNorm2d bn2_;
  bool has_downsample_;
  Conv2d down_conv_;
  BatchNorm2d down_bn_;
  ReLU relu_out_;
};

class Backbone {
 public:
  explicit Backbone(BackboneConfig config = {});

  /// (N, in_channels, H, W) -> final-stage feature map (N, feature_dim, h, w).
  Tensor forward(const Tensor& x, const Pass& pass);
  void backward(const Tensor& d_feature_map);

  void reset_parameters(Pcg32& rng);
  /// Torchvision naming: conv1.weight, bn1.*, layer{s}.{b}.conv1.weight, ...
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  /// Learnable scalars (excludes BN running statistics).
  std::size_t parameter_count() const;
  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  Conv2d conv1_;
  BatchNorm2d bn1_;
  ReLU relu_;
  MaxPool2d pool_;
  std::vector<BasicBlock> blocks_;
};

struct BackboneLoadReport {
  std::size_t loaded = 0;
  std::size_t expected = 0;
  std::size_t ignored = 0;  // tensors in the file that are not backbone tensors (e.g. fc.*)
};

/// Randomly initialized backbone (seeded), optionally overwritten from a
/// weights file in checkpoint format. Every backbone tensor must be present
/// with the exact shape: Error{MissingTensor} / Error{ShapeMismatch} name the
/// offending tensor.
Backbone build_backbone(const BackboneConfig& config, const std::optional<std::filesystem::path>& weights,
                        std::uint64_t seed, BackboneLoadReport* report = nullptr);

/// Backbone + dropout + fully connected head.
class Model {
 public:
  Model(Backbone backbone, HeadSpec head, std::uint64_t seed);

  /// Batch (N, 1, H, W) of grayscale images (replicated to the backbone's
  /// channel count) or (N, in_channels, H, W). Returns logits (N, out_units).
  Tensor forward(const Tensor& batch, const Pass& pass);
  /// Backpropagates d(loss)/d(logits) into every parameter gradient. Also
  /// records the gradient at the final feature map.
  void backward(const Tensor& d_logits);

  /// Head applied to a given final-stage map (eval semantics, no caching).
  Tensor logits_from_feature_map(const Tensor& feature_map) const;

  /// Swap the head for a freshly initialized one for `task`; the backbone is
  /// untouched.
  void replace_head(const TaskSpec& task, std::uint64_t seed);

  const Tensor& last_feature_map() const { return feature_map_; }
  const Tensor& last_feature_map_grad() const { return feature_map_grad_; }

  Backbone& backbone() { return backbone_; }
  const Backbone& backbone() const { return backbone_; }
  const HeadSpec& head() const { return head_; }
  Linear& fc() { return fc_; }
  const Linear& fc() const { return fc_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void zero_grad();

 private:
  Backbone backbone_;
  HeadSpec head_;
  Dropout dropout_;
  Linear fc_;
  Tensor feature_map_;
  Tensor feature_map_grad_;
  std::vector<int> feature_shape_;
};

/// Replaces whatever head the backbone carried with the task's head
/// (512 -> out_units), initialized fan-in uniform from `seed`.
Model attach_head(Backbone backbone, const TaskSpec& task, std::uint64_t seed);

/// Stack ImageTensors into (N, 1, H, W). Throws Error{ShapeMismatch} if the
/// images disagree in size.
Tensor make_batch(std::span<const ImageTensor> images);

/// Logits for a batch of images in eval mode.
Tensor forward(Model& model, std::span<const ImageTensor> images);

/// Softmax over rows (Softmax2 heads) or elementwise sigmoid.
Tensor head_probabilities(const Tensor& logits, HeadActivation activation);

}  // namespace mammo
