#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mammo/augment.hpp"
#include "mammo/checkpoint.hpp"
#include "mammo/ingest.hpp"
#include "mammo/models.hpp"
#include "mammo/splits.hpp"

namespace mammo {

struct TrainConfig {
  int batch_size = 16;
  double lr = 1e-5;
  double weight_decay = 5e-3;
  int patience = 10;
  int max_epochs = 100;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  bool augment_enabled = true;
  bool use_weighted_sampler = true;
  /// Also score the training set in eval mode after every epoch.
  bool track_train_metrics = false;
  // Adam constants.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// lr 1e-5 + weighted sampler for the luminal tasks, lr 1e-4 without the
  /// sampler for the abnormality tasks; everything else shared.
  static TrainConfig for_task(TaskKind kind);
  /// Throws Error{InvalidArgument}.
  void validate() const;
};

struct EarlyStopState {
  int patience = 10;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int epochs_since_best = 0;
  int epoch = -1;  // index of the last recorded epoch
  bool stopped = false;
  bool improved = false;  // last update set a new best
};

/// Records one epoch's validation loss. Strict improvement resets the
/// counter; the state stops once epochs_since_best exceeds patience.
/// Throws Error{NonFiniteLoss}.
EarlyStopState early_stopping_update(EarlyStopState state, double val_loss);

/// Sampling with replacement, weight of a sample proportional to
/// 1 / count(its class).
class WeightedSampler {
 public:
  explicit WeightedSampler(std::span<const int> class_labels);

  std::size_t draw(Pcg32& rng) const;
  /// One epoch: as many draws as there are samples.
  std::vector<std::size_t> epoch(Pcg32& rng) const;
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::vector<double> weights_;
  std::vector<double> cumulative_;
};

/// Throws Error{EmptyClass} when a class id in [0, max label] has no sample.
WeightedSampler make_weighted_sampler(std::span<const int> class_labels);

/// Plain Adam with L2 weight decay added to the gradient.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step();
  long steps() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<std::vector<float>> m_, v_;
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
};

/// One training example: 8-bit pixels (kept compact), class id for the
/// sampler / softmax target, and per-unit targets for sigmoid heads.
struct LabeledImage {
  std::string image_id;
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> pixels;
  int class_id = 0;
  std::vector<float> targets;

  ImageTensor image() const;
};

/// Whether a record carries the labels the task needs.
bool task_eligible(const MammogramRecord& r, TaskKind task);
/// Softmax tasks: the target class. MassVsCalc: finding kind (0 calc, 1 mass,
/// 2 both). MLMC: finding kind * 2 + malignant. Used for weighted sampling.
int task_class_id(const MammogramRecord& r, TaskKind task);
/// Per-unit targets in head order (one-hot for softmax tasks).
std::vector<float> task_targets(const MammogramRecord& r, TaskKind task);
SplitTask split_task_for(TaskKind task);

LabeledImage make_labeled_image(const MammogramRecord& r, TaskKind task);

struct TaskData {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> val;
};

/// Loads the fold's training / validation images for the task from the
/// manifest's processed image paths.
TaskData load_task_data(const DatasetManifest& manifest, const SplitAssignment& splits, TaskKind task, int fold);
std::vector<LabeledImage> load_images(const DatasetManifest& manifest, std::span<const std::string> ids,
                                      TaskKind task);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_macro_f1 = std::numeric_limits<double>::quiet_NaN();  // only when tracked
  double val_loss = 0.0;
  double val_macro_f1 = 0.0;
  double val_auc = 0.0;  // NaN when undefined (single class)
  bool best = false;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  std::filesystem::path best_checkpoint;
};

/// Histories are CSV:
///   epoch,train_loss,train_macro_f1,val_loss,val_macro_f1,val_auc,best
/// with undefined values left empty.
void write_history(const TrainHistory& history, const std::filesystem::path& path);
TrainHistory read_history(const std::filesystem::path& path);

struct TrainResult {
  ModelCheckpoint checkpoint;
  TrainHistory history;
};

struct TrainOptions {
  BackboneConfig backbone;
  std::optional<std::filesystem::path> pretrained;  // backbone weights archive
  std::optional<std::filesystem::path> out_dir;     // writes best.mck + history.csv
  std::string config_hash;
  bool verbose = false;
};

/// Adam training with per-epoch validation, early stopping and
/// min-validation-loss checkpointing. `init` is required for (and only
/// accepted by) TransferLuminal, and must come from the same fold.
/// max_epochs = 0 returns the initialization checkpoint and an empty history.
/// Throws Error{DivergedLoss} if the training loss becomes non-finite.
TrainResult train_task(const TaskSpec& task, int fold, const TaskData& data, const TrainConfig& config,
                       const ModelCheckpoint* init, const TrainOptions& options);

TrainResult train_task(const TaskSpec& task, int fold, const DatasetManifest& manifest, const SplitAssignment& splits,
                       const TrainConfig& config, const ModelCheckpoint* init, const TrainOptions& options);

/// Eval-mode predictions: per-sample probabilities (n, out_units).
Tensor predict_probabilities(Model& model, std::span<const LabeledImage> images, int batch_size = 16);

/// Mean loss of the model on the images in eval mode.
double evaluate_loss(Model& model, std::span<const LabeledImage> images, const TaskSpec& task, int batch_size = 16);

}  // namespace mammo
