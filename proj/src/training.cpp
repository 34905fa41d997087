#include "mammo/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>

#include "mammo/csv.hpp"
#include "mammo/error.hpp"
#include "mammo/image_io.hpp"
#include "mammo/losses.hpp"
#include "mammo/metrics.hpp"

namespace mammo {

TrainConfig TrainConfig::for_task(TaskKind kind) {
  TrainConfig c;
  const bool luminal = TaskSpec::make(kind).is_luminal();
  c.lr = luminal ? 1e-5 : 1e-4;
  c.use_weighted_sampler = luminal;
  return c;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw Error(ErrorCode::InvalidArgument, "lr must be > 0");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::InvalidArgument, "weight_decay must be >= 0");
  if (patience < 1) throw Error(ErrorCode::InvalidArgument, "patience must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  if (max_epochs < 0) throw Error(ErrorCode::InvalidArgument, "max_epochs must be >= 0");
  augment.validate();
}

// ---------------------------------------------------------------- early stopping

EarlyStopState early_stopping_update(EarlyStopState state, double val_loss) {
  if (!std::isfinite(val_loss)) throw Error(ErrorCode::NonFiniteLoss, "validation loss is not finite");
  ++state.epoch;
  state.improved = val_loss < state.best_val_loss;
  if (state.improved) {
    state.best_val_loss = val_loss;
    state.best_epoch = state.epoch;
    state.epochs_since_best = 0;
  } else {
    ++state.epochs_since_best;
  }
  if (state.epochs_since_best > state.patience) state.stopped = true;
  return state;
}

// ---------------------------------------------------------------- sampler

WeightedSampler::WeightedSampler(std::span<const int> class_labels) {
  if (class_labels.empty()) throw Error(ErrorCode::EmptyClass, "no samples");
  const int max_class = *std::max_element(class_labels.begin(), class_labels.end());
  std::vector<std::size_t> counts(static_cast<std::size_t>(max_class) + 1, 0);
  for (int c : class_labels) {
    if (c < 0) throw Error(ErrorCode::InvalidArgument, "negative class id");
    ++counts[static_cast<std::size_t>(c)];
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw Error(ErrorCode::EmptyClass, "class " + std::to_string(c) + " has no samples");
  }
  weights_.reserve(class_labels.size());
  cumulative_.reserve(class_labels.size());
  double total = 0.0;
  for (int c : class_labels) {
    const double w = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(c)]);
    weights_.push_back(w);
    total += w;
    cumulative_.push_back(total);
  }
}

std::size_t WeightedSampler::draw(Pcg32& rng) const {
  const double u = rng.uniform() * cumulative_.back();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
}

std::vector<std::size_t> WeightedSampler::epoch(Pcg32& rng) const {
  std::vector<std::size_t> out(weights_.size());
  for (auto& i : out) i = draw(rng);
  return out;
}

WeightedSampler make_weighted_sampler(std::span<const int> class_labels) { return WeightedSampler(class_labels); }

// ---------------------------------------------------------------- Adam

Adam::Adam(std::vector<Parameter*> params, double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    params_.push_back(p);
    m_.emplace_back(p->value.numel(), 0.0f);
    v_.emplace_back(p->value.numel(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  const double step_size = lr_ / bc1;
  const double sqrt_bc2 = std::sqrt(bc2);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    float* w = params_[k]->value.ptr();
    const float* g = params_[k]->grad.ptr();
    float* m = m_[k].data();
    float* v = v_[k].data();
    const std::size_t n = params_[k]->value.numel();
    for (std::size_t i = 0; i < n; ++i) {
      const double grad = static_cast<double>(g[i]) + wd_ * w[i];
      m[i] = static_cast<float>(b1_ * m[i] + (1.0 - b1_) * grad);
      v[i] = static_cast<float>(b2_ * v[i] + (1.0 - b2_) * grad * grad);
      const double denom = std::sqrt(static_cast<double>(v[i])) / sqrt_bc2 + eps_;
      w[i] = static_cast<float>(w[i] - step_size * m[i] / denom);
    }
  }
}

// ---------------------------------------------------------------- task labels

namespace {

int finding_kind(const MammogramRecord& r) {
  if (r.has_calcification && r.has_mass) return 2;
  return r.has_mass ? 1 : 0;
}

}  // namespace

bool task_eligible(const MammogramRecord& r, TaskKind task) {
  switch (task) {
    case TaskKind::BaselineLuminal:
    case TaskKind::TransferLuminal: return r.subtype_labeled();
    case TaskKind::BenignVsMalignant: return true;
    case TaskKind::MassVsCalc:
    case TaskKind::MLMC: return r.has_calcification || r.has_mass;
  }
  return false;
}

int task_class_id(const MammogramRecord& r, TaskKind task) {
  switch (task) {
    case TaskKind::BaselineLuminal:
    case TaskKind::TransferLuminal: return is_luminal(r.subtype) ? 0 : 1;
    case TaskKind::BenignVsMalignant: return r.pathology == Pathology::Malignant ? 1 : 0;
    case TaskKind::MassVsCalc: return finding_kind(r);
    case TaskKind::MLMC: return finding_kind(r) * 2 + (r.pathology == Pathology::Malignant ? 1 : 0);
  }
  return 0;
}

std::vector<float> task_targets(const MammogramRecord& r, TaskKind task) {
  const float malignant = r.pathology == Pathology::Malignant ? 1.0f : 0.0f;
  switch (task) {
    case TaskKind::BaselineLuminal:
    case TaskKind::TransferLuminal: {
      const float lum = is_luminal(r.subtype) ? 1.0f : 0.0f;
      return {lum, 1.0f - lum};
    }
    case TaskKind::BenignVsMalignant: return {1.0f - malignant, malignant};
    case TaskKind::MassVsCalc: return {r.has_calcification ? 1.0f : 0.0f, r.has_mass ? 1.0f : 0.0f};
    case TaskKind::MLMC: return {r.has_calcification ? 1.0f : 0.0f, r.has_mass ? 1.0f : 0.0f, malignant};
  }
  return {};
}

SplitTask split_task_for(TaskKind task) {
  return TaskSpec::make(task).is_luminal() ? SplitTask::Subtype : SplitTask::Abnormality;
}

ImageTensor LabeledImage::image() const {
  ImageTensor img(rows, cols);
  for (std::size_t i = 0; i < pixels.size(); ++i) img.pixels[i] = static_cast<float>(pixels[i]) / 255.0f;
  return img;
}

LabeledImage make_labeled_image(const MammogramRecord& r, TaskKind task) {
  LabeledImage li;
  li.image_id = r.image_id;
  li.class_id = task_class_id(r, task);
  li.targets = task_targets(r, task);
  li.pixels = load_gray_u8(r.image_path, li.rows, li.cols);
  return li;
}

std::vector<LabeledImage> load_images(const DatasetManifest& manifest, std::span<const std::string> ids,
                                      TaskKind task) {
  std::map<std::string, const MammogramRecord*> by_id;
  for (const auto& r : manifest.records) by_id.emplace(r.image_id, &r);
  std::vector<LabeledImage> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(ErrorCode::InvalidArgument, "split references unknown image " + id);
    if (!task_eligible(*it->second, task)) continue;
    out.push_back(make_labeled_image(*it->second, task));
  }
  return out;
}

TaskData load_task_data(const DatasetManifest& manifest, const SplitAssignment& splits, TaskKind task, int fold) {
  if (splits.task != split_task_for(task)) {
    throw Error(ErrorCode::TaskMismatch, "split file was made for " + std::string(to_string(splits.task)));
  }
  if (fold < 0 || fold >= splits.folds) throw Error(ErrorCode::InvalidArgument, "fold out of range");
  TaskData data;
  const auto train_ids = splits.training_ids(fold);
  const auto val_ids = splits.validation_ids(fold);
  data.train = load_images(manifest, train_ids, task);
  data.val = load_images(manifest, val_ids, task);
  return data;
}

// ---------------------------------------------------------------- history

void write_history(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  os << "epoch,train_loss,train_macro_f1,val_loss,val_macro_f1,val_auc,best\n";
  os << std::setprecision(10);
  auto opt = [&](double v) {
    if (std::isfinite(v)) os << v;
  };
  for (const auto& e : history.epochs) {
    os << e.epoch << ',' << e.train_loss << ',';
    opt(e.train_macro_f1);
    os << ',' << e.val_loss << ',' << e.val_macro_f1 << ',';
    opt(e.val_auc);
    os << ',' << (e.best ? 1 : 0) << '\n';
  }
}

TrainHistory read_history(const std::filesystem::path& path) {
  const auto rows = csv::read_file(path);
  if (rows.empty() || rows[0].size() != 7 || rows[0][0] != "epoch") {
    throw Error(ErrorCode::SchemaMismatch, path.string() + ": not a training history");
  }
  auto num = [](const std::string& s) {
    return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
  };
  TrainHistory h;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 7) throw Error(ErrorCode::SchemaMismatch, path.string() + ": short row");
    EpochRecord e;
    e.epoch = std::stoi(r[0]);
    e.train_loss = num(r[1]);
    e.train_macro_f1 = num(r[2]);
    e.val_loss = num(r[3]);
    e.val_macro_f1 = num(r[4]);
    e.val_auc = num(r[5]);
    e.best = r[6] == "1";
    if (e.best) h.best_epoch = e.epoch;
    h.epochs.push_back(e);
  }
  return h;
}

// ---------------------------------------------------------------- evaluation helpers

namespace {

Tensor eval_logits(Model& model, std::span<const LabeledImage> images, int batch_size) {
  const int k = model.head().out_units;
  Tensor all({static_cast<int>(images.size()), k});
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<ImageTensor> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(images[i].image());
    const Tensor logits = model.forward(make_batch(batch), Pass{});
    std::copy(logits.data.begin(), logits.data.end(), all.ptr() + start * k);
  }
  return all;
}

double batch_loss(const TaskSpec& task, const Tensor& logits, std::span<const LabeledImage> images,
                  LossAndGrad* with_grad) {
  if (task.loss == LossKind::CrossEntropy) {
    std::vector<int> labels;
    for (const auto& im : images) labels.push_back(im.class_id);
    if (with_grad) {
      *with_grad = cross_entropy_with_grad(logits, labels);
      return with_grad->loss;
    }
    return cross_entropy(logits, labels);
  }
  Tensor targets(logits.shape);
  std::size_t i = 0;
  for (const auto& im : images)
    for (float t : im.targets) targets[i++] = t;
  if (with_grad) {
    *with_grad = binary_cross_entropy_with_grad(logits, targets);
    return with_grad->loss;
  }
  return binary_cross_entropy(logits, targets);
}

std::vector<float> flat_targets(std::span<const LabeledImage> images) {
  std::vector<float> t;
  for (const auto& im : images) t.insert(t.end(), im.targets.begin(), im.targets.end());
  return t;
}

}  // namespace

Tensor predict_probabilities(Model& model, std::span<const LabeledImage> images, int batch_size) {
  return head_probabilities(eval_logits(model, images, batch_size), model.head().activation);
}

double evaluate_loss(Model& model, std::span<const LabeledImage> images, const TaskSpec& task, int batch_size) {
  return batch_loss(task, eval_logits(model, images, batch_size), images, nullptr);
}

// ---------------------------------------------------------------- train_task

TrainResult train_task(const TaskSpec& task, int fold, const TaskData& data, const TrainConfig& config,
                       const ModelCheckpoint* init, const TrainOptions& options) {
  config.validate();
  const bool transfer = task.kind == TaskKind::TransferLuminal;
  if (transfer && init == nullptr) throw Error(ErrorCode::InvalidArgument, "TransferLuminal requires an init checkpoint");
  if (!transfer && init != nullptr) throw Error(ErrorCode::InvalidArgument, "init checkpoint is only used by TransferLuminal");
  if (transfer && init->meta.fold != fold) {
    throw Error(ErrorCode::InvalidArgument, "transfer fold " + std::to_string(fold) + " must start from the same fold's "
                                            "MLMC checkpoint, got fold " + std::to_string(init->meta.fold));
  }
  if (data.train.empty()) throw Error(ErrorCode::InvalidArgument, "empty training set");
  if (data.val.empty()) throw Error(ErrorCode::InvalidArgument, "empty validation set");

  const std::uint64_t seed = config.seed;
  Model model = transfer ? transfer_weights(*init, task.kind, derive_seed(seed, "head"))
                         : attach_head(build_backbone(options.backbone, options.pretrained, derive_seed(seed, "backbone")),
                                       task, derive_seed(seed, "head"));

  CheckpointMeta meta;
  meta.task = task.kind;
  meta.fold = fold;
  meta.config_hash = options.config_hash;
  if (transfer) {
    meta.source_task = init->meta.task;
    meta.source_fold = init->meta.fold;
  }

  TrainResult result;
  auto save_outputs = [&] {
    if (!options.out_dir) return;
    std::filesystem::create_directories(*options.out_dir);
    result.history.best_checkpoint = *options.out_dir / "best.mck";
    save_checkpoint(result.checkpoint, result.history.best_checkpoint);
    write_history(result.history, *options.out_dir / "history.csv");
  };

  if (config.max_epochs == 0) {
    meta.epoch = -1;
    meta.val_loss = evaluate_loss(model, data.val, task, config.batch_size);
    result.checkpoint = make_checkpoint(model, meta);
    save_outputs();
    return result;
  }

  Adam optimizer(model.parameters(), config.lr, config.weight_decay, config.beta1, config.beta2, config.eps);
  Pcg32 order_rng(derive_seed(seed, "order"));
  Pcg32 augment_rng = worker_rng(derive_seed(seed, "augment"), 0);
  Pcg32 dropout_rng(derive_seed(seed, "dropout"));
  const TrainTransform transform(config.augment);

  std::optional<WeightedSampler> sampler;
  if (config.use_weighted_sampler) {
    std::vector<int> labels;
    for (const auto& im : data.train) labels.push_back(im.class_id);
    sampler.emplace(labels);
  }

  EarlyStopState stop;
  stop.patience = config.patience;
  const auto val_targets = flat_targets(data.val);

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::vector<std::size_t> order;
    if (sampler) {
      order = sampler->epoch(order_rng);
    } else {
      order.resize(data.train.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      order_rng.shuffle(std::span<std::size_t>(order));
    }

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<ImageTensor> images;
      std::vector<LabeledImage> labels;
      for (std::size_t i = start; i < end; ++i) {
        const LabeledImage& li = data.train[order[i]];
        ImageTensor img = li.image();
        if (config.augment_enabled) img = transform(img, augment_rng);
        images.push_back(std::move(img));
        labels.push_back(LabeledImage{li.image_id, 0, 0, {}, li.class_id, li.targets});
      }
      model.zero_grad();
      const Tensor logits = model.forward(make_batch(images), Pass{true, true, &dropout_rng});
      LossAndGrad lg;
      batch_loss(task, logits, labels, &lg);
      if (!std::isfinite(lg.loss)) {
        throw Error(ErrorCode::DivergedLoss, "training loss became non-finite at epoch " + std::to_string(epoch));
      }
      model.backward(lg.grad);
      optimizer.step();
      loss_sum += lg.loss * static_cast<double>(end - start);
    }

    const Tensor val_logits = eval_logits(model, data.val, config.batch_size);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_loss = batch_loss(task, val_logits, data.val, nullptr);
    const FoldMetrics vm =
        score_predictions(task, head_probabilities(val_logits, model.head().activation), val_targets, std::nullopt, fold);
    rec.val_macro_f1 = vm.macro_f1;
    rec.val_auc = vm.auc;
    if (config.track_train_metrics) {
      const Tensor train_probs = predict_probabilities(model, data.train, config.batch_size);
      rec.train_macro_f1 =
          score_predictions(task, train_probs, flat_targets(data.train), std::nullopt, fold).macro_f1;
    }

    stop = early_stopping_update(stop, rec.val_loss);
    rec.best = stop.improved;
    if (stop.improved) {
      meta.epoch = epoch;
      meta.val_loss = rec.val_loss;
      result.checkpoint = make_checkpoint(model, meta);
    }
    result.history.epochs.push_back(rec);
    if (options.verbose) {
      std::clog << "[" << cli_name(task.kind) << " fold " << fold << "] epoch " << epoch << " train_loss "
                << rec.train_loss << " val_loss " << rec.val_loss << " val_f1 " << rec.val_macro_f1
                << (rec.best ? " *" : "") << '\n';
    }
    if (stop.stopped) break;
  }
  result.history.best_epoch = stop.best_epoch;
  save_outputs();
  return result;
}

TrainResult train_task(const TaskSpec& task, int fold, const DatasetManifest& manifest, const SplitAssignment& splits,
                       const TrainConfig& config, const ModelCheckpoint* init, const TrainOptions& options) {
  const TaskData data = load_task_data(manifest, splits, task.kind, fold);
  return train_task(task, fold, data, config, init, options);
}

}  // namespace mammo
