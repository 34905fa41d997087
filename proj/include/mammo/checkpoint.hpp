#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "mammo/models.hpp"
#include "mammo/tensor.hpp"

namespace mammo {

struct CheckpointMeta {
  TaskKind task = TaskKind::BaselineLuminal;
  int fold = -1;
  int epoch = -1;  // -1: initialization, no optimizer step taken
  double val_loss = 0.0;
  std::string config_hash;
  BackboneConfig backbone;
  double dropout_p = 0.0;
  std::optional<TaskKind> source_task;  // set for transfer models
  std::optional<int> source_fold;
};

/// Named tensors (parameters and BN buffers) plus metadata; the unit of
/// transfer learning.
struct ModelCheckpoint {
  CheckpointMeta meta;
  std::map<std::string, Tensor> tensors;
};

/// On-disk archive, little endian:
///   char[8]  "MAMMOCKP"
///   u32      format version (1)
///   u32      metadata length, then that many bytes of UTF-8 JSON
///   u32      tensor count, then per tensor (sorted by name):
///              u16 name length, name bytes, u8 dtype (0 = f32), u8 rank,
///              rank x i64 dims, prod(dims) x f32
/// A pretrained-weights file is the same archive; its metadata may be `{}`.
struct TensorArchive {
  std::string metadata_json = "{}";
  std::map<std::string, Tensor> tensors;
};

void save_tensor_archive(const TensorArchive& archive, const std::filesystem::path& path);
/// Throws Error{UnreadableFile} on a bad magic/version and Error{ShapeMismatch}
/// naming the tensor whose payload is truncated.
TensorArchive load_tensor_archive(const std::filesystem::path& path);

ModelCheckpoint make_checkpoint(const Model& model, CheckpointMeta meta);
/// Rebuilds the model the checkpoint describes and loads every tensor.
Model restore_model(const ModelCheckpoint& checkpoint);
void load_state(Model& model, const std::map<std::string, Tensor>& tensors);

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Backbone copied bit-exactly from an MLMC checkpoint plus a fresh 512->2
/// head for TransferLuminal. Throws Error{TaskMismatch} for any other source
/// task or destination.
Model transfer_weights(const ModelCheckpoint& source, TaskKind destination, std::uint64_t head_seed);

}  // namespace mammo
