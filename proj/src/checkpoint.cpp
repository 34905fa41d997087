#include "mammo/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "mammo/error.hpp"

namespace mammo {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'A', 'M', 'M', 'O', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error(ErrorCode::UnreadableFile, "truncated " + what);
  return v;
}

nlohmann::json meta_to_json(const CheckpointMeta& m) {
  nlohmann::json j;
  j["task"] = std::string(to_string(m.task));
  j["fold"] = m.fold;
  j["epoch"] = m.epoch;
  j["val_loss"] = m.val_loss;
  j["config_hash"] = m.config_hash;
  j["backbone"] = {{"in_channels", m.backbone.in_channels},
                   {"base_width", m.backbone.base_width},
                   {"blocks", m.backbone.blocks}};
  j["dropout_p"] = m.dropout_p;
  if (m.source_task) j["source_task"] = std::string(to_string(*m.source_task));
  if (m.source_fold) j["source_fold"] = *m.source_fold;
  return j;
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  const auto task = parse_task_kind(j.at("task").get<std::string>());
  if (!task) throw Error(ErrorCode::UnreadableFile, "unknown task in checkpoint metadata");
  m.task = *task;
  m.fold = j.at("fold").get<int>();
  m.epoch = j.at("epoch").get<int>();
  m.val_loss = j.at("val_loss").is_null() ? NAN : j.at("val_loss").get<double>();
  m.config_hash = j.value("config_hash", "");
  const auto& b = j.at("backbone");
  m.backbone.in_channels = b.at("in_channels").get<int>();
  m.backbone.base_width = b.at("base_width").get<int>();
  m.backbone.blocks = b.at("blocks").get<std::vector<int>>();
  m.dropout_p = j.value("dropout_p", 0.0);
  if (j.contains("source_task")) m.source_task = parse_task_kind(j["source_task"].get<std::string>());
  if (j.contains("source_fold")) m.source_fold = j["source_fold"].get<int>();
  return m;
}

}  // namespace

void save_tensor_archive(const TensorArchive& archive, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(archive.metadata_json.size()));
  os.write(archive.metadata_json.data(), static_cast<std::streamsize>(archive.metadata_json.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& [name, t] : archive.tensors) {
    put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(os, 0);
    put<std::uint8_t>(os, static_cast<std::uint8_t>(t.shape.size()));
    for (int d : t.shape) put<std::int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!os) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

TensorArchive load_tensor_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::UnreadableFile, "cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw Error(ErrorCode::UnreadableFile, path.string() + " is not a tensor archive");
  }
  if (get<std::uint32_t>(is, "version") != kVersion) throw Error(ErrorCode::UnreadableFile, "unsupported archive version");
  TensorArchive archive;
  const auto meta_len = get<std::uint32_t>(is, "metadata length");
  archive.metadata_json.resize(meta_len);
  if (!is.read(archive.metadata_json.data(), meta_len)) throw Error(ErrorCode::UnreadableFile, "truncated metadata");
  const auto count = get<std::uint32_t>(is, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint16_t>(is, "tensor name");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw Error(ErrorCode::UnreadableFile, "truncated tensor name");
    if (get<std::uint8_t>(is, name) != 0) throw Error(ErrorCode::UnreadableFile, name + ": unsupported dtype");
    const auto rank = get<std::uint8_t>(is, name);
    std::vector<int> shape;
    for (int d = 0; d < rank; ++d) {
      const auto dim = get<std::int64_t>(is, name);
      if (dim < 0 || dim > (1LL << 31)) throw Error(ErrorCode::ShapeMismatch, name + ": bad dimension");
      shape.push_back(static_cast<int>(dim));
    }
    Tensor t(shape);
    const auto bytes = static_cast<std::streamsize>(t.numel() * sizeof(float));
    if (!is.read(reinterpret_cast<char*>(t.ptr()), bytes)) {
      throw Error(ErrorCode::ShapeMismatch, name + ": payload shorter than " + shape_string(shape));
    }
    archive.tensors.emplace(std::move(name), std::move(t));
  }
  return archive;
}

ModelCheckpoint make_checkpoint(const Model& model, CheckpointMeta meta) {
  ModelCheckpoint ckpt;
  meta.backbone = model.backbone().config();
  meta.dropout_p = model.head().dropout_p;
  ckpt.meta = std::move(meta);
  for (const Parameter* p : model.parameters()) ckpt.tensors.emplace(p->name, p->value);
  return ckpt;
}

void load_state(Model& model, const std::map<std::string, Tensor>& tensors) {
  for (Parameter* p : model.parameters()) {
    const auto it = tensors.find(p->name);
    if (it == tensors.end()) throw Error(ErrorCode::MissingTensor, p->name);
    if (it->second.shape != p->value.shape) {
      throw Error(ErrorCode::ShapeMismatch, p->name + ": expected " + shape_string(p->value.shape) + ", got " +
                                                shape_string(it->second.shape));
    }
    p->value = it->second;
  }
}

Model restore_model(const ModelCheckpoint& checkpoint) {
  HeadSpec head = HeadSpec::for_task(TaskSpec::make(checkpoint.meta.task));
  head.dropout_p = checkpoint.meta.dropout_p;
  Model model(Backbone(checkpoint.meta.backbone), head, 0);
  load_state(model, checkpoint.tensors);
  return model;
}

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& path) {
  if (!std::isfinite(checkpoint.meta.val_loss)) {
    throw Error(ErrorCode::NonFiniteLoss, "checkpoint validation loss must be finite");
  }
  TensorArchive archive;
  archive.metadata_json = meta_to_json(checkpoint.meta).dump();
  archive.tensors = checkpoint.tensors;
  save_tensor_archive(archive, path);
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  TensorArchive archive = load_tensor_archive(path);
  ModelCheckpoint ckpt;
  try {
    ckpt.meta = meta_from_json(nlohmann::json::parse(archive.metadata_json));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::UnreadableFile, path.string() + ": bad checkpoint metadata: " + e.what());
  }
  ckpt.tensors = std::move(archive.tensors);
  return ckpt;
}

Model transfer_weights(const ModelCheckpoint& source, TaskKind destination, std::uint64_t head_seed) {
  if (source.meta.task != TaskKind::MLMC) {
    throw Error(ErrorCode::TaskMismatch, "transfer source must be an MLMC checkpoint, got " +
                                             std::string(to_string(source.meta.task)));
  }
  if (destination != TaskKind::TransferLuminal) {
    throw Error(ErrorCode::TaskMismatch, "transfer destination must be TransferLuminal");
  }
  Backbone backbone(source.meta.backbone);
  for (Parameter* p : backbone.parameters()) {
    const auto it = source.tensors.find(p->name);
    if (it == source.tensors.end()) throw Error(ErrorCode::MissingTensor, p->name);
    if (it->second.shape != p->value.shape) throw Error(ErrorCode::ShapeMismatch, p->name);
    p->value = it->second;
  }
  return attach_head(std::move(backbone), TaskSpec::make(destination), head_seed);
}

}  // namespace mammo
