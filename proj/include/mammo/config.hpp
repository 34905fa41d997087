#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mammo/augment.hpp"
#include "mammo/ingest.hpp"
#include "mammo/models.hpp"
#include "mammo/preprocess.hpp"
#include "mammo/training.hpp"

namespace mammo {

/// Minimal TOML reader: `[section]` headers, `key = value` with quoted
/// strings, integers, floats, booleans and flat arrays of those; `#`
/// comments. Keys are returned as "section.key" (top-level keys bare).
namespace toml {
using Scalar = std::variant<bool, std::int64_t, double, std::string>;
using Array = std::vector<Scalar>;
using Value = std::variant<Scalar, Array>;
using Table = std::map<std::string, Value>;

/// Throws Error{ConfigInvalid} naming the offending line.
Table parse(std::string_view text);
/// Canonical text of a value, stable across formatting differences
/// (e.g. 1e-4 and 0.0001 print the same).
std::string canonical(const Value& v);
}  // namespace toml

inline constexpr std::string_view kDataRootEnv = "MAMMO_DATA_ROOT";

struct RunConfig {
  std::filesystem::path source;  // the config file, if loaded from disk
  std::uint64_t seed = 0;

  // [paths]; relative paths resolve against the config file directory,
  // clinical / images against data_root.
  std::filesystem::path data_root;
  std::filesystem::path clinical;
  std::filesystem::path images;
  std::filesystem::path output;
  std::optional<std::filesystem::path> manifest;    // start from an existing ingest manifest
  std::optional<std::filesystem::path> pretrained;  // backbone weights archive

  IngestOptions ingest;
  PreprocessConfig preprocess;

  // [split]
  double test_fraction = 0.10;
  int folds = 5;

  // [train]
  std::vector<TaskKind> tasks{TaskKind::MLMC, TaskKind::BaselineLuminal, TaskKind::TransferLuminal};
  int batch_size = 16;
  int max_epochs = 100;
  int patience = 10;
  double weight_decay = 5e-3;
  double lr_luminal = 1e-5;
  double lr_abnormality = 1e-4;
  bool sampler_luminal = true;
  bool sampler_abnormality = false;
  bool augment_enabled = true;
  bool track_train_f1 = false;
  int jobs = 1;
  BackboneConfig backbone;

  AugmentConfig augment;

  // [evaluate]: AUC positive class name, empty = task default.
  std::string auc_positive;

  // [gradcam]
  int gradcam_images = 2;
  std::vector<std::string> gradcam_classes{"calcification", "mass", "malignant"};

  /// Every recognised key after defaults, canonical text; the basis of hash().
  std::map<std::string, std::string> canonical;

  /// SHA-256 over the sorted canonical key=value lines.
  std::string hash() const;
  /// Hash of the keys under the given sections ("" = top-level keys).
  std::string section_hash(std::initializer_list<std::string_view> sections) const;

  TrainConfig train_config(TaskKind task, int fold) const;
};

/// Parses and resolves a run config. `MAMMO_DATA_ROOT` overrides
/// paths.data_root. Unknown keys and bad values throw Error{ConfigInvalid}.
RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Annotated default config text, as written by `mammo init-config`.
std::string default_config_text();

}  // namespace mammo
