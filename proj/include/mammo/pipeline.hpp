#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mammo/config.hpp"
#include "mammo/splits.hpp"
#include "mammo/training.hpp"

namespace mammo {

enum class Stage { Ingest, Preprocess, Split, Train, Evaluate, Gradcam, Report };
inline constexpr std::array<Stage, 7> kAllStages{Stage::Ingest, Stage::Preprocess, Stage::Split,  Stage::Train,
                                                  Stage::Evaluate, Stage::Gradcam, Stage::Report};

std::string_view to_string(Stage s);
std::optional<Stage> parse_stage(std::string_view s);

/// Where every artifact of a run lives, under RunConfig::output.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path ingest_dir() const { return root / "ingest"; }
  std::filesystem::path ingest_manifest() const { return ingest_dir() / "manifest.csv"; }
  std::filesystem::path preprocess_dir() const { return root / "preprocess"; }
  std::filesystem::path processed_manifest() const { return preprocess_dir() / "manifest.csv"; }
  std::filesystem::path split_file(SplitTask t) const;
  std::filesystem::path task_dir(TaskKind t) const;
  std::filesystem::path fold_dir(TaskKind t, int fold) const;
  std::filesystem::path eval_report(TaskKind t) const;
  std::filesystem::path gradcam_dir() const { return root / "gradcam"; }
  std::filesystem::path comparison_report() const { return root / "report" / "comparison.json"; }
  std::filesystem::path provenance() const { return root / "provenance.json"; }
  std::filesystem::path stamps_dir() const { return root / ".stamps"; }
};

RunLayout layout_for(const RunConfig& config);

struct PipelineOptions {
  std::vector<Stage> stages;  // empty: all stages
  bool force = false;         // ignore stamps
  int jobs = 1;               // > 1: folds of one task train in parallel subprocesses
  std::filesystem::path self_exe;  // CLI binary used for fold subprocesses
  bool verbose = true;
};

struct StageRecord {
  std::string name;
  std::string status;  // ran | skipped | failed
  double seconds = 0.0;
  std::string detail;
};

struct PipelineResult {
  int exit_code = 0;  // 0 ok, 1 stage failure, 2 config error
  std::vector<StageRecord> records;
  std::string error;
};

/// Checks that every input the requested stages need exists or will be
/// produced by an earlier requested stage. Throws Error{ConfigInvalid}.
void validate_run_config(const RunConfig& config, std::span<const Stage> stages);

/// Runs the requested stages in dependency order. Each stage (each fold, for
/// training) is skipped when its stamp matches the current inputs and its
/// outputs are intact. Writes provenance.json. Never throws for stage or
/// config errors; they are reported through the result.
PipelineResult run_pipeline(const RunConfig& config, const PipelineOptions& options);

/// Trains one fold of one task from the run's processed manifest and split
/// file, writes `<fold_dir>/best.mck`, `history.csv` and the fold stamp.
/// Transfer uses `init`, defaulting to the run's MLMC checkpoint of that fold.
TrainResult run_train_fold(const RunConfig& config, TaskKind task, int fold,
                           const std::optional<std::filesystem::path>& init = std::nullopt, bool verbose = false);

}  // namespace mammo
