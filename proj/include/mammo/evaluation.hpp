#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mammo/checkpoint.hpp"
#include "mammo/metrics.hpp"
#include "mammo/training.hpp"

namespace mammo {

inline constexpr int kReportVersion = 1;

/// Runs every fold's checkpoint over the same test images and aggregates.
/// Throws Error{TaskMismatch} if a checkpoint was trained for another task.
EvalReport evaluate_task(std::span<const ModelCheckpoint> checkpoints, std::span<const LabeledImage> test,
                         const TaskSpec& task, std::optional<int> auc_positive = std::nullopt, int batch_size = 16);

/// Loads `<ckpt_dir>/fold<k>/best.mck` for every fold in the split file and
/// evaluates on its test images.
EvalReport evaluate_task(const std::filesystem::path& ckpt_dir, const DatasetManifest& manifest,
                         const SplitAssignment& splits, const TaskSpec& task,
                         std::optional<int> auc_positive = std::nullopt);

std::filesystem::path fold_checkpoint_path(const std::filesystem::path& ckpt_dir, int fold);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

/// Writes the JSON report and a `.txt` table next to it.
void write_report(const EvalReport& report, const std::filesystem::path& json_path);
EvalReport read_report(const std::filesystem::path& json_path);

/// Per-class F1 / macro F1 / AUC as "mean (std)", one fold per row below.
std::string format_table(const EvalReport& report);

struct SignificanceEntry {
  std::string metric;
  std::optional<SignificanceResult> result;
  std::string note;  // set when the test could not be computed
};

struct ComparisonReport {
  EvalReport baseline;
  EvalReport transfer;
  std::vector<SignificanceEntry> significance;  // macro_f1, auc (transfer vs baseline)
};

/// Pairs the two reports fold by fold. Reports must cover the same folds.
ComparisonReport make_report(const EvalReport& baseline, const EvalReport& transfer);
nlohmann::json comparison_to_json(const ComparisonReport& report);
std::string format_comparison(const ComparisonReport& report);
void write_comparison(const ComparisonReport& report, const std::filesystem::path& json_path);

}  // namespace mammo
