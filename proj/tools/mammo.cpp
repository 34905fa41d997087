// mammo: command-line front end for the mammography subtype pipeline.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mammo/checkpoint.hpp"
#include "mammo/config.hpp"
#include "mammo/error.hpp"
#include "mammo/evaluation.hpp"
#include "mammo/explain.hpp"
#include "mammo/image_io.hpp"
#include "mammo/ingest.hpp"
#include "mammo/pipeline.hpp"
#include "mammo/preprocess.hpp"
#include "mammo/splits.hpp"

namespace fs = std::filesystem;
using namespace mammo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitStage = 1;
constexpr int kExitConfig = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path self_exe() {
  std::error_code ec;
  const fs::path p = fs::read_symlink("/proc/self/exe", ec);
  return ec ? fs::path() : p;
}

RunConfig config_or_throw(const std::string& path) {
  if (path.empty()) throw UsageError("--config is required");
  return load_run_config(path);
}

int run_stages(const std::string& config_path, std::vector<Stage> stages, bool force, int jobs, bool quiet) {
  RunConfig cfg = config_or_throw(config_path);
  cfg.jobs = jobs;
  PipelineOptions opt;
  opt.stages = std::move(stages);
  opt.force = force;
  opt.jobs = jobs;
  opt.self_exe = self_exe();
  opt.verbose = !quiet;
  const PipelineResult r = run_pipeline(cfg, opt);
  if (r.exit_code != 0) std::cerr << "error: " << r.error << '\n';
  return r.exit_code;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mammography molecular-subtype pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mammo 0.1.0");

  std::string config_path;
  bool quiet = false;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run config (run.toml)");
    sub->add_flag("--quiet", quiet, "Only print errors");
  };

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Decode DICOMs, window them and write the manifest");
  std::string clinical, images, out, format = "png";
  int jpeg_quality = 95;
  ingest->add_option("--clinical", clinical, "Clinical table (CSV)");
  ingest->add_option("--images", images, "DICOM directory");
  ingest->add_option("--out", out, "Output directory");
  ingest->add_option("--format", format, "png | jpeg")->check(CLI::IsMember({"png", "jpeg"}));
  ingest->add_option("--jpeg-quality", jpeg_quality)->check(CLI::Range(1, 100));
  add_config(ingest);

  // preprocess
  auto* preprocess = app.add_subcommand("preprocess", "Crop to the breast and resize");
  std::string manifest;
  float threshold = kDefaultCropThreshold;
  int rows = kTargetRows, cols = kTargetCols;
  preprocess->add_option("--manifest", manifest, "Ingest manifest CSV");
  preprocess->add_option("--out", out, "Output directory");
  preprocess->add_option("--threshold", threshold, "Background threshold in [0,1]")->check(CLI::Range(0.0, 1.0));
  preprocess->add_option("--rows", rows)->check(CLI::PositiveNumber);
  preprocess->add_option("--cols", cols)->check(CLI::PositiveNumber);
  add_config(preprocess);

  // split
  auto* split = app.add_subcommand("split", "Held-out test split and patient-disjoint folds");
  std::string split_task = "subtype";
  std::uint64_t seed = 0;
  double test_frac = 0.10;
  int folds = 5;
  split->add_option("--manifest", manifest, "Processed manifest CSV");
  split->add_option("--task", split_task, "subtype | abnormality")->check(CLI::IsMember({"subtype", "abnormality"}));
  split->add_option("--seed", seed);
  split->add_option("--out", out, "Split CSV to write");
  split->add_option("--test-frac", test_frac)->check(CLI::Range(0.0, 1.0));
  split->add_option("--folds", folds)->check(CLI::Range(2, 100));
  add_config(split);

  // train
  auto* train = app.add_subcommand("train", "Train one fold of one task");
  std::string task_name;
  int fold = 0;
  std::string init;
  train->add_option("--task", task_name, "mlmc | baseline | transfer | mass-calc | benign-malignant")->required();
  train->add_option("--fold", fold)->required();
  train->add_option("--init", init, "Transfer source checkpoint (default: the run's MLMC fold)");
  add_config(train);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate every fold checkpoint on the test set");
  std::string ckpt_dir, split_file, auc_positive;
  evaluate->add_option("--task", task_name, "Task name");
  evaluate->add_option("--ckpt-dir", ckpt_dir, "Directory holding fold<k>/best.mck");
  evaluate->add_option("--split", split_file, "Split CSV");
  evaluate->add_option("--manifest", manifest, "Processed manifest CSV");
  evaluate->add_option("--out", out, "Report JSON to write");
  evaluate->add_option("--auc-positive", auc_positive, "Class whose probability scores the AUC");
  add_config(evaluate);

  // gradcam
  auto* gc = app.add_subcommand("gradcam", "Grad-CAM overlay for one image");
  std::string ckpt, image, cls;
  gc->add_option("--ckpt", ckpt, "Checkpoint");
  gc->add_option("--image", image, "Processed image (PNG/JPEG)");
  gc->add_option("--class", cls, "Head class, e.g. calcification | mass | malignant");
  gc->add_option("--out", out, "Overlay PNG");
  add_config(gc);

  // report
  auto* report = app.add_subcommand("report", "Baseline vs transfer comparison");
  std::string baseline_json, transfer_json;
  report->add_option("--baseline", baseline_json, "Baseline report JSON");
  report->add_option("--transfer", transfer_json, "Transfer report JSON");
  report->add_option("--out", out, "Comparison JSON to write");
  add_config(report);

  // run
  auto* run = app.add_subcommand("run", "Run the pipeline from a config");
  std::vector<std::string> stage_names;
  bool force = false;
  int jobs = 1;
  run->add_option("--stages", stage_names, "Subset of stages (default: all)")->delimiter(',');
  run->add_flag("--force", force, "Ignore completion stamps");
  run->add_option("--jobs", jobs, "Parallel fold processes")->check(CLI::PositiveNumber);
  add_config(run);

  auto* init_cfg = app.add_subcommand("init-config", "Write an annotated default run config");
  init_cfg->add_option("--out", out, "Path to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) {
      std::vector<Stage> stages;
      for (const auto& s : stage_names) {
        const auto st = parse_stage(s);
        if (!st) throw UsageError("unknown stage '" + s + "'");
        stages.push_back(*st);
      }
      return run_stages(config_path, stages, force, jobs, quiet);
    }

    if (*init_cfg) {
      std::ofstream os(out);
      if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + out);
      os << default_config_text();
      return kExitOk;
    }

    if (*train) {
      const auto task = parse_task_kind(task_name);
      if (!task) throw UsageError("unknown task '" + task_name + "'");
      const RunConfig cfg = config_or_throw(config_path);
      validate_run_config(cfg, {});
      const auto result = run_train_fold(cfg, *task, fold, init.empty() ? std::nullopt : std::optional<fs::path>(init), !quiet);
      if (!quiet) {
        std::cout << "best epoch " << result.checkpoint.meta.epoch << ", val loss " << result.checkpoint.meta.val_loss
                  << '\n';
      }
      return kExitOk;
    }

    // Stage subcommands: either explicit flags or --config to run that stage.
    if (!config_path.empty()) {
      Stage st = Stage::Ingest;
      if (*preprocess) st = Stage::Preprocess;
      else if (*split) st = Stage::Split;
      else if (*evaluate) st = Stage::Evaluate;
      else if (*gc) st = Stage::Gradcam;
      else if (*report) st = Stage::Report;
      return run_stages(config_path, {st}, false, 1, quiet);
    }
    auto need = [](const std::string& v, const char* flag) {
      if (v.empty()) throw UsageError(std::string(flag) + " is required (or pass --config)");
    };

    if (*ingest) {
      need(clinical, "--clinical");
      need(images, "--images");
      need(out, "--out");
      IngestOptions opt;
      opt.format = format == "png" ? ImageFormat::Png : ImageFormat::Jpeg;
      opt.jpeg_quality = jpeg_quality;
      const auto m = ingest_dataset(clinical, images, out, opt);
      print_warnings(m.warnings);
      if (!quiet) std::cout << m.records.size() << " records written to " << (fs::path(out) / "manifest.csv") << '\n';
      return kExitOk;
    }
    if (*preprocess) {
      need(manifest, "--manifest");
      need(out, "--out");
      const auto summary = preprocess_dataset(read_manifest(manifest), {threshold, rows, cols}, out);
      print_warnings(summary.manifest.warnings);
      if (!quiet) {
        std::cout << summary.manifest.records.size() << " images, " << summary.failed
                  << " failed, mean crop aspect ratio " << summary.mean_aspect_ratio << '\n';
      }
      return kExitOk;
    }
    if (*split) {
      need(manifest, "--manifest");
      need(out, "--out");
      const DatasetManifest m = read_manifest(manifest);
      const SplitTask task = *parse_split_task(split_task);
      const auto holdout = make_holdout_split(m, task, test_frac, seed);
      const auto assignment = make_cv_folds(holdout, m, folds, seed);
      write_splits(assignment, out);
      if (!quiet) {
        std::cout << assignment.test_ids().size() << " test images";
        for (int k = 0; k < folds; ++k) std::cout << ", fold" << k << " " << assignment.validation_ids(k).size();
        std::cout << '\n';
      }
      return kExitOk;
    }
    if (*evaluate) {
      need(task_name, "--task");
      need(ckpt_dir, "--ckpt-dir");
      need(split_file, "--split");
      need(manifest, "--manifest");
      need(out, "--out");
      const auto task = parse_task_kind(task_name);
      if (!task) throw UsageError("unknown task '" + task_name + "'");
      const TaskSpec spec = TaskSpec::make(*task);
      std::optional<int> positive;
      if (!auc_positive.empty()) positive = class_index(spec, auc_positive);
      const EvalReport r = evaluate_task(ckpt_dir, read_manifest(manifest), read_splits(split_file), spec, positive);
      write_report(r, out);
      if (!quiet) std::cout << format_table(r);
      return kExitOk;
    }
    if (*gc) {
      need(ckpt, "--ckpt");
      need(image, "--image");
      need(cls, "--class");
      need(out, "--out");
      const ModelCheckpoint c = load_checkpoint(ckpt);
      Model model = restore_model(c);
      const ImageTensor img = load_image(image);
      const SaliencyMap map = gradcam(model, img, class_index(TaskSpec::make(c.meta.task), cls));
      overlay_and_export(map, img, out);
      return kExitOk;
    }
    if (*report) {
      need(baseline_json, "--baseline");
      need(transfer_json, "--transfer");
      need(out, "--out");
      const auto r = make_report(read_report(baseline_json), read_report(transfer_json));
      write_comparison(r, out);
      if (!quiet) std::cout << format_comparison(r);
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::ConfigInvalid ? kExitConfig : kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitStage;
  }
  return kExitOk;
}
