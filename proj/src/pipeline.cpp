#include "mammo/pipeline.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <json.hpp>

#include "mammo/checkpoint.hpp"
#include "mammo/error.hpp"
#include "mammo/evaluation.hpp"
#include "mammo/explain.hpp"
#include "mammo/hash.hpp"
#include "mammo/image_io.hpp"
#include "mammo/ingest.hpp"
#include "mammo/preprocess.hpp"

extern char** environ;

namespace fs = std::filesystem;
using nlohmann::json;

namespace mammo {

namespace {

constexpr std::string_view kVersion = "0.1.0";

std::string now_iso() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string file_digest(const fs::path& p) { return fs::is_regular_file(p) ? sha256_file(p) : "missing"; }

std::string combine(std::initializer_list<std::string_view> parts) {
  std::string text;
  for (auto p : parts) {
    text += p;
    text += '\n';
  }
  return sha256_hex(text);
}

bool has(std::span<const Stage> stages, Stage s) { return std::find(stages.begin(), stages.end(), s) != stages.end(); }
bool has_task(const RunConfig& c, TaskKind t) { return std::find(c.tasks.begin(), c.tasks.end(), t) != c.tasks.end(); }

std::vector<SplitTask> needed_splits(const RunConfig& c) {
  std::set<SplitTask> s;
  for (auto t : c.tasks) s.insert(split_task_for(t));
  // Subtype first: its test patients seed the abnormality test set.
  std::vector<SplitTask> out;
  if (s.count(SplitTask::Subtype)) out.push_back(SplitTask::Subtype);
  if (s.count(SplitTask::Abnormality)) out.push_back(SplitTask::Abnormality);
  return out;
}

// Training order: transfer after the MLMC folds it starts from.
std::vector<TaskKind> ordered_tasks(const RunConfig& c) {
  std::vector<TaskKind> out;
  for (auto t : c.tasks)
    if (t != TaskKind::TransferLuminal) out.push_back(t);
  if (has_task(c, TaskKind::TransferLuminal)) out.push_back(TaskKind::TransferLuminal);
  return out;
}

fs::path ingest_manifest_of(const RunConfig& c) { return c.manifest ? *c.manifest : layout_for(c).ingest_manifest(); }

// ---------------------------------------------------------------- stage keys

struct Keys {
  std::string ingest, preprocess, split;
  std::map<std::pair<TaskKind, int>, std::string> train;
  std::map<TaskKind, std::string> eval;
  std::string gradcam, report;
};

Keys compute_keys(const RunConfig& c) {
  Keys k;
  if (c.manifest) {
    k.ingest = combine({"external-manifest", file_digest(*c.manifest)});
  } else {
    k.ingest = combine({"ingest", c.section_hash({"ingest"}), c.canonical.at("paths.clinical"),
                        c.canonical.at("paths.images"), file_digest(c.clinical)});
  }
  k.preprocess = combine({"preprocess", c.section_hash({"preprocess"}), k.ingest});
  k.split = combine({"split", c.section_hash({"split", ""}), k.preprocess});
  const std::string train_cfg = c.section_hash({"train", "augment", ""});
  const std::string pretrained = c.pretrained ? file_digest(*c.pretrained) : "none";
  for (auto t : ordered_tasks(c)) {
    for (int f = 0; f < c.folds; ++f) {
      std::string init = "none";
      if (t == TaskKind::TransferLuminal) {
        const auto it = k.train.find({TaskKind::MLMC, f});
        init = it != k.train.end() ? it->second : file_digest(layout_for(c).fold_dir(TaskKind::MLMC, f) / "best.mck");
      }
      k.train[{t, f}] = combine({"train", cli_name(t), std::to_string(f), train_cfg, pretrained, k.split, init});
    }
  }
  for (auto t : c.tasks) {
    std::string folds;
    for (int f = 0; f < c.folds; ++f) folds += k.train.at({t, f});
    k.eval[t] = combine({"evaluate", cli_name(t), c.section_hash({"evaluate"}), folds});
  }
  const auto mlmc = k.train.find({TaskKind::MLMC, 0});
  k.gradcam = combine({"gradcam", c.section_hash({"gradcam"}), mlmc != k.train.end() ? mlmc->second : "none"});
  const auto b = k.eval.find(TaskKind::BaselineLuminal);
  const auto t = k.eval.find(TaskKind::TransferLuminal);
  k.report = combine({"report", b != k.eval.end() ? b->second : "none", t != k.eval.end() ? t->second : "none"});
  return k;
}

// ---------------------------------------------------------------- stamps

fs::path stamp_path(const RunConfig& c, const std::string& name) {
  return layout_for(c).stamps_dir() / (name + ".json");
}

bool stamp_valid(const RunConfig& c, const std::string& name, const std::string& key) {
  const fs::path p = stamp_path(c, name);
  if (!fs::exists(p)) return false;
  std::ifstream is(p);
  const json j = json::parse(is, nullptr, false);
  if (j.is_discarded() || j.value("key", std::string()) != key) return false;
  for (const auto& [rel, digest] : j.at("outputs").items()) {
    if (file_digest(layout_for(c).root / rel) != digest.get<std::string>()) return false;
  }
  return true;
}

void write_stamp(const RunConfig& c, const std::string& name, const std::string& key,
                 const std::vector<fs::path>& outputs, double seconds) {
  const fs::path root = layout_for(c).root;
  json outs = json::object();
  for (const auto& o : outputs) outs[fs::relative(o, root).generic_string()] = file_digest(o);
  const json j = {{"stage", name}, {"key", key}, {"outputs", outs}, {"seconds", seconds}, {"finished", now_iso()}};
  fs::create_directories(stamp_path(c, name).parent_path());
  std::ofstream os(stamp_path(c, name));
  os << j.dump(2) << "\n";
}

std::string fold_stamp_name(TaskKind t, int fold) {
  return "train-" + std::string(cli_name(t)) + "-fold" + std::to_string(fold);
}

void log_line(bool verbose, std::string_view stage, const std::string& msg) {
  if (verbose) std::clog << "[" << stage << "] " << msg << '\n';
}

// ---------------------------------------------------------------- stages

std::vector<fs::path> stage_ingest(const RunConfig& c, bool verbose) {
  const RunLayout L = layout_for(c);
  const DatasetManifest m = ingest_dataset(c.clinical, c.images, L.ingest_dir(), c.ingest);
  for (const auto& w : m.warnings) log_line(verbose, "ingest", "warning: " + w);
  log_line(verbose, "ingest", std::to_string(m.records.size()) + " records");
  return {L.ingest_manifest(), manifest_meta_path(L.ingest_manifest())};
}

std::vector<fs::path> stage_preprocess(const RunConfig& c, bool verbose) {
  const RunLayout L = layout_for(c);
  const DatasetManifest in = read_manifest(ingest_manifest_of(c));
  const auto summary = preprocess_dataset(in, c.preprocess, L.preprocess_dir());
  log_line(verbose, "preprocess",
           std::to_string(summary.manifest.records.size()) + " images, " + std::to_string(summary.failed) +
               " failed, mean crop aspect ratio " + std::to_string(summary.mean_aspect_ratio));
  return {L.processed_manifest(), L.preprocess_dir() / "preprocess.json"};
}

std::vector<fs::path> stage_split(const RunConfig& c, bool verbose) {
  const RunLayout L = layout_for(c);
  const DatasetManifest m = read_manifest(L.processed_manifest());
  std::vector<fs::path> outputs;
  std::set<std::string> forced;
  for (auto task : needed_splits(c)) {
    const std::uint64_t seed = derive_seed(c.seed, "split/" + std::string(to_string(task)));
    const auto holdout = make_holdout_split(m, task, c.test_fraction, seed, forced);
    const auto folds = make_cv_folds(holdout, m, c.folds, seed);
    if (const auto leaks = verify_no_leakage(folds, m); !leaks.empty()) {
      throw Error(ErrorCode::StageFailed, "split leaks patient " + leaks.front());
    }
    if (task == SplitTask::Subtype) forced = patients_with(folds, m, Role::test());
    write_splits(folds, L.split_file(task));
    outputs.push_back(L.split_file(task));
    log_line(verbose, "split",
             std::string(to_string(task)) + ": " + std::to_string(folds.test_ids().size()) + " test, " +
                 std::to_string(folds.roles.size() - folds.test_ids().size()) + " cross-validation images");
  }
  return outputs;
}

int spawn_and_wait(const std::vector<std::string>& args, std::vector<pid_t>& running, int max_running) {
  int failures = 0;
  auto reap_one = [&] {
    int status = 0;
    const pid_t pid = ::wait(&status);
    if (pid <= 0) return;
    std::erase(running, pid);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) ++failures;
  };
  while (static_cast<int>(running.size()) >= max_running) reap_one();
  if (args.empty()) {
    while (!running.empty()) reap_one();
    return failures;
  }
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  pid_t pid = 0;
  if (posix_spawn(&pid, argv[0], nullptr, nullptr, argv.data(), environ) != 0) {
    throw Error(ErrorCode::StageFailed, "cannot start " + args[0]);
  }
  running.push_back(pid);
  return failures;
}

StageRecord stage_train(const RunConfig& c, const Keys& keys, const PipelineOptions& opt) {
  StageRecord rec{"train", "skipped", 0.0, {}};
  int trained = 0, reused = 0;
  const bool fan_out = opt.jobs > 1 && !opt.self_exe.empty() && !c.source.empty();
  for (auto task : ordered_tasks(c)) {
    std::vector<pid_t> running;
    int failures = 0;
    for (int f = 0; f < c.folds; ++f) {
      const std::string name = fold_stamp_name(task, f);
      if (!opt.force && stamp_valid(c, name, keys.train.at({task, f}))) {
        ++reused;
        log_line(opt.verbose, "train", name + " up to date");
        continue;
      }
      ++trained;
      if (fan_out) {
        failures += spawn_and_wait({opt.self_exe.string(), "train", "--config", c.source.string(), "--task",
                                    std::string(cli_name(task)), "--fold", std::to_string(f), "--quiet"},
                                   running, opt.jobs);
      } else {
        run_train_fold(c, task, f, std::nullopt, opt.verbose);
      }
    }
    if (fan_out) failures += spawn_and_wait({}, running, 1);
    if (failures) throw Error(ErrorCode::StageFailed, std::to_string(failures) + " fold process(es) failed");
  }
  rec.status = trained ? "ran" : "skipped";
  rec.detail = std::to_string(trained) + " fold(s) trained, " + std::to_string(reused) + " reused";
  return rec;
}

std::optional<int> auc_positive_for(const RunConfig& c, const TaskSpec& spec) {
  if (c.auc_positive.empty() || spec.activation() != HeadActivation::Softmax2) return std::nullopt;
  for (int i = 0; i < spec.out_units(); ++i)
    if (spec.class_names[i] == c.auc_positive) return i;
  return std::nullopt;
}

std::vector<fs::path> stage_evaluate(const RunConfig& c, TaskKind task, bool verbose) {
  const RunLayout L = layout_for(c);
  const DatasetManifest m = read_manifest(L.processed_manifest());
  const SplitAssignment s = read_splits(L.split_file(split_task_for(task)));
  const TaskSpec spec = TaskSpec::make(task);
  const EvalReport report = evaluate_task(L.task_dir(task), m, s, spec, auc_positive_for(c, spec));
  write_report(report, L.eval_report(task));
  log_line(verbose, "evaluate",
           std::string(cli_name(task)) + ": macro F1 " + std::to_string(report.macro_f1.mean) + ", AUC " +
               std::to_string(report.auc.mean));
  fs::path txt = L.eval_report(task);
  return {L.eval_report(task), txt.replace_extension(".txt")};
}

std::string file_safe(std::string_view id) {
  std::string out;
  for (char ch : id) out.push_back(std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-' ? ch : '_');
  return out;
}

std::vector<fs::path> stage_gradcam(const RunConfig& c, bool verbose) {
  const RunLayout L = layout_for(c);
  const DatasetManifest m = read_manifest(L.processed_manifest());
  const SplitAssignment s = read_splits(L.split_file(SplitTask::Abnormality));
  const ModelCheckpoint ckpt = load_checkpoint(L.fold_dir(TaskKind::MLMC, 0) / "best.mck");
  Model model = restore_model(ckpt);
  const TaskSpec spec = TaskSpec::make(TaskKind::MLMC);
  std::map<std::string, const MammogramRecord*> by_id;
  for (const auto& r : m.records) by_id[r.image_id] = &r;

  fs::create_directories(L.gradcam_dir());
  std::vector<fs::path> outputs;
  const auto test = s.test_ids();
  const std::size_t n = std::min<std::size_t>(test.size(), static_cast<std::size_t>(c.gradcam_images));
  for (std::size_t i = 0; i < n; ++i) {
    const auto* rec = by_id.at(test[i]);
    const ImageTensor img = load_image(rec->image_path);
    for (const auto& cls : c.gradcam_classes) {
      const SaliencyMap map = gradcam(model, img, class_index(spec, cls));
      const fs::path out = L.gradcam_dir() / (file_safe(rec->image_id) + "_" + cls + ".png");
      overlay_and_export(map, img, out);
      outputs.push_back(out);
    }
  }
  log_line(verbose, "gradcam", std::to_string(outputs.size()) + " overlays written");
  return outputs;
}

std::vector<fs::path> stage_report(const RunConfig& c, bool verbose) {
  const RunLayout L = layout_for(c);
  const EvalReport baseline = read_report(L.eval_report(TaskKind::BaselineLuminal));
  const EvalReport transfer = read_report(L.eval_report(TaskKind::TransferLuminal));
  const ComparisonReport report = make_report(baseline, transfer);
  write_comparison(report, L.comparison_report());
  if (verbose) std::clog << format_comparison(report);
  fs::path txt = L.comparison_report();
  return {L.comparison_report(), txt.replace_extension(".txt")};
}

void write_provenance(const RunConfig& c, const Keys& keys, const PipelineResult& result, const std::string& started) {
  const RunLayout L = layout_for(c);
  json seeds = {{"root", c.seed}};
  for (auto t : needed_splits(c)) seeds["split/" + std::string(to_string(t))] = derive_seed(c.seed, "split/" + std::string(to_string(t)));
  for (auto t : c.tasks) {
    for (int f = 0; f < c.folds; ++f) {
      const auto tc = c.train_config(t, f);
      seeds[fold_stamp_name(t, f)] = {{"train", tc.seed}, {"augment", tc.augment.rng_seed}};
    }
  }
  json stages = json::array();
  for (const auto& r : result.records) {
    stages.push_back({{"stage", r.name}, {"status", r.status}, {"seconds", r.seconds}, {"detail", r.detail}});
  }
  json stamps = json::object();
  if (fs::exists(L.stamps_dir())) {
    for (const auto& e : fs::directory_iterator(L.stamps_dir())) {
      std::ifstream is(e.path());
      const json j = json::parse(is, nullptr, false);
      if (!j.is_discarded()) stamps[e.path().stem().string()] = j;
    }
  }
  json cfg = json::object();
  for (const auto& [k, v] : c.canonical) cfg[k] = v;
  const json j = {{"version", kVersion},
                  {"config_file", c.source.string()},
                  {"config_hash", c.hash()},
                  {"config", cfg},
                  {"started", started},
                  {"finished", now_iso()},
                  {"exit_code", result.exit_code},
                  {"error", result.error},
                  {"seeds", seeds},
                  {"stage_keys", {{"ingest", keys.ingest}, {"preprocess", keys.preprocess}, {"split", keys.split}}},
                  {"stages", stages},
                  {"artifacts", stamps}};
  fs::create_directories(L.root);
  std::ofstream os(L.provenance());
  os << j.dump(2) << "\n";
}

}  // namespace

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Ingest: return "ingest";
    case Stage::Preprocess: return "preprocess";
    case Stage::Split: return "split";
    case Stage::Train: return "train";
    case Stage::Evaluate: return "evaluate";
    case Stage::Gradcam: return "gradcam";
    case Stage::Report: return "report";
  }
  return "?";
}

std::optional<Stage> parse_stage(std::string_view s) {
  for (auto st : kAllStages)
    if (to_string(st) == s) return st;
  return std::nullopt;
}

fs::path RunLayout::split_file(SplitTask t) const { return root / "splits" / (std::string(to_string(t)) + ".csv"); }
fs::path RunLayout::task_dir(TaskKind t) const { return root / "train" / std::string(cli_name(t)); }
fs::path RunLayout::fold_dir(TaskKind t, int fold) const { return task_dir(t) / ("fold" + std::to_string(fold)); }
fs::path RunLayout::eval_report(TaskKind t) const { return root / "eval" / (std::string(cli_name(t)) + ".json"); }

RunLayout layout_for(const RunConfig& config) { return RunLayout{config.output}; }

void validate_run_config(const RunConfig& c, std::span<const Stage> stages) {
  const RunLayout L = layout_for(c);
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw Error(ErrorCode::ConfigInvalid, msg);
  };
  if (c.manifest) require(fs::is_regular_file(*c.manifest), "manifest not found: " + c.manifest->string());
  if (c.pretrained) require(fs::is_regular_file(*c.pretrained), "pretrained weights not found: " + c.pretrained->string());
  if (c.tasks.empty()) require(!has(stages, Stage::Train) && !has(stages, Stage::Evaluate), "train.tasks is empty");
  if (has(stages, Stage::Ingest) && !c.manifest) {
    require(fs::is_regular_file(c.clinical), "clinical table not found: " + c.clinical.string());
    require(fs::is_directory(c.images), "image directory not found: " + c.images.string());
  }
  if (has(stages, Stage::Preprocess) && !has(stages, Stage::Ingest)) {
    require(fs::is_regular_file(ingest_manifest_of(c)), "manifest not found: " + ingest_manifest_of(c).string());
  }
  if (has(stages, Stage::Split) && !has(stages, Stage::Preprocess)) {
    require(fs::is_regular_file(L.processed_manifest()),
            "processed manifest not found: " + L.processed_manifest().string());
  }
  if (has(stages, Stage::Train) && !has(stages, Stage::Split)) {
    for (auto t : needed_splits(c))
      require(fs::is_regular_file(L.split_file(t)), "split file not found: " + L.split_file(t).string());
  }
  if (has(stages, Stage::Train) && has_task(c, TaskKind::TransferLuminal) && !has_task(c, TaskKind::MLMC)) {
    for (int f = 0; f < c.folds; ++f) {
      const fs::path p = L.fold_dir(TaskKind::MLMC, f) / "best.mck";
      require(fs::is_regular_file(p), "transfer needs the MLMC checkpoint " + p.string());
    }
  }
  if (has(stages, Stage::Evaluate) && !has(stages, Stage::Train)) {
    for (auto t : c.tasks)
      for (int f = 0; f < c.folds; ++f) {
        const fs::path p = L.fold_dir(t, f) / "best.mck";
        require(fs::is_regular_file(p), "checkpoint not found: " + p.string());
      }
  }
  const TaskSpec mlmc = TaskSpec::make(TaskKind::MLMC);
  for (const auto& cls : c.gradcam_classes) {
    require(std::find(mlmc.class_names.begin(), mlmc.class_names.end(), cls) != mlmc.class_names.end(),
            "gradcam.classes: unknown class '" + cls + "'");
  }
}

TrainResult run_train_fold(const RunConfig& c, TaskKind task, int fold, const std::optional<fs::path>& init,
                           bool verbose) {
  if (fold < 0 || fold >= c.folds) {
    throw Error(ErrorCode::InvalidArgument, "fold must be in [0, " + std::to_string(c.folds - 1) + "]");
  }
  const auto started = std::chrono::steady_clock::now();
  const RunLayout L = layout_for(c);
  const DatasetManifest m = read_manifest(L.processed_manifest());
  const SplitAssignment s = read_splits(L.split_file(split_task_for(task)));
  std::optional<ModelCheckpoint> init_ckpt;
  if (task == TaskKind::TransferLuminal) {
    init_ckpt = load_checkpoint(init ? *init : L.fold_dir(TaskKind::MLMC, fold) / "best.mck");
  } else if (init) {
    throw Error(ErrorCode::InvalidArgument, "--init is only used by the transfer task");
  }
  TrainOptions opt;
  opt.backbone = c.backbone;
  opt.pretrained = task == TaskKind::TransferLuminal ? std::nullopt : c.pretrained;
  opt.out_dir = L.fold_dir(task, fold);
  opt.config_hash = c.hash();
  opt.verbose = verbose;
  TrainResult result = train_task(TaskSpec::make(task), fold, m, s, c.train_config(task, fold),
                                  init_ckpt ? &*init_ckpt : nullptr, opt);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  // The stamp records the run's own key so the pipeline can reuse the fold.
  const Keys keys = compute_keys(c);
  write_stamp(c, fold_stamp_name(task, fold), keys.train.at({task, fold}),
              {L.fold_dir(task, fold) / "best.mck", L.fold_dir(task, fold) / "history.csv"}, seconds);
  return result;
}

PipelineResult run_pipeline(const RunConfig& c, const PipelineOptions& opt) {
  PipelineResult result;
  const std::string started = now_iso();
  std::vector<Stage> stages;
  for (auto s : kAllStages)
    if (opt.stages.empty() || has(opt.stages, s)) stages.push_back(s);

  Keys keys;
  try {
    validate_run_config(c, stages);
    keys = compute_keys(c);
  } catch (const Error& e) {
    result.exit_code = 2;
    result.error = e.what();
    return result;
  }

  for (auto stage : stages) {
    const auto t0 = std::chrono::steady_clock::now();
    StageRecord rec{std::string(to_string(stage)), "ran", 0.0, {}};
    try {
      // Simple stages: one stamp, one function.
      auto simple = [&](const std::string& name, const std::string& key, auto&& fn) {
        if (!opt.force && stamp_valid(c, name, key)) {
          rec.status = "skipped";
          rec.detail = "up to date";
          return;
        }
        const auto outputs = fn();
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_stamp(c, name, key, outputs, secs);
      };
      switch (stage) {
        case Stage::Ingest:
          if (c.manifest) {
            rec.status = "skipped";
            rec.detail = "using " + c.manifest->string();
          } else {
            simple("ingest", keys.ingest, [&] { return stage_ingest(c, opt.verbose); });
          }
          break;
        case Stage::Preprocess:
          simple("preprocess", keys.preprocess, [&] { return stage_preprocess(c, opt.verbose); });
          break;
        case Stage::Split: simple("split", keys.split, [&] { return stage_split(c, opt.verbose); }); break;
        case Stage::Train: rec = stage_train(c, keys, opt); break;
        case Stage::Evaluate: {
          int ran = 0;
          for (auto t : c.tasks) {
            const std::string name = "evaluate-" + std::string(cli_name(t));
            if (!opt.force && stamp_valid(c, name, keys.eval.at(t))) continue;
            ++ran;
            const auto outputs = stage_evaluate(c, t, opt.verbose);
            write_stamp(c, name, keys.eval.at(t), outputs, 0.0);
          }
          rec.status = ran ? "ran" : "skipped";
          break;
        }
        case Stage::Gradcam:
          if (!has_task(c, TaskKind::MLMC) && !fs::exists(layout_for(c).fold_dir(TaskKind::MLMC, 0) / "best.mck")) {
            rec.status = "skipped";
            rec.detail = "no MLMC checkpoint";
          } else {
            simple("gradcam", keys.gradcam, [&] { return stage_gradcam(c, opt.verbose); });
          }
          break;
        case Stage::Report: {
          const RunLayout L = layout_for(c);
          if (!fs::exists(L.eval_report(TaskKind::BaselineLuminal)) ||
              !fs::exists(L.eval_report(TaskKind::TransferLuminal))) {
            rec.status = "skipped";
            rec.detail = "needs baseline and transfer evaluations";
          } else {
            simple("report", keys.report, [&] { return stage_report(c, opt.verbose); });
          }
          break;
        }
      }
    } catch (const std::exception& e) {
      rec.status = "failed";
      rec.detail = e.what();
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.records.push_back(rec);
      result.exit_code = 1;
      result.error = std::string(to_string(ErrorCode::StageFailed)) + ": stage " + rec.name + ": " + e.what();
      log_line(opt.verbose, rec.name, "failed: " + std::string(e.what()));
      break;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_line(opt.verbose, rec.name, rec.status + (rec.detail.empty() ? "" : " (" + rec.detail + ")"));
    result.records.push_back(rec);
  }
  try {
    write_provenance(c, keys, result, started);
  } catch (const std::exception& e) {
    if (result.exit_code == 0) {
      result.exit_code = 1;
      result.error = std::string("provenance: ") + e.what();
    }
  }
  return result;
}

}  // namespace mammo
