#include "mammo/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "mammo/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mammo {

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double number_from(const json& j) {
  return j.is_number() ? j.get<double>() : std::numeric_limits<double>::quiet_NaN();
}

json summary_json(const MetricSummary& s) { return {{"mean", number(s.mean)}, {"std", number(s.std)}}; }
MetricSummary summary_from(const json& j) { return {number_from(j.at("mean")), number_from(j.at("std"))}; }

std::string fixed4(double v) {
  if (!std::isfinite(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string mean_std(const MetricSummary& s) { return fixed4(s.mean) + " (" + fixed4(s.std) + ")"; }

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  os << text;
}

fs::path table_path(const fs::path& json_path) {
  fs::path p = json_path;
  return p.replace_extension(".txt");
}

}  // namespace

EvalReport evaluate_task(std::span<const ModelCheckpoint> checkpoints, std::span<const LabeledImage> test,
                         const TaskSpec& task, std::optional<int> auc_positive, int batch_size) {
  if (checkpoints.empty()) throw Error(ErrorCode::InvalidArgument, "no checkpoints to evaluate");
  if (test.empty()) throw Error(ErrorCode::InvalidArgument, "empty test set");
  std::vector<float> targets;
  for (const auto& img : test) targets.insert(targets.end(), img.targets.begin(), img.targets.end());

  std::vector<FoldMetrics> folds;
  for (const auto& ckpt : checkpoints) {
    if (ckpt.meta.task != task.kind) {
      throw Error(ErrorCode::TaskMismatch, "checkpoint for " + std::string(to_string(ckpt.meta.task)) +
                                               " evaluated as " + std::string(to_string(task.kind)));
    }
    Model model = restore_model(ckpt);
    const Tensor probs = predict_probabilities(model, test, batch_size);
    folds.push_back(score_predictions(task, probs, targets, auc_positive, ckpt.meta.fold));
  }
  EvalReport report = aggregate_folds(folds);
  report.task = std::string(cli_name(task.kind));
  return report;
}

fs::path fold_checkpoint_path(const fs::path& ckpt_dir, int fold) {
  return ckpt_dir / ("fold" + std::to_string(fold)) / "best.mck";
}

EvalReport evaluate_task(const fs::path& ckpt_dir, const DatasetManifest& manifest, const SplitAssignment& splits,
                         const TaskSpec& task, std::optional<int> auc_positive) {
  if (splits.folds < 1) throw Error(ErrorCode::InvalidArgument, "split file has no folds");
  std::vector<ModelCheckpoint> ckpts;
  for (int k = 0; k < splits.folds; ++k) ckpts.push_back(load_checkpoint(fold_checkpoint_path(ckpt_dir, k)));
  const auto ids = splits.test_ids();
  const auto test = load_images(manifest, ids, task.kind);
  return evaluate_task(ckpts, test, task, auc_positive);
}

json report_to_json(const EvalReport& report) {
  json folds = json::array();
  for (const auto& f : report.folds) {
    json per_class = json::object();
    for (const auto& [name, v] : f.per_class_f1) per_class[name] = number(v);
    folds.push_back({{"fold", f.fold}, {"per_class_f1", per_class}, {"macro_f1", number(f.macro_f1)},
                     {"auc", number(f.auc)}});
  }
  json classes = json::array();
  json per_class = json::object();
  for (const auto& [name, s] : report.per_class_f1) {
    classes.push_back(name);
    per_class[name] = summary_json(s);
  }
  return {{"report_version", kReportVersion},
          {"task", report.task},
          {"classes", classes},
          {"folds", folds},
          {"aggregate",
           {{"per_class_f1", per_class}, {"macro_f1", summary_json(report.macro_f1)}, {"auc", summary_json(report.auc)}}}};
}

EvalReport report_from_json(const json& j) {
  if (j.value("report_version", 0) != kReportVersion) {
    throw Error(ErrorCode::SchemaMismatch, "unsupported report version");
  }
  EvalReport r;
  r.task = j.at("task").get<std::string>();
  const auto classes = j.at("classes").get<std::vector<std::string>>();
  for (const auto& f : j.at("folds")) {
    FoldMetrics m;
    m.fold = f.at("fold").get<int>();
    for (const auto& c : classes) m.per_class_f1.emplace_back(c, number_from(f.at("per_class_f1").at(c)));
    m.macro_f1 = number_from(f.at("macro_f1"));
    m.auc = number_from(f.at("auc"));
    r.folds.push_back(std::move(m));
  }
  const auto& agg = j.at("aggregate");
  for (const auto& c : classes) r.per_class_f1.emplace_back(c, summary_from(agg.at("per_class_f1").at(c)));
  r.macro_f1 = summary_from(agg.at("macro_f1"));
  r.auc = summary_from(agg.at("auc"));
  return r;
}

void write_report(const EvalReport& report, const fs::path& json_path) {
  if (json_path.has_parent_path()) fs::create_directories(json_path.parent_path());
  write_text(json_path, report_to_json(report).dump(2) + "\n");
  write_text(table_path(json_path), format_table(report));
}

EvalReport read_report(const fs::path& json_path) {
  std::ifstream is(json_path);
  if (!is) throw Error(ErrorCode::IoFailure, "cannot read " + json_path.string());
  const json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::SchemaMismatch, json_path.string() + ": invalid JSON");
  return report_from_json(j);
}

std::string format_table(const EvalReport& report) {
  std::ostringstream ss;
  ss << "task: " << report.task << "\n\n";
  std::vector<std::string> cols;
  for (const auto& [name, s] : report.per_class_f1) cols.push_back("F1 " + name);
  cols.push_back("Macro F1");
  cols.push_back("AUC");
  const std::size_t w = 20;
  ss << pad("", 10);
  for (const auto& c : cols) ss << pad(c, w);
  ss << "\n" << pad("mean (std)", 10);
  for (const auto& [name, s] : report.per_class_f1) ss << pad(mean_std(s), w);
  ss << pad(mean_std(report.macro_f1), w) << pad(mean_std(report.auc), w) << "\n";
  for (const auto& f : report.folds) {
    ss << pad("fold " + std::to_string(f.fold), 10);
    for (const auto& [name, v] : f.per_class_f1) ss << pad(fixed4(v), w);
    ss << pad(fixed4(f.macro_f1), w) << pad(fixed4(f.auc), w) << "\n";
  }
  return ss.str();
}

ComparisonReport make_report(const EvalReport& baseline, const EvalReport& transfer) {
  if (baseline.folds.size() != transfer.folds.size()) {
    throw Error(ErrorCode::LengthMismatch, "baseline and transfer reports cover different fold counts");
  }
  ComparisonReport out{baseline, transfer, {}};
  auto pair_metric = [&](const std::string& name, auto get) {
    std::vector<double> a, b;
    for (std::size_t i = 0; i < baseline.folds.size(); ++i) {
      if (baseline.folds[i].fold != transfer.folds[i].fold) {
        throw Error(ErrorCode::InvalidArgument, "reports list folds in different order");
      }
      a.push_back(get(transfer.folds[i]));
      b.push_back(get(baseline.folds[i]));
    }
    SignificanceEntry e{name, std::nullopt, {}};
    try {
      e.result = paired_t_test(a, b);
    } catch (const Error& err) {
      e.note = err.what();
    }
    out.significance.push_back(std::move(e));
  };
  pair_metric("macro_f1", [](const FoldMetrics& f) { return f.macro_f1; });
  pair_metric("auc", [](const FoldMetrics& f) { return f.auc; });
  return out;
}

json comparison_to_json(const ComparisonReport& report) {
  json sig = json::array();
  for (const auto& e : report.significance) {
    json entry = {{"metric", e.metric}, {"pairing", "per-fold test metrics, transfer minus baseline"}};
    if (e.result) {
      entry["t_statistic"] = number(e.result->t_statistic);
      entry["p_two_tailed"] = number(e.result->p_two_tailed);
      entry["n_pairs"] = e.result->n_pairs;
    } else {
      entry["error"] = e.note;
    }
    sig.push_back(entry);
  }
  return {{"report_version", kReportVersion},
          {"baseline", report_to_json(report.baseline)},
          {"transfer", report_to_json(report.transfer)},
          {"significance", sig}};
}

std::string format_comparison(const ComparisonReport& report) {
  std::ostringstream ss;
  const std::size_t w = 22;
  ss << pad("", 18) << pad("Baseline", w) << pad("Transfer", w) << "\n";
  const auto& b = report.baseline.per_class_f1;
  const auto& t = report.transfer.per_class_f1;
  for (std::size_t i = 0; i < b.size() && i < t.size(); ++i) {
    ss << pad("F1 " + b[i].first, 18) << pad(mean_std(b[i].second), w) << pad(mean_std(t[i].second), w) << "\n";
  }
  ss << pad("F1 Score", 18) << pad(mean_std(report.baseline.macro_f1), w) << pad(mean_std(report.transfer.macro_f1), w)
     << "\n";
  ss << pad("AUC", 18) << pad(mean_std(report.baseline.auc), w) << pad(mean_std(report.transfer.auc), w) << "\n\n";
  ss << "paired two-tailed t-test over folds (transfer vs baseline)\n";
  for (const auto& e : report.significance) {
    ss << "  " << pad(e.metric, 10);
    if (e.result) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "t = %.4f  p = %.3g  n = %d", e.result->t_statistic, e.result->p_two_tailed,
                    e.result->n_pairs);
      ss << buf;
    } else {
      ss << "not computed (" << e.note << ")";
    }
    ss << "\n";
  }
  return ss.str();
}

void write_comparison(const ComparisonReport& report, const fs::path& json_path) {
  if (json_path.has_parent_path()) fs::create_directories(json_path.parent_path());
  write_text(json_path, comparison_to_json(report).dump(2) + "\n");
  write_text(table_path(json_path), format_comparison(report));
}

}  // namespace mammo
