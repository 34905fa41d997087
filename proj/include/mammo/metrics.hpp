#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mammo/models.hpp"
#include "mammo/tensor.hpp"

namespace mammo {

/// 2TP / (2TP + FP + FN) with class `cls` as positive; 0 when the
/// denominator is 0. Throws Error{LengthMismatch} (also for empty input).
double f1_per_class(std::span<const int> predicted, std::span<const int> actual, int cls);

/// Unweighted mean of per-class F1 values.
double macro_f1(std::span<const double> per_class);

/// Mann-Whitney form of the ROC area: P(score_pos > score_neg) + 0.5 P(tie).
/// labels are 1 (positive) / 0. Throws Error{SingleClass}, Error{LengthMismatch}.
double auc(std::span<const double> scores, std::span<const int> labels);

struct FoldMetrics {
  int fold = 0;
  std::vector<std::pair<std::string, double>> per_class_f1;  // reporting order
  double macro_f1 = 0.0;
  double auc = 0.0;  // NaN if undefined on this test set
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample (n - 1) standard deviation; 0 for a single fold
};

struct SignificanceResult {
  double t_statistic = 0.0;
  double p_two_tailed = 1.0;
  int n_pairs = 0;
};

struct EvalReport {
  std::string task;
  std::vector<FoldMetrics> folds;
  std::vector<std::pair<std::string, MetricSummary>> per_class_f1;
  MetricSummary macro_f1;
  MetricSummary auc;
};

MetricSummary summarize(std::span<const double> values);

/// Per-metric mean and sample std across folds. Throws Error{InvalidArgument}
/// on an empty list or folds reporting different classes.
EvalReport aggregate_folds(std::span<const FoldMetrics> folds);

/// Paired two-tailed t-test on a - b with n - 1 degrees of freedom.
/// Throws Error{LengthMismatch} (unequal or < 2) and
/// Error{DegenerateVariance} when every difference is the same.
SignificanceResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// Decision rule + metrics for one task from head probabilities.
///
/// Softmax heads: argmax; one F1 per class; AUC of class `auc_positive`
/// (default: class 0 for the luminal tasks, 1 otherwise).
/// Sigmoid heads: unit positive iff p >= 0.5; one F1 per unit, plus
/// "benign" (complement of the malignant unit) for MLMC; AUC is the mean of
/// per-unit AUCs over units with both classes present.
///
/// targets holds per-unit targets (one-hot for softmax heads), row-major.
FoldMetrics score_predictions(const TaskSpec& task, const Tensor& probabilities, std::span<const float> targets,
                              std::optional<int> auc_positive = std::nullopt, int fold = 0);

int default_auc_positive(const TaskSpec& task);

}  // namespace mammo
