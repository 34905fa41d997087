#include "mammo/metrics.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>

#include "mammo/error.hpp"

namespace mammo {

double f1_per_class(std::span<const int> predicted, std::span<const int> actual, int cls) {
  if (predicted.size() != actual.size() || predicted.empty()) {
    throw Error(ErrorCode::LengthMismatch, "f1_per_class needs equal, non-empty label vectors");
  }
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] == cls;
    const bool a = actual[i] == cls;
    tp += p && a;
    fp += p && !a;
    fn += !p && a;
  }
  const long denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(denom);
}

double macro_f1(std::span<const double> per_class) {
  if (per_class.empty()) throw Error(ErrorCode::InvalidArgument, "macro_f1 of no classes");
  return std::accumulate(per_class.begin(), per_class.end(), 0.0) / static_cast<double>(per_class.size());
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::LengthMismatch, "auc: scores/labels length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the Mann-Whitney U, kept integral so the result is exact.
  long long twice_u = 0;
  long long neg_below = 0;
  long long positives = 0;
  long long negatives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    long long pos_here = 0, neg_here = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? pos_here : neg_here) += 1;
      ++j;
    }
    twice_u += 2 * pos_here * neg_below + pos_here * neg_here;
    neg_below += neg_here;
    positives += pos_here;
    negatives += neg_here;
    i = j;
  }
  if (positives == 0 || negatives == 0) throw Error(ErrorCode::SingleClass, "auc needs both classes");
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(positives * negatives));
}

MetricSummary summarize(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "summarize of no values");
  MetricSummary s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

EvalReport aggregate_folds(std::span<const FoldMetrics> folds) {
  if (folds.empty()) throw Error(ErrorCode::InvalidArgument, "aggregate_folds of no folds");
  EvalReport report;
  report.folds.assign(folds.begin(), folds.end());
  const auto& classes = folds.front().per_class_f1;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<double> values;
    for (const auto& f : folds) {
      if (f.per_class_f1.size() != classes.size() || f.per_class_f1[c].first != classes[c].first) {
        throw Error(ErrorCode::InvalidArgument, "folds report different classes");
      }
      values.push_back(f.per_class_f1[c].second);
    }
    report.per_class_f1.emplace_back(classes[c].first, summarize(values));
  }
  std::vector<double> f1s, aucs;
  for (const auto& f : folds) {
    f1s.push_back(f.macro_f1);
    aucs.push_back(f.auc);
  }
  report.macro_f1 = summarize(f1s);
  report.auc = summarize(aucs);
  return report;
}

SignificanceResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw Error(ErrorCode::LengthMismatch, "paired_t_test needs two equal-length samples of size >= 2");
  }
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const MetricSummary s = summarize(d);
  const double scale = std::max(1.0, std::abs(s.mean));
  if (!(s.std > 1e-12 * scale)) {
    throw Error(ErrorCode::DegenerateVariance, "all paired differences are equal; t is undefined");
  }
  SignificanceResult r;
  r.n_pairs = static_cast<int>(n);
  r.t_statistic = s.mean / (s.std / std::sqrt(static_cast<double>(n)));
  const boost::math::students_t dist(static_cast<double>(n - 1));
  r.p_two_tailed = std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t_statistic))), 0.0, 1.0);
  return r;
}

int default_auc_positive(const TaskSpec& task) { return task.is_luminal() ? 0 : 1; }

FoldMetrics score_predictions(const TaskSpec& task, const Tensor& probabilities, std::span<const float> targets,
                              std::optional<int> auc_positive, int fold) {
  const int k = task.out_units();
  if (probabilities.rank() != 2 || probabilities.dim(1) != k ||
      targets.size() != static_cast<std::size_t>(probabilities.dim(0)) * k || probabilities.dim(0) == 0) {
    throw Error(ErrorCode::LengthMismatch, "score_predictions: probabilities/targets disagree");
  }
  const int n = probabilities.dim(0);
  FoldMetrics m;
  m.fold = fold;
  auto prob = [&](int i, int j) { return static_cast<double>(probabilities[static_cast<std::size_t>(i) * k + j]); };
  auto target = [&](int i, int j) { return targets[static_cast<std::size_t>(i) * k + j]; };

  if (task.activation() == HeadActivation::Softmax2) {
    std::vector<int> predicted(n), actual(n);
    for (int i = 0; i < n; ++i) {
      int best = 0;
      for (int j = 1; j < k; ++j)
        if (prob(i, j) > prob(i, best)) best = j;
      predicted[i] = best;
      actual[i] = static_cast<int>(std::max_element(targets.begin() + static_cast<std::ptrdiff_t>(i) * k,
                                                    targets.begin() + static_cast<std::ptrdiff_t>(i + 1) * k) -
                                   (targets.begin() + static_cast<std::ptrdiff_t>(i) * k));
    }
    for (int c = 0; c < k; ++c) m.per_class_f1.emplace_back(task.class_names[c], f1_per_class(predicted, actual, c));
    const int positive = auc_positive.value_or(default_auc_positive(task));
    if (positive < 0 || positive >= k) throw Error(ErrorCode::InvalidClass, "auc positive class out of range");
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
      scores[i] = prob(i, positive);
      labels[i] = actual[i] == positive ? 1 : 0;
    }
    try {
      m.auc = auc(scores, labels);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingleClass) throw;
      m.auc = std::nan("");
    }
  } else {
    std::vector<double> unit_aucs;
    for (int j = 0; j < k; ++j) {
      std::vector<int> predicted(n), actual(n);
      std::vector<double> scores(n);
      for (int i = 0; i < n; ++i) {
        predicted[i] = prob(i, j) >= 0.5 ? 1 : 0;
        actual[i] = target(i, j) >= 0.5f ? 1 : 0;
        scores[i] = prob(i, j);
      }
      if (task.kind == TaskKind::MLMC && task.class_names[j] == "malignant") {
        m.per_class_f1.emplace_back("benign", f1_per_class(predicted, actual, 0));
      }
      m.per_class_f1.emplace_back(task.class_names[j], f1_per_class(predicted, actual, 1));
      try {
        unit_aucs.push_back(auc(scores, actual));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SingleClass) throw;
      }
    }
    m.auc = unit_aucs.empty() ? std::nan("")
                              : std::accumulate(unit_aucs.begin(), unit_aucs.end(), 0.0) /
                                    static_cast<double>(unit_aucs.size());
  }
  std::vector<double> f1s;
  for (const auto& [name, v] : m.per_class_f1) f1s.push_back(v);
  m.macro_f1 = macro_f1(f1s);
  return m;
}

}  // namespace mammo
