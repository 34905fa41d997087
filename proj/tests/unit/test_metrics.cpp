#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mammo/error.hpp"
#include "mammo/losses.hpp"
#include "mammo/metrics.hpp"
#include "mammo/rng.hpp"

using namespace mammo;

namespace {

double f1_oracle(const std::vector<int>& pred, const std::vector<int>& act, int cls) {
  int both = 0, predicted = 0, actual = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    both += pred[i] == cls && act[i] == cls;
    predicted += pred[i] == cls;
    actual += act[i] == cls;
  }
  // 2TP / (2TP + FP + FN) with FP = predicted - TP, FN = actual - TP
  return predicted + actual == 0 ? 0.0 : static_cast<double>(2 * both) / static_cast<double>(predicted + actual);
}

double auc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  int pos = 0, neg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    pos += y[i] == 1;
    neg += y[i] == 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / (static_cast<double>(pos) * neg);
}

std::vector<int> labels_from(unsigned code, int n, int base) {
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) {
    out[i] = static_cast<int>(code % base);
    code /= base;
  }
  return out;
}

template <typename F>
ErrorCode error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::IoFailure;
}

}  // namespace

TEST_CASE("f1 equals brute force over all binary labelings", "[metrics]") {
  for (int n = 1; n <= 7; ++n) {
    const unsigned total = 1u << n;
    for (unsigned pc = 0; pc < total; ++pc) {
      const auto pred = labels_from(pc, n, 2);
      for (unsigned ac = 0; ac < total; ++ac) {
        const auto act = labels_from(ac, n, 2);
        for (int cls = 0; cls < 2; ++cls) REQUIRE(f1_per_class(pred, act, cls) == f1_oracle(pred, act, cls));
      }
    }
  }
}

TEST_CASE("f1 equals brute force over all three-class labelings", "[metrics]") {
  for (int n = 1; n <= 4; ++n) {
    unsigned total = 1;
    for (int i = 0; i < n; ++i) total *= 3;
    for (unsigned pc = 0; pc < total; ++pc)
      for (unsigned ac = 0; ac < total; ++ac) {
        const auto pred = labels_from(pc, n, 3), act = labels_from(ac, n, 3);
        for (int cls = 0; cls < 3; ++cls) REQUIRE(f1_per_class(pred, act, cls) == f1_oracle(pred, act, cls));
      }
  }
}

TEST_CASE("auc equals brute force over all labelings", "[metrics]") {
  for (int n = 2; n <= 12; ++n) {
    std::vector<double> tied(n), distinct(n);
    for (int i = 0; i < n; ++i) {
      tied[i] = static_cast<double>((i * 7) % 4) / 3.0;
      distinct[i] = static_cast<double>((i * 5) % 13) * 0.1;
    }
    for (unsigned code = 0; code < (1u << n); ++code) {
      const auto y = labels_from(code, n, 2);
      const int pos = static_cast<int>(std::count(y.begin(), y.end(), 1));
      if (pos == 0 || pos == n) {
        CHECK(error_of([&] { auc(tied, y); }) == ErrorCode::SingleClass);
        continue;
      }
      REQUIRE(auc(tied, y) == auc_oracle(tied, y));
      REQUIRE(auc(distinct, y) == auc_oracle(distinct, y));
    }
  }
}

TEST_CASE("metric edge cases", "[metrics]") {
  const std::vector<int> a{0, 1}, b{0};
  CHECK(error_of([&] { f1_per_class(a, b, 0); }) == ErrorCode::LengthMismatch);
  CHECK(error_of([&] { f1_per_class(std::vector<int>{}, std::vector<int>{}, 0); }) == ErrorCode::LengthMismatch);
  CHECK(f1_per_class(std::vector<int>{1, 1}, std::vector<int>{1, 1}, 0) == 0.0);
  const std::vector<double> per{0.8188, 0.5199};
  CHECK(macro_f1(per) == Catch::Approx(0.66935));
  const std::vector<double> sc{0.1, 0.9};
  CHECK(auc(sc, std::vector<int>{0, 1}) == 1.0);
  CHECK(auc(sc, std::vector<int>{1, 0}) == 0.0);
  CHECK(error_of([&] { auc(sc, std::vector<int>{1}); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("summaries and the paired t-test match scipy", "[metrics]") {
  const std::vector<double> two{0.6, 0.7};
  CHECK(summarize(two).mean == Catch::Approx(0.65));
  CHECK(summarize(two).std == Catch::Approx(0.07071067811865474).epsilon(1e-12));
  CHECK(summarize(std::vector<double>{0.4}).std == 0.0);

  // scipy.stats.ttest_rel
  const std::vector<double> a{0.1, 0.4, 0.35, 0.8, 0.2}, b{0.15, 0.38, 0.5, 0.85, 0.3};
  const auto r = paired_t_test(a, b);
  CHECK(r.t_statistic == Catch::Approx(-2.3247508471319436).epsilon(1e-10));
  CHECK(r.p_two_tailed == Catch::Approx(0.08071506562895511).epsilon(1e-8));
  CHECK(r.n_pairs == 5);
  const std::vector<double> c{0.6193, 0.6551, 0.6902, 0.6788, 0.7012}, d{0.4213, 0.5320, 0.4511, 0.5566, 0.5325};
  const auto r2 = paired_t_test(c, d);
  CHECK(r2.t_statistic == Catch::Approx(7.595509755220582).epsilon(1e-10));
  CHECK(r2.p_two_tailed == Catch::Approx(0.001611882215299322).epsilon(1e-8));

  const std::vector<double> e{0.5, 0.6, 0.7}, f{0.4, 0.5, 0.6};
  CHECK(error_of([&] { paired_t_test(e, f); }) == ErrorCode::DegenerateVariance);
  CHECK(error_of([&] { paired_t_test(e, two); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("fold aggregation", "[metrics]") {
  std::vector<FoldMetrics> folds(2);
  folds[0].per_class_f1 = {{"luminal", 0.6}, {"non-luminal", 0.4}};
  folds[0].macro_f1 = 0.5;
  folds[0].auc = 0.6;
  folds[1].fold = 1;
  folds[1].per_class_f1 = {{"luminal", 0.7}, {"non-luminal", 0.5}};
  folds[1].macro_f1 = 0.6;
  folds[1].auc = 0.7;
  const auto rep = aggregate_folds(folds);
  CHECK(rep.per_class_f1[0].first == "luminal");
  CHECK(rep.per_class_f1[0].second.mean == Catch::Approx(0.65));
  CHECK(rep.macro_f1.std == Catch::Approx(0.07071067811865474));
  folds[1].per_class_f1[1].first = "other";
  CHECK(error_of([&] { aggregate_folds(folds); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("score_predictions decision rules", "[metrics]") {
  const auto lum = TaskSpec::make(TaskKind::BaselineLuminal);
  Tensor p({4, 2});
  p.data = {0.9f, 0.1f, 0.3f, 0.7f, 0.6f, 0.4f, 0.2f, 0.8f};
  const std::vector<float> t{1, 0, 0, 1, 0, 1, 0, 1};
  const auto fm = score_predictions(lum, p, t);
  CHECK(fm.per_class_f1.size() == 2);
  CHECK(fm.per_class_f1[0].second == Catch::Approx(2.0 / 3.0));
  CHECK(fm.per_class_f1[1].second == Catch::Approx(0.8));
  CHECK(fm.macro_f1 == Catch::Approx((2.0 / 3.0 + 0.8) / 2));
  CHECK(default_auc_positive(lum) == 0);
  CHECK(fm.auc == Catch::Approx(1.0));

  const auto mlmc = TaskSpec::make(TaskKind::MLMC);
  Tensor q({2, 3});
  q.data = {0.9f, 0.2f, 0.7f, 0.1f, 0.6f, 0.4f};
  const std::vector<float> tq{1, 0, 1, 0, 1, 0};
  const auto fq = score_predictions(mlmc, q, tq);
  REQUIRE(fq.per_class_f1.size() == 4);
  CHECK(fq.per_class_f1[2].first == "benign");
  for (const auto& [name, v] : fq.per_class_f1) CHECK(v == 1.0);
  CHECK(fq.auc == Catch::Approx(1.0));
}

TEST_CASE("loss values and gradients", "[metrics]") {
  Tensor logits({1, 2});
  logits.data = {10.0f, -10.0f};
  CHECK(cross_entropy(logits, std::vector<int>{0}) == Catch::Approx(2.061153620314381e-09).epsilon(1e-6));
  Tensor z({1, 1}, 2.0f), one({1, 1}, 1.0f), zero({1, 1}, 0.0f);
  CHECK(binary_cross_entropy(z, one) == Catch::Approx(0.12692801104297263).epsilon(1e-7));
  Tensor big({1, 2});
  big.data = {1000.0f, -1000.0f};
  Tensor tb({1, 2});
  tb.data = {0.0f, 1.0f};
  CHECK(binary_cross_entropy(big, tb) == Catch::Approx(1000.0));
  CHECK(std::isfinite(cross_entropy(big, std::vector<int>{1})));

  Pcg32 rng(3, 3);
  Tensor l({3, 2}), t({3, 2});
  for (auto& v : l.data) v = static_cast<float>(rng.normal());
  for (auto& v : t.data) v = static_cast<float>(rng.bernoulli(0.5));
  const std::vector<int> y{0, 1, 1};
  const auto ce = cross_entropy_with_grad(l, y);
  const auto bce = binary_cross_entropy_with_grad(l, t);
  CHECK(ce.loss == Catch::Approx(cross_entropy(l, y)));
  for (std::size_t i = 0; i < l.numel(); ++i) {
    Tensor lp = l, lm = l;
    lp[i] += 1e-3f;
    lm[i] -= 1e-3f;
    CHECK(ce.grad[i] == Catch::Approx((cross_entropy(lp, y) - cross_entropy(lm, y)) / 2e-3).margin(2e-4));
    CHECK(bce.grad[i] ==
          Catch::Approx((binary_cross_entropy(lp, t) - binary_cross_entropy(lm, t)) / 2e-3).margin(2e-4));
  }
  CHECK(error_of([&] { cross_entropy(l, std::vector<int>{0, 2, 1}); }) == ErrorCode::ShapeMismatch);
  CHECK(error_of([&] { binary_cross_entropy(l, Tensor({2, 3})); }) == ErrorCode::ShapeMismatch);
}
