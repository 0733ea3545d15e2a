#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "ovv/metrics.hpp"
#include "ovv/random.hpp"

using namespace ovv;

TEST_CASE("confusion counts") {
  const int labels[] = {1, 0};
  const double scores[] = {0.9, 0.1};
  CHECK(confusion(labels, scores, 0.5) == Confusion{1, 1, 0, 0});

  const int mixed[] = {1, 0, 1, 0};
  const double zeros[] = {0, 0, 0, 0};
  const auto c = confusion(mixed, zeros, 0.5);
  CHECK(c.tp == 0);
  CHECK(c.fp == 0);

  const double high[] = {1.0, 1.0, 0.99, 0.2};
  const auto none = confusion(mixed, high, 1.0);
  CHECK(none.tp + none.fp == 0);

  // Scores equal to the threshold are negative.
  const double at[] = {0.5, 0.5, 0.5, 0.5};
  CHECK(confusion(mixed, at, 0.5).tp == 0);

  const int bad_label[] = {2};
  const double one[] = {0.3};
  CHECK_THROWS_AS(confusion(bad_label, one), Error);
  const double two[] = {0.3, 0.4};
  CHECK_THROWS_AS(confusion(bad_label, two), Error);
}

TEST_CASE("basic metrics") {
  const auto perfect = basic_metrics({1, 1, 0, 0});
  CHECK(*perfect.acc == 1.0);
  CHECK(*perfect.fsc == 1.0);
  CHECK(*perfect.mcc == 1.0);
  CHECK(*perfect.iou == 1.0);

  // PRE 0.5, REC 1.0
  const auto half = basic_metrics({2, 5, 2, 0});
  CHECK(*half.pre == 0.5);
  CHECK(*half.rec == 1.0);
  CHECK(*half.fsc == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(*half.iou == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(*half.spe == doctest::Approx(5.0 / 7.0).epsilon(1e-15));

  const auto empty_pos = basic_metrics({0, 4, 0, 0});
  CHECK_FALSE(empty_pos.pre.has_value());
  CHECK_FALSE(empty_pos.rec.has_value());
  CHECK_FALSE(empty_pos.fsc.has_value());
  CHECK_FALSE(empty_pos.mcc.has_value());
  CHECK(*empty_pos.spe == 1.0);

  // Predictions and positives exist but never overlap.
  const auto miss = basic_metrics({0, 3, 2, 2});
  CHECK(*miss.pre == 0.0);
  CHECK(*miss.rec == 0.0);
  CHECK(*miss.fsc == 0.0);

  // MCC against the textbook formula.
  const auto m = basic_metrics({30, 50, 10, 20});
  const double expected = (30.0 * 50 - 10.0 * 20) / std::sqrt(40.0 * 50 * 60 * 70);
  CHECK(*m.mcc == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("AUROC anchors") {
  const int labels[] = {1, 1, 0, 0};
  const double separated[] = {0.9, 0.8, 0.1, 0.2};
  CHECK(auroc(labels, separated) == 1.0);
  const double overlap[] = {0.8, 0.4, 0.6, 0.2};
  CHECK(auroc(labels, overlap) == 0.75);
  const double flat[] = {0.3, 0.3, 0.3, 0.3};
  CHECK(auroc(labels, flat) == 0.5);

  const int single[] = {1, 1};
  const double s2[] = {0.1, 0.2};
  CHECK_THROWS_AS(auroc(single, s2), Error);
}

TEST_CASE("AUROC equals the rank probability") {
  Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.index(200);
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (std::size_t k = 0; k < n; ++k) {
      y[k] = static_cast<int>(rng.index(2));
      // Coarse scores force plenty of ties.
      s[k] = trial % 2 ? std::round(rng.uniform() * 10.0) / 10.0 : rng.uniform();
    }
    y[0] = 0;
    y[1] = 1;
    CHECK(std::fabs(auroc(y, s) - oracle::auroc(y, s)) <= 1e-12);
  }
}

TEST_CASE("ROC curve shape") {
  const int labels[] = {1, 0, 1, 0, 1};
  const double scores[] = {0.9, 0.7, 0.7, 0.2, 0.1};
  const auto roc = roc_and_auroc(labels, scores);
  REQUIRE(roc.curve.size() >= 2);
  CHECK(roc.curve.front().fpr == 0.0);
  CHECK(roc.curve.front().tpr == 0.0);
  CHECK(roc.curve.back().fpr == 1.0);
  CHECK(roc.curve.back().tpr == 1.0);
  for (std::size_t k = 1; k < roc.curve.size(); ++k) {
    CHECK(roc.curve[k].fpr >= roc.curve[k - 1].fpr);
    CHECK(roc.curve[k].tpr >= roc.curve[k - 1].tpr);
  }
  const std::vector<int> yv(labels, labels + 5);
  const std::vector<double> sv(scores, scores + 5);
  CHECK(roc.auroc == doctest::Approx(oracle::auroc(yv, sv)).epsilon(1e-15));
}

TEST_CASE("sensitivity at fixed specificity") {
  const int labels[] = {1, 1, 0, 0, 0};
  const double separated[] = {0.9, 0.8, 0.1, 0.2, 0.3};
  CHECK(sensitivity_at_specificity(labels, separated, 0.90).sensitivity == 1.0);
  CHECK(sensitivity_at_specificity(labels, separated, 0.95).sensitivity == 1.0);

  // Ten negatives, nine of them at or below 0.5.
  std::vector<int> y(10, 0);
  std::vector<double> s = {0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.5, 0.9};
  for (double p : {0.95, 0.6, 0.45}) {
    y.push_back(1);
    s.push_back(p);
  }
  const auto op = sensitivity_at_specificity(y, s, 0.90);
  CHECK(op.threshold == 0.5);
  CHECK(op.specificity == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(op.sensitivity == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  // Ties: the smallest qualifying threshold is chosen every time.
  const int ty[] = {0, 0, 0, 0, 1, 1};
  const double ts[] = {0.4, 0.4, 0.4, 0.4, 0.4, 0.8};
  const auto a = sensitivity_at_specificity(ty, ts, 0.5);
  const auto b = sensitivity_at_specificity(ty, ts, 0.5);
  CHECK(a.threshold == 0.4);
  CHECK(a.threshold == b.threshold);
  CHECK(a.specificity == 1.0);
  CHECK(a.sensitivity == 0.5);
}

TEST_CASE("bootstrap interval") {
  const std::vector<int> y = {1, 1, 1, 0, 0, 0, 0};
  const std::vector<double> perfect = {0.9, 0.8, 0.7, 0.3, 0.2, 0.1, 0.0};
  const auto ci = bootstrap_auroc_ci(y, perfect, 200, 5);
  CHECK(ci.low == 1.0);
  CHECK(ci.high == 1.0);

  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 20 + rng.index(80);
    std::vector<int> labels(n);
    std::vector<double> scores(n);
    for (std::size_t k = 0; k < n; ++k) {
      labels[k] = k < n / 4 ? 1 : 0;
      scores[k] = rng.uniform() + 0.3 * labels[k];
    }
    const double point = auroc(labels, scores);
    const auto iv = bootstrap_auroc_ci(labels, scores, 200, trial);
    CHECK(iv.low <= point);
    CHECK(iv.high >= point);
    const auto again = bootstrap_auroc_ci(labels, scores, 200, trial);
    CHECK(again.low == iv.low);
    CHECK(again.high == iv.high);
  }
  CHECK_THROWS_AS(bootstrap_auroc_ci(y, perfect, 50, 1), Error);
}

TEST_CASE("type-7 quantile") {
  const double v[] = {1, 2, 3, 4};
  CHECK(quantile_sorted(v, 0.0) == 1.0);
  CHECK(quantile_sorted(v, 1.0) == 4.0);
  CHECK(quantile_sorted(v, 0.5) == 2.5);
  CHECK(quantile_sorted(v, 0.25) == doctest::Approx(1.75));
}
