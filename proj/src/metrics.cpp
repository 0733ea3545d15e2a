#include "ovv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ovv/error.hpp"
#include "ovv/random.hpp"

namespace ovv {

namespace {

void check_inputs(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) {
    throw Error(ErrorCategory::shape_mismatch, "metrics: " + std::to_string(labels.size()) + " labels vs " +
                                                   std::to_string(scores.size()) + " scores");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw Error(ErrorCategory::invalid_argument, "metrics: labels must be 0 or 1");
  }
}

std::optional<double> ratio(double num, double den) {
  if (den == 0.0) return std::nullopt;
  return num / den;
}

}  // namespace

Confusion confusion(std::span<const int> labels, std::span<const double> scores, double threshold) {
  check_inputs(labels, scores);
  Confusion c;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const bool predicted = scores[k] > threshold;
    if (labels[k] == 1) {
      predicted ? ++c.tp : ++c.fn;
    } else {
      predicted ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

BasicMetrics basic_metrics(const Confusion& c) {
  const auto tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
  const auto fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  BasicMetrics m;
  m.acc = ratio(tp + tn, tp + tn + fp + fn);
  m.pre = ratio(tp, tp + fp);
  m.rec = ratio(tp, tp + fn);
  m.spe = ratio(tn, tn + fp);
  if (m.pre && m.rec) {
    // PRE = REC = 0 is the limit case of the harmonic mean: Fsc = 0.
    const double s = *m.pre + *m.rec;
    m.fsc = s == 0.0 ? 0.0 : 2.0 * *m.pre * *m.rec / s;
  }
  const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (den > 0.0) m.mcc = (tp * tn - fp * fn) / std::sqrt(den);
  m.iou = ratio(tp, tp + fp + fn);
  return m;
}

RocResult roc_and_auroc(std::span<const int> labels, std::span<const double> scores) {
  check_inputs(labels, scores);
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw Error(ErrorCategory::data, "AUROC undefined: only one class present");

  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult r;
  r.curve.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0;
  double area = 0.0;
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores[order[k]];
    std::size_t group_tp = 0, group_fp = 0;
    for (; k < order.size() && scores[order[k]] == s; ++k) labels[order[k]] == 1 ? ++group_tp : ++group_fp;
    // Trapezoid over the group: exact half credit for tied pairs.
    area += static_cast<double>(group_fp) * (static_cast<double>(tp) + 0.5 * static_cast<double>(group_tp));
    tp += group_tp;
    fp += group_fp;
    r.curve.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                       static_cast<double>(tp) / static_cast<double>(pos), s});
  }
  r.auroc = area / (static_cast<double>(pos) * static_cast<double>(neg));
  return r;
}

double auroc(std::span<const int> labels, std::span<const double> scores) {
  return roc_and_auroc(labels, scores).auroc;
}

OperatingPoint sensitivity_at_specificity(std::span<const int> labels, std::span<const double> scores,
                                          double target_specificity) {
  check_inputs(labels, scores);
  if (!(target_specificity > 0.0 && target_specificity <= 1.0)) {
    throw Error(ErrorCategory::invalid_argument, "target specificity must lie in (0, 1]");
  }
  std::vector<double> negatives;
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (labels[k] == 0) negatives.push_back(scores[k]);
  if (negatives.empty()) throw Error(ErrorCategory::data, "specificity target unreachable: no negatives");
  std::sort(negatives.begin(), negatives.end());

  // Specificity at threshold t is #(neg <= t) / #neg, so the smallest
  // qualifying t is the needed-th smallest negative score.
  const auto n = static_cast<double>(negatives.size());
  auto needed = static_cast<std::size_t>(std::ceil(target_specificity * n - 1e-9));
  needed = std::clamp<std::size_t>(needed, 1, negatives.size());
  const double threshold = negatives[needed - 1];

  OperatingPoint op;
  op.threshold = threshold;
  op.confusion = confusion(labels, scores, threshold);
  const auto m = basic_metrics(op.confusion);
  op.specificity = m.spe.value_or(0.0);
  if (!m.rec) throw Error(ErrorCategory::data, "sensitivity undefined: no positives");
  op.sensitivity = *m.rec;
  return op;
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(ErrorCategory::invalid_argument, "quantile of empty sample");
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Interval bootstrap_auroc_ci(std::span<const int> labels, std::span<const double> scores, std::size_t n_boot,
                            std::uint64_t seed, double level) {
  check_inputs(labels, scores);
  if (n_boot < 100) throw Error(ErrorCategory::invalid_argument, "bootstrap needs at least 100 resamples");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCategory::invalid_argument, "confidence level must be in (0, 1)");
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0 || static_cast<std::size_t>(pos) == labels.size()) {
    throw Error(ErrorCategory::data, "AUROC undefined: only one class present");
  }

  constexpr std::size_t kMaxRedraws = 1000;
  const std::size_t n = labels.size();
  std::vector<double> stats;
  stats.reserve(n_boot);
  std::vector<int> yb(n);
  std::vector<double> sb(n);
  for (std::size_t b = 0; b < n_boot; ++b) {
    Rng rng(derive_seed(seed, b));
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt == kMaxRedraws) throw Error(ErrorCategory::data, "bootstrap: resamples keep losing a class");
      std::size_t npos = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const auto idx = rng.index(n);
        yb[k] = labels[idx];
        sb[k] = scores[idx];
        npos += static_cast<std::size_t>(yb[k]);
      }
      if (npos > 0 && npos < n) break;
    }
    stats.push_back(auroc(yb, sb));
  }
  std::sort(stats.begin(), stats.end());
  const double tail = (1.0 - level) / 2.0;
  return {quantile_sorted(stats, tail), quantile_sorted(stats, 1.0 - tail)};
}

}  // namespace ovv
