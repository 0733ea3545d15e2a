#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ovv/error.hpp"

namespace ovv {

struct Confusion {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + tn + fp + fn; }
  bool operator==(const Confusion&) const = default;
};

/// A sample is predicted positive iff score > threshold.
Confusion confusion(std::span<const int> labels, std::span<const double> scores, double threshold = 0.5);

/// Ratios whose denominator vanishes are left empty.
struct BasicMetrics {
  std::optional<double> acc;
  std::optional<double> pre;
  std::optional<double> rec;  // = sensitivity
  std::optional<double> spe;
  std::optional<double> fsc;
  std::optional<double> mcc;
  std::optional<double> iou;
};

BasicMetrics basic_metrics(const Confusion& c);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // scores >= threshold are called positive at this point
};

struct RocResult {
  std::vector<RocPoint> curve;  // from (0,0) to (1,1)
  double auroc = 0.0;
};

/// Threshold sweep over distinct scores; area by the trapezoid rule.
/// Throws unless both classes are present.
RocResult roc_and_auroc(std::span<const int> labels, std::span<const double> scores);
double auroc(std::span<const int> labels, std::span<const double> scores);

struct OperatingPoint {
  double sensitivity = 0.0;
  double specificity = 0.0;
  double threshold = 0.0;
  Confusion confusion;
};

/// Smallest score threshold whose specificity reaches `target_specificity`.
OperatingPoint sensitivity_at_specificity(std::span<const int> labels, std::span<const double> scores,
                                          double target_specificity);

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Percentile bootstrap interval for AUROC. Resamples that lose a class are
/// redrawn (at most 1000 times each).
Interval bootstrap_auroc_ci(std::span<const int> labels, std::span<const double> scores, std::size_t n_boot,
                            std::uint64_t seed, double level = 0.95);

/// Linear-interpolation (type 7) quantile of an ascending-sorted sample.
double quantile_sorted(std::span<const double> sorted, double q);

}  // namespace ovv
