#include "ovv/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

namespace ovv {

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }
double safe_log(double p) { return std::log(clamp_prob(p)); }
double safe_log1m(double p) { return std::log(1.0 - clamp_prob(p)); }

void require_binary(const ClassCounts& c, const char* who) {
  if (c.n.size() != 2) {
    throw Error(ErrorCategory::invalid_argument, std::string(who) + ": expected two class counts");
  }
}

void require_three(const ClassCounts& c, const char* who) {
  if (c.n.size() != 3) {
    throw Error(ErrorCategory::invalid_argument, std::string(who) + ": defined for exactly three classes");
  }
}

void require_label(int y, const char* who) {
  if (y != 0 && y != 1) throw Error(ErrorCategory::invalid_argument, std::string(who) + ": labels must be 0 or 1");
}

void require_normalised(std::span<const double> p, std::size_t size, const char* who) {
  if (p.size() != size) {
    throw Error(ErrorCategory::shape_mismatch,
                std::string(who) + ": expected " + std::to_string(size) + " probabilities");
  }
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCategory::invalid_argument, std::string(who) + ": probability outside [0, 1]");
    total += v;
  }
  if (std::fabs(total - 1.0) > 1e-9) {
    throw Error(ErrorCategory::invalid_argument, std::string(who) + ": probabilities do not sum to 1");
  }
}

}  // namespace

double weight_cla(const ClassCounts& counts) {
  require_binary(counts, "weight_cla");
  const auto total = counts.total();
  if (total == 0) throw Error(ErrorCategory::invalid_argument, "weight_cla: no samples");
  return static_cast<double>(counts[0]) / static_cast<double>(total);
}

double weight_sim(const ClassCounts& counts) {
  require_binary(counts, "weight_sim");
  const double n0 = static_cast<double>(counts[0]);
  const double n1 = static_cast<double>(counts[1]);
  const double n = n0 + n1;
  if (counts.total() < 2) throw Error(ErrorCategory::invalid_argument, "weight_sim: need at least two samples");
  return (n0 * (n0 - 1.0) + n1 * (n1 - 1.0)) / (n * (n - 1.0));
}

bool weights_degenerate(const ClassCounts& counts) {
  return std::count_if(counts.n.begin(), counts.n.end(), [](std::size_t c) { return c > 0; }) < 2;
}

LossWeights make_loss_weights(const ClassCounts& counts, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorCategory::config, "lambda must be non-negative");
  return {weight_cla(counts), weight_sim(counts), lambda};
}

double loss_cla(int y_i, int y_j, double p_i, double p_j, double w_cla) {
  require_label(y_i, "loss_cla");
  require_label(y_j, "loss_cla");
  return -(w_cla * (y_i * safe_log(p_i) + y_j * safe_log(p_j)) +
           (1.0 - w_cla) * ((1 - y_i) * safe_log1m(p_i) + (1 - y_j) * safe_log1m(p_j)));
}

double loss_sim(int y_i, int y_j, double q, double w_sim) {
  require_label(y_i, "loss_sim");
  require_label(y_j, "loss_sim");
  const int differ = std::abs(y_i - y_j);
  return -(w_sim * differ * safe_log(q) + (1.0 - w_sim) * (1 - differ) * safe_log1m(q));
}

double loss_combined(int y_i, int y_j, double p_i, double p_j, double q, const LossWeights& w) {
  return w.lambda * loss_cla(y_i, y_j, p_i, p_j, w.cla) + loss_sim(y_i, y_j, q, w.sim);
}

double loss_finetune(std::span<const int> labels, std::span<const double> probs, double w_cla) {
  if (labels.size() != probs.size()) throw Error(ErrorCategory::shape_mismatch, "loss_finetune: length mismatch");
  if (labels.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    require_label(labels[k], "loss_finetune");
    total -= w_cla * labels[k] * safe_log(probs[k]) + (1.0 - w_cla) * (1 - labels[k]) * safe_log1m(probs[k]);
  }
  return total / static_cast<double>(labels.size());
}

std::array<double, 3> weight_cla_multiclass(const ClassCounts& counts) {
  require_three(counts, "weight_cla_multiclass");
  const double n = static_cast<double>(counts.total());
  if (n == 0.0) throw Error(ErrorCategory::invalid_argument, "weight_cla_multiclass: no samples");
  std::array<double, 3> w{};
  for (std::size_t e = 0; e < 3; ++e) w[e] = (n - static_cast<double>(counts[e])) / (2.0 * n);
  return w;
}

std::array<double, 4> weight_sim_multiclass(const ClassCounts& counts) {
  require_three(counts, "weight_sim_multiclass");
  if (counts.total() < 2) throw Error(ErrorCategory::invalid_argument, "weight_sim_multiclass: need at least two samples");
  const double n1 = static_cast<double>(counts[0]);
  const double n2 = static_cast<double>(counts[1]);
  const double n3 = static_cast<double>(counts[2]);
  const double n = n1 + n2 + n3;
  const double pairs = n * (n - 1.0);
  return {
      1.0 - 2.0 * n1 * n2 / pairs,
      1.0 - 2.0 * n2 * n3 / pairs,
      1.0 - 2.0 * n1 * n3 / pairs,
      1.0 - (n1 * (n1 - 1.0) + n2 * (n2 - 1.0) + n3 * (n3 - 1.0)) / pairs,
  };
}

int similarity_case(int class_i, int class_j) {
  static constexpr int kCode[3] = {0, 1, 3};
  if (class_i < 0 || class_i > 2 || class_j < 0 || class_j > 2) {
    throw Error(ErrorCategory::invalid_argument, "similarity_case: classes must be 0, 1 or 2");
  }
  const int d = std::abs(kCode[class_i] - kCode[class_j]);
  return d == 0 ? 4 : d;
}

double loss_cla_multiclass(int class_i, int class_j, std::span<const double> p_i, std::span<const double> p_j,
                           const std::array<double, 3>& w) {
  require_normalised(p_i, 3, "loss_cla_multiclass");
  require_normalised(p_j, 3, "loss_cla_multiclass");
  if (class_i < 0 || class_i > 2 || class_j < 0 || class_j > 2) {
    throw Error(ErrorCategory::invalid_argument, "loss_cla_multiclass: classes must be 0, 1 or 2");
  }
  // Only the true-class terms survive the one-hot indicators.
  return -(w[class_i] * safe_log(p_i[class_i]) + w[class_j] * safe_log(p_j[class_j]));
}

double loss_sim_multiclass(int class_i, int class_j, std::span<const double> q, const std::array<double, 4>& w) {
  require_normalised(q, 4, "loss_sim_multiclass");
  const int c = similarity_case(class_i, class_j) - 1;
  return -w[c] * safe_log(q[c]);
}

Tensor pair_loss(const TwinModel::PairOutput& out, std::span<const int> y_i, std::span<const int> y_j,
                 const LossWeights& w) {
  const std::size_t n = y_i.size();
  if (y_j.size() != n || out.p_i.size() != n || out.p_j.size() != n || out.q.size() != n) {
    throw Error(ErrorCategory::shape_mismatch, "pair_loss: label and output counts differ");
  }
  if (n == 0) throw Error(ErrorCategory::invalid_argument, "pair_loss: empty batch");
  std::vector<double> ti(n), tj(n), differ(n);
  for (std::size_t k = 0; k < n; ++k) {
    require_label(y_i[k], "pair_loss");
    require_label(y_j[k], "pair_loss");
    ti[k] = y_i[k];
    tj[k] = y_j[k];
    differ[k] = std::abs(y_i[k] - y_j[k]);
  }
  const Tensor cla = add(binary_cross_entropy_sum(out.p_i, ti, w.cla, 1.0 - w.cla, kProbEps),
                         binary_cross_entropy_sum(out.p_j, tj, w.cla, 1.0 - w.cla, kProbEps));
  const Tensor sim = binary_cross_entropy_sum(out.q, differ, w.sim, 1.0 - w.sim, kProbEps);
  return scale(add(scale(cla, w.lambda), sim), 1.0 / static_cast<double>(n));
}

Tensor finetune_loss(const Tensor& probs, std::span<const int> labels, double w_cla) {
  if (labels.empty()) throw Error(ErrorCategory::invalid_argument, "finetune_loss: empty batch");
  std::vector<double> t(labels.size());
  for (std::size_t k = 0; k < labels.size(); ++k) {
    require_label(labels[k], "finetune_loss");
    t[k] = labels[k];
  }
  return scale(binary_cross_entropy_sum(probs, t, w_cla, 1.0 - w_cla, kProbEps),
               1.0 / static_cast<double>(labels.size()));
}

}  // namespace ovv
