#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "ovv/datasets.hpp"
#include "ovv/model.hpp"
#include "ovv/tensor.hpp"

namespace ovv {

/// Probabilities are clamped to [kProbEps, 1 - kProbEps] before any log.
inline constexpr double kProbEps = 1e-12;

/// Weights of the combined pair loss  L = lambda * L_cla + L_sim.
struct LossWeights {
  double cla = 0.5;
  double sim = 0.5;
  double lambda = 0.3;
};

// --- binary weights --------------------------------------------------------

/// n0 / (n0 + n1): share of the negative (majority) class. It multiplies the
/// positive-class log term, so the minority class gets the larger weight.
double weight_cla(const ClassCounts& counts);

/// (n0(n0-1) + n1(n1-1)) / (N(N-1)): probability that a uniformly drawn
/// unordered pair is same-class. It multiplies the cross-class log term.
double weight_sim(const ClassCounts& counts);

/// True when a binary weight is well defined but carries no balancing
/// information (one class is absent).
bool weights_degenerate(const ClassCounts& counts);

LossWeights make_loss_weights(const ClassCounts& counts, double lambda);

// --- binary losses (scalar reference forms) --------------------------------

double loss_cla(int y_i, int y_j, double p_i, double p_j, double w_cla);
double loss_sim(int y_i, int y_j, double q, double w_sim);
double loss_combined(int y_i, int y_j, double p_i, double p_j, double q, const LossWeights& w);

/// Mean over samples of  -(w y log p + (1 - w)(1 - y) log(1 - p)).
double loss_finetune(std::span<const int> labels, std::span<const double> probs, double w_cla);

// --- three-class extension --------------------------------------------------
//
// Similarity cases use the per-class codes s = (0, 1, 3): a pair's case is
// |s_i - s_j| for distinct classes (1, 2 or 3) and 4 for a same-class pair.

/// (N - n_e) / (2N) per class; sums to 1 for three classes.
std::array<double, 3> weight_cla_multiclass(const ClassCounts& counts);

/// c=1: 1 - 2 n1 n2 / (N(N-1))   c=2: 1 - 2 n2 n3 / (N(N-1))
/// c=3: 1 - 2 n1 n3 / (N(N-1))   c=4: 1 - sum n_w (n_w - 1) / (N(N-1))
/// Each entry is one minus the prevalence of its case among all pairs, so
/// the four entries sum to 3.
std::array<double, 4> weight_sim_multiclass(const ClassCounts& counts);

/// 1-based case index for classes given as 0, 1, 2.
int similarity_case(int class_i, int class_j);

/// -sum_e w_e (k_{e,i} log p_e(x_i) + k_{e,j} log p_e(x_j)); p vectors must be
/// normalised.
double loss_cla_multiclass(int class_i, int class_j, std::span<const double> p_i,
                           std::span<const double> p_j, const std::array<double, 3>& w);

/// -sum_c w_c h_c log q_c over the four cases; q must be normalised.
double loss_sim_multiclass(int class_i, int class_j, std::span<const double> q,
                           const std::array<double, 4>& w);

// --- differentiable forms used in training ----------------------------------

/// Mean over the pair batch of the combined loss; labels are {0, 1}.
Tensor pair_loss(const TwinModel::PairOutput& out, std::span<const int> y_i, std::span<const int> y_j,
                 const LossWeights& w);

/// Weighted cross-entropy of single-branch predictions, averaged.
Tensor finetune_loss(const Tensor& probs, std::span<const int> labels, double w_cla);

}  // namespace ovv
