#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ovv/datasets.hpp"
#include "ovv/metrics.hpp"
#include "ovv/model.hpp"
#include "ovv/ovv.hpp"

namespace ovv {

enum class Mode { supervised, lowshot, ovv, eval };

std::string_view to_string(Mode mode);

/// Every experiment knob. Training defaults: lambda 0.3, patience 30,
/// lr 0.001, kappa1 0, kappa2 0.01, m 20, VAD.
struct ExperimentConfig {
  Mode mode = Mode::lowshot;

  // Data: synthetic unless `index` is set.
  std::string index;
  std::uint64_t data_seed = 1;
  std::size_t dim = 16;
  double separation = 2.5;
  double noise = 1.0;
  std::size_t modes = 1;
  double mode_spread = 0.0;
  std::size_t patients_per_class = 0;
  std::size_t train_n0 = 995;
  std::size_t train_n1 = 152;
  std::size_t val_n0 = 400;
  std::size_t val_n1 = 60;
  std::size_t test_n0 = 2000;
  std::size_t test_n1 = 300;
  std::size_t unlabeled_n0 = 8700;
  std::size_t unlabeled_n1 = 1300;
  bool one_per_patient = true;

  // Model.
  std::size_t hidden_dim = 64;
  std::size_t embedding_dim = 32;
  Phi phi = Phi::vad;

  // Optimisation.
  double lambda = 0.3;
  double lr = 0.001;
  std::size_t decay_epoch = 100;
  double decay_factor = 0.98;
  std::size_t max_epochs = 200;
  std::size_t patience = 30;
  std::size_t batch_size = 32;       // samples per step (supervised)
  std::size_t pairs_per_epoch = 0;   // 0: one pair per training sample
  std::size_t pair_batch = 32;       // pairs per step (low-shot)
  bool balance_pairs = false;

  // Self-training.
  std::size_t kappa1 = 0;
  double kappa2 = 0.01;
  std::size_t m = 20;
  VetoQuantifier veto_quantifier = VetoQuantifier::all_confident;
  bool require_consensus_match = false;
  std::string checkpoint;  // pretrained model (ovv) or model to evaluate (eval)
  bool decision_log = true;

  // Reporting.
  std::size_t bootstrap = 1000;
  std::string eval_split = "test";

  std::uint64_t seed = 1;
  std::string out_dir = "run";

  void validate() const;
  ModelDims model_dims(std::size_t input_dim) const;
  SgdConfig sgd() const;
  OvvConfig ovv() const;
};

/// Keys accepted in config files and as `--key value` flags.
std::vector<std::string> config_keys();
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
/// Flat `key = value` lines; `#` starts a comment.
void apply_config_file(ExperimentConfig& cfg, const std::filesystem::path& path);
/// Resolved configuration in the same flat format, keys in fixed order.
std::string format_config(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------

struct ExperimentData {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> validation;
  std::vector<LabeledSample> test;
  std::vector<UnlabeledSample> unlabeled;
  // Hidden labels of the unlabeled pool when known (synthetic data only).
  std::map<std::string, int> unlabeled_truth;
};

/// Builds all partitions, applying the one-sample-per-patient reduction to
/// the labeled training split when configured.
ExperimentData load_experiment_data(const ExperimentConfig& cfg);

/// Writes the synthetic partitions as an index CSV plus raw feature files.
void export_synthetic(const ExperimentConfig& cfg, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------

/// Stop iff the best value occurred more than `patience` entries ago.
/// Only a strict increase counts as a new best.
enum class StopDecision { proceed, stop };
StopDecision early_stopper(std::span<const double> history, std::size_t patience);

std::vector<double> predict_probabilities(const TwinModel& model, std::span<const LabeledSample> samples);
/// F-score at the 0.5 operating point; 0 when undefined.
double validation_fsc(const TwinModel& model, std::span<const LabeledSample> samples);

struct MetricsReport {
  std::string model;
  std::string split;
  std::size_t n = 0;
  std::size_t positives = 0;
  Confusion confusion;
  BasicMetrics basic;
  std::optional<double> auroc;
  std::optional<Interval> auroc_ci;
  std::string auroc_note;  // why AUROC is absent
  std::optional<OperatingPoint> at_spe90;
  std::optional<OperatingPoint> at_spe95;
};

MetricsReport evaluate(const TwinModel& model, std::span<const LabeledSample> samples, const std::string& model_name,
                       const std::string& split, std::size_t n_boot, std::uint64_t seed);

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& r);
std::string metrics_json_line(const MetricsReport& r);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_fsc = 0.0;
};

struct OvvEpochRecord {
  std::size_t epoch = 0;
  OvvEpochStats stats;
  double target_fsc = 0.0;
  double reference_fsc = 0.0;
  bool promoted = false;
};

struct TrainResult {
  TwinModel model;             // best by validation F-score
  std::size_t best_epoch = 0;  // 0 = the starting model
  double best_val_fsc = 0.0;
  bool stopped_early = false;
  std::vector<EpochRecord> history;
  std::vector<OvvEpochRecord> ovv_history;
  std::uint64_t pairs_total = 0;
  std::uint64_t pairs_cross_patient = 0;
};

/// Single-branch classifier (backbone + classification head) trained with
/// the class-weighted cross-entropy.
TrainResult train_supervised(const ExperimentConfig& cfg, const ExperimentData& data);

/// Twin network trained on freshly drawn cross-patient pairs every epoch.
TrainResult train_lowshot(const ExperimentConfig& cfg, const ExperimentData& data);

/// One-vote-veto fine-tuning of `pretrained`; reference promotion and early
/// stopping once per epoch. `sink` receives every decision record.
TrainResult train_ovv(const ExperimentConfig& cfg, const ExperimentData& data, const TwinModel& pretrained,
                      const DecisionSink& sink = {});

// ---------------------------------------------------------------------------
// Whole runs with artifacts written to cfg.out_dir:
//   config.txt, metrics.csv, metrics.jsonl, model.ovvm, history.csv
//   lowshot: pairs.json     ovv: decisions.jsonl, acceptance.csv

struct RunOutcome {
  TrainResult result;
  std::vector<MetricsReport> reports;
};

RunOutcome run_supervised(const ExperimentConfig& cfg);
RunOutcome run_lowshot(const ExperimentConfig& cfg);
RunOutcome run_ovv(const ExperimentConfig& cfg);
std::vector<MetricsReport> run_evaluate(const ExperimentConfig& cfg);

}  // namespace ovv
