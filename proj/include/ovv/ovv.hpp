#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ovv/datasets.hpp"
#include "ovv/model.hpp"
#include "ovv/tensor.hpp"

namespace ovv {

// --- one-vote-veto self-training -------------------------------------------
//
// A frozen reference model scores m labeled references and m unlabeled
// targets. A target whose own prediction is confident collects one vote from
// every reference the model classifies correctly within the margin; the
// votes are contrastive predictions derived from the reference label and the
// pair dissimilarity q. The target keeps its self-predicted label only if
// the votes agree (at most `veto_tolerance` dissenters) and are confident.
// Qualified references and accepted targets form the per-batch fine-tuning
// pool for the trainable target model.

/// How the confidence requirement applies across a target's votes.
enum class VetoQuantifier {
  all_confident,  // every vote must be confident
  any_confident,  // at least one confident vote suffices
};

std::string_view to_string(VetoQuantifier q);
VetoQuantifier parse_veto_quantifier(std::string_view text);

struct OvvConfig {
  std::size_t veto_tolerance = 0;   // max dissenting qualified votes
  double confidence_margin = 0.01;  // in (0, 0.5)
  std::size_t batch_half_size = 20;
  VetoQuantifier veto_quantifier = VetoQuantifier::all_confident;
  bool require_consensus_match = false;

  void validate() const;
};

/// 1 iff p > 0.5.
int delta_threshold(double p);
/// |p_ref - q|: probability that the target is positive, seen from the reference.
double contrastive_prob(double p_ref, double q);
/// |delta(p_ref) - delta(q)|
int contrastive_label(double p_ref, double q);
/// |p_ref - y_ref| < margin
bool qualify_reference(double p_ref, int y_ref, double margin);
/// |p - 1/2| > 1/2 - margin
bool target_confident(double p, double margin);

/// Votes collected from the qualified references of one target.
struct VoteRecord {
  std::vector<int> labels;     // contrastive labels
  std::vector<double> probs;   // contrastive probabilities

  std::size_t qualified() const { return labels.size(); }
  std::size_t positive_votes() const;
};

enum class DecisionReason {
  accepted,
  target_unconfident,
  no_qualified_voters,
  dissent,
  unconfident_vote,
  consensus_mismatch,
};

std::string_view to_string(DecisionReason r);

struct PseudoLabelDecision {
  bool accepted = false;
  int label = 0;
  DecisionReason reason = DecisionReason::no_qualified_voters;
};

PseudoLabelDecision decide_pseudo_label(const VoteRecord& votes, int self_label, const OvvConfig& cfg);

// --- fine-tuning pool -------------------------------------------------------

enum class LabelOrigin { ground_truth, pseudo };

struct PoolEntry {
  std::string id;
  const std::vector<double>* features = nullptr;
  int label = 0;
  LabelOrigin origin = LabelOrigin::ground_truth;
};

/// Deduplicated by sample id; a ground-truth entry replaces a pseudo entry
/// with the same id, never the other way round.
class PseudoLabelPool {
 public:
  void insert(const std::string& id, const std::vector<double>& features, int label, LabelOrigin origin);

  const std::vector<PoolEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t count(LabelOrigin origin) const;
  ClassCounts class_counts() const;

 private:
  std::vector<PoolEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ModelRoles {
  TwinModel reference;  // frozen voter
  TwinModel target;     // trained
};

/// One record per target per batch.
struct DecisionRecord {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::string target_id;
  double p_target = 0.0;
  int self_label = 0;
  bool confident = false;
  VoteRecord votes;
  bool accepted = false;
  DecisionReason reason = DecisionReason::target_unconfident;
};

using DecisionSink = std::function<void(const DecisionRecord&)>;

struct FinetuneSettings {
  SgdConfig sgd;
  std::size_t epoch = 0;
  // Class-weight fallback when a pool holds a single class.
  double fallback_weight_cla = 0.5;
};

struct OvvEpochStats {
  std::size_t batches = 0;
  std::size_t skipped_batches = 0;  // empty pool, no step taken
  std::size_t confident_targets = 0;
  std::size_t qualified_references = 0;  // distinct per batch, summed
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t pool_entries = 0;  // summed over batches
  std::size_t accepted_positive = 0;
};

/// Evaluates every batch with the reference model, fine-tunes the target
/// model once per non-empty pool and leaves the reference untouched.
OvvEpochStats ovv_epoch(ModelRoles& roles, std::span<const LabeledSample> labeled,
                        std::span<const UnlabeledSample> unlabeled, std::span<const SslBatch> batches,
                        const OvvConfig& cfg, const FinetuneSettings& finetune, const DecisionSink& sink = {});

/// Replaces the reference with a copy of the target iff the target's
/// validation F-score is strictly higher. Returns whether it did.
bool promote_reference(ModelRoles& roles, double target_fsc, double reference_fsc);

}  // namespace ovv
