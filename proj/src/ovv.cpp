#include "ovv/ovv.hpp"

#include <cmath>

#include "ovv/losses.hpp"

namespace ovv {

std::string_view to_string(VetoQuantifier q) {
  return q == VetoQuantifier::all_confident ? "all-confident" : "any-confident";
}

VetoQuantifier parse_veto_quantifier(std::string_view text) {
  if (text == "all-confident" || text == "all") return VetoQuantifier::all_confident;
  if (text == "any-confident" || text == "any") return VetoQuantifier::any_confident;
  throw Error(ErrorCategory::config, "unknown veto quantifier '" + std::string(text) + "'");
}

void OvvConfig::validate() const {
  if (!(confidence_margin > 0.0 && confidence_margin < 0.5)) {
    throw Error(ErrorCategory::config, "kappa2 (confidence margin) must lie in (0, 0.5)");
  }
  if (batch_half_size == 0) throw Error(ErrorCategory::config, "m (batch half-size) must be >= 1");
}

int delta_threshold(double p) { return p > 0.5 ? 1 : 0; }

double contrastive_prob(double p_ref, double q) { return std::fabs(p_ref - q); }

int contrastive_label(double p_ref, double q) { return std::abs(delta_threshold(p_ref) - delta_threshold(q)); }

bool qualify_reference(double p_ref, int y_ref, double margin) {
  return std::fabs(p_ref - static_cast<double>(y_ref)) < margin;
}

bool target_confident(double p, double margin) { return std::fabs(p - 0.5) > 0.5 - margin; }

std::size_t VoteRecord::positive_votes() const {
  std::size_t s = 0;
  for (int v : labels) s += static_cast<std::size_t>(v);
  return s;
}

std::string_view to_string(DecisionReason r) {
  switch (r) {
    case DecisionReason::accepted: return "accepted";
    case DecisionReason::target_unconfident: return "target_unconfident";
    case DecisionReason::no_qualified_voters: return "no_qualified_voters";
    case DecisionReason::dissent: return "dissent";
    case DecisionReason::unconfident_vote: return "unconfident_vote";
    case DecisionReason::consensus_mismatch: return "consensus_mismatch";
  }
  return "unknown";
}

PseudoLabelDecision decide_pseudo_label(const VoteRecord& votes, int self_label, const OvvConfig& cfg) {
  PseudoLabelDecision d;
  d.label = self_label;
  const std::size_t w = votes.qualified();
  if (w == 0) {
    d.reason = DecisionReason::no_qualified_voters;
    return d;
  }
  const std::size_t yes = votes.positive_votes();
  const std::size_t tol = cfg.veto_tolerance;
  if (!(yes <= tol || yes + tol >= w)) {
    d.reason = DecisionReason::dissent;
    return d;
  }
  std::size_t confident = 0;
  for (double p : votes.probs) confident += target_confident(p, cfg.confidence_margin) ? 1 : 0;
  const bool votes_ok = cfg.veto_quantifier == VetoQuantifier::all_confident ? confident == w : confident > 0;
  if (!votes_ok) {
    d.reason = DecisionReason::unconfident_vote;
    return d;
  }
  if (cfg.require_consensus_match) {
    // A tie has no majority and therefore cannot match.
    const int majority = 2 * yes > w ? 1 : (2 * yes < w ? 0 : -1);
    if (majority != self_label) {
      d.reason = DecisionReason::consensus_mismatch;
      return d;
    }
  }
  d.accepted = true;
  d.reason = DecisionReason::accepted;
  return d;
}

// ---------------------------------------------------------------------------

void PseudoLabelPool::insert(const std::string& id, const std::vector<double>& features, int label,
                             LabelOrigin origin) {
  auto [it, fresh] = index_.try_emplace(id, entries_.size());
  if (fresh) {
    entries_.push_back({id, &features, label, origin});
    return;
  }
  PoolEntry& existing = entries_[it->second];
  if (existing.origin == LabelOrigin::pseudo && origin == LabelOrigin::ground_truth) {
    existing = {id, &features, label, origin};
  }
}

std::size_t PseudoLabelPool::count(LabelOrigin origin) const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.origin == origin ? 1 : 0;
  return n;
}

ClassCounts PseudoLabelPool::class_counts() const {
  ClassCounts c{{0, 0}};
  for (const auto& e : entries_) ++c.n.at(static_cast<std::size_t>(e.label));
  return c;
}

// ---------------------------------------------------------------------------

namespace {

struct BatchScores {
  std::vector<double> p_ref;
  std::vector<double> p_target;
  std::vector<double> q;  // q[j * m + i]: reference j vs target i
};

BatchScores score_batch(const TwinModel& model, std::span<const LabeledSample> labeled,
                        std::span<const UnlabeledSample> unlabeled, const SslBatch& batch) {
  const std::size_t m = batch.references.size();
  std::vector<const std::vector<double>*> ref_rows, target_rows;
  for (auto r : batch.references) ref_rows.push_back(&labeled[r].features);
  for (auto t : batch.targets) target_rows.push_back(&unlabeled[t].features);
  const auto ref = model.forward_single(stack_rows(ref_rows)).embedding.detach();
  const auto tgt = model.forward_single(stack_rows(target_rows)).embedding.detach();

  BatchScores s;
  // Heads evaluated on detached embeddings: no graph back into the backbone.
  const auto head_p = [&](const Tensor& h) {
    auto p = sigmoid(affine(h, model.parameters()[4].detach(), model.parameters()[5].detach()));
    return std::vector<double>(p.data().begin(), p.data().end());
  };
  s.p_ref = head_p(ref);
  s.p_target = head_p(tgt);

  const std::size_t e = model.dims().embedding_dim;
  std::vector<double> hr(m * batch.targets.size() * e), ht(hr.size());
  std::size_t row = 0;
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < batch.targets.size(); ++i, ++row) {
      std::copy_n(ref.data().begin() + static_cast<std::ptrdiff_t>(j * e), e, hr.begin() + static_cast<std::ptrdiff_t>(row * e));
      std::copy_n(tgt.data().begin() + static_cast<std::ptrdiff_t>(i * e), e, ht.begin() + static_cast<std::ptrdiff_t>(row * e));
    }
  }
  const Tensor hr_t = Tensor::from({row, e}, std::move(hr));
  const Tensor ht_t = Tensor::from({row, e}, std::move(ht));
  const Tensor q = sigmoid(affine(distance_phi(hr_t, ht_t, model.dims().phi), model.parameters()[6].detach(),
                                  model.parameters()[7].detach()));
  s.q.assign(q.data().begin(), q.data().end());
  return s;
}

}  // namespace

OvvEpochStats ovv_epoch(ModelRoles& roles, std::span<const LabeledSample> labeled,
                        std::span<const UnlabeledSample> unlabeled, std::span<const SslBatch> batches,
                        const OvvConfig& cfg, const FinetuneSettings& finetune, const DecisionSink& sink) {
  cfg.validate();
  OvvEpochStats stats;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const SslBatch& batch = batches[b];
    const std::size_t m = batch.references.size();
    const std::size_t n_targets = batch.targets.size();
    const BatchScores scores = score_batch(roles.reference, labeled, unlabeled, batch);
    ++stats.batches;

    PseudoLabelPool pool;
    for (std::size_t i = 0; i < n_targets; ++i) {
      const auto& target = unlabeled[batch.targets[i]];
      DecisionRecord rec;
      rec.epoch = finetune.epoch;
      rec.batch = b;
      rec.target_id = target.id;
      rec.p_target = scores.p_target[i];
      rec.self_label = delta_threshold(rec.p_target);
      rec.confident = target_confident(rec.p_target, cfg.confidence_margin);
      if (rec.confident) {
        ++stats.confident_targets;
        for (std::size_t j = 0; j < m; ++j) {
          const auto& ref = labeled[batch.references[j]];
          if (!qualify_reference(scores.p_ref[j], ref.label, cfg.confidence_margin)) continue;
          pool.insert(ref.id, ref.features, ref.label, LabelOrigin::ground_truth);
          const double q = scores.q[j * n_targets + i];
          rec.votes.labels.push_back(contrastive_label(scores.p_ref[j], q));
          rec.votes.probs.push_back(contrastive_prob(scores.p_ref[j], q));
        }
        const auto decision = decide_pseudo_label(rec.votes, rec.self_label, cfg);
        rec.accepted = decision.accepted;
        rec.reason = decision.reason;
        if (decision.accepted) {
          pool.insert(target.id, target.features, decision.label, LabelOrigin::pseudo);
          stats.accepted_positive += static_cast<std::size_t>(decision.label);
        }
      } else {
        rec.reason = DecisionReason::target_unconfident;
      }
      rec.accepted ? ++stats.accepted : ++stats.rejected;
      if (sink) sink(rec);
    }

    stats.qualified_references += pool.count(LabelOrigin::ground_truth);
    stats.pool_entries += pool.size();
    if (pool.empty()) {
      ++stats.skipped_batches;
      continue;
    }

    const auto counts = pool.class_counts();
    const double w_cla = weights_degenerate(counts) ? finetune.fallback_weight_cla : weight_cla(counts);
    std::vector<const std::vector<double>*> rows;
    std::vector<int> labels;
    for (const auto& e : pool.entries()) {
      rows.push_back(e.features);
      labels.push_back(e.label);
    }
    const Tensor probs = roles.target.forward_single(stack_rows(rows)).probability;
    backward(finetune_loss(probs, labels, w_cla));
    sgd_step(roles.target.parameters(), finetune.sgd, finetune.epoch);
  }
  return stats;
}

bool promote_reference(ModelRoles& roles, double target_fsc, double reference_fsc) {
  if (!(target_fsc > reference_fsc)) return false;
  roles.reference.assign_from(roles.target);
  return true;
}

}  // namespace ovv
