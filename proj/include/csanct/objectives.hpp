#pragma once

// Translation, response-generation and pair-classification losses, their
// weighted combination, and the decay schedule of the auxiliary weights.

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csanct/autodiff.hpp"
#include "csanct/corpus.hpp"
#include "csanct/error.hpp"
#include "csanct/model.hpp"

namespace csanct {

struct LossBundle {
  Tensor l_nct, l_mrg, l_crg, l_nud, l_si;
  Tensor joint;
  Real alpha = 1;
  Real beta = 1;
};

/// Token-averaged label-smoothed cross-entropy of a batch through one head.
inline Tensor generation_loss(const Model& model, std::span<const NctExample> batch, Head head, Real smoothing,
                              const Dropout& drop = {}) {
  if (batch.empty()) throw UsageError("generation loss over an empty batch");
  std::vector<Tensor> logits;
  std::vector<int> targets;
  logits.reserve(batch.size());
  for (const auto& ex : batch) {
    auto enc = model.encode(ex.encoder, drop);
    auto states = model.decode(ex.decoder_input(), enc, drop);
    logits.push_back(model.project(states, head));
    auto tgt = ex.decoder_target();
    targets.insert(targets.end(), tgt.begin(), tgt.end());
  }
  auto all = logits.size() == 1 ? logits.front() : concat_rows(logits);
  return cross_entropy_label_smoothed(all, targets, smoothing, special::pad_id).loss;
}

inline Tensor loss_nct(const Model& model, std::span<const NctExample> batch, Real smoothing, const Dropout& drop = {}) {
  return generation_loss(model, batch, Head::main, smoothing, drop);
}

/// Batch built from (C_Y, Y_u) response examples.
inline Tensor loss_mrg(const Model& model, std::span<const NctExample> batch, Real smoothing, const Dropout& drop = {}) {
  return generation_loss(model, batch, Head::mrg, smoothing, drop);
}

/// Batch built from (C_X, Y_u) response examples.
inline Tensor loss_crg(const Model& model, std::span<const NctExample> batch, Real smoothing, const Dropout& drop = {}) {
  return generation_loss(model, batch, Head::crg, smoothing, drop);
}

/// -log p(1 | positive) - log p(0 | negative) for one pair.
inline Tensor pair_loss(const Model& model, const PairInput& pos, const PairInput& neg, Classifier which,
                        const Dropout& drop = {}) {
  if (pos.label != 1 || neg.label != 0) throw UsageError("pair loss expects a positive and a negative sample");
  auto rp = model.represent_pair(pos, drop);
  auto rn = model.represent_pair(neg, drop);
  auto lp = log_softmax(model.classify_logits(rp.utterance, rp.context, which));
  auto ln = log_softmax(model.classify_logits(rn.utterance, rn.context, which));
  return scale(add(pick(lp, 1), pick(ln, 0)), -1.0);
}

/// Mean pair loss over a batch; a constant zero when the batch has no pairs.
inline Tensor pair_batch_loss(const Model& model, std::span<const std::pair<PairInput, PairInput>> pairs,
                              Classifier which, const Dropout& drop = {}) {
  if (pairs.empty()) return Tensor::scalar(0);
  Tensor total;
  for (const auto& [pos, neg] : pairs) {
    auto l = pair_loss(model, pos, neg, which, drop);
    total = total.defined() ? add(total, l) : l;
  }
  return scale(total, Real{1} / static_cast<Real>(pairs.size()));
}

inline Tensor loss_nud(const Model& model, std::span<const std::pair<PairInput, PairInput>> pairs,
                       const Dropout& drop = {}) {
  return pair_batch_loss(model, pairs, Classifier::nud, drop);
}

inline Tensor loss_si(const Model& model, std::span<const std::pair<PairInput, PairInput>> pairs,
                      const Dropout& drop = {}) {
  return pair_batch_loss(model, pairs, Classifier::si, drop);
}

/// Predicted label (argmax of the classifier) for one pair input.
inline int predict_pair(const Model& model, const PairInput& pair, Classifier which) {
  NoGradGuard guard;
  auto r = model.represent_pair(pair);
  auto logits = model.classify_logits(r.utterance, r.context, which);
  return logits.at(1) > logits.at(0) ? 1 : 0;
}

/// J = L_NCT + α(L_MRG + L_CRG + L_NUD) + β L_SI
inline Tensor joint(const Tensor& l_nct, const Tensor& l_mrg, const Tensor& l_crg, const Tensor& l_nud,
                    const Tensor& l_si, Real alpha, Real beta) {
  if (alpha < 0 || beta < 0) throw ConfigError("balancing weights must be non-negative");
  auto coherence = add(add(l_mrg, l_crg), l_nud);
  return add(l_nct, add(scale(coherence, alpha), scale(l_si, beta)));
}

inline Real joint_value(Real l_nct, Real l_mrg, Real l_crg, Real l_nud, Real l_si, Real alpha, Real beta) {
  if (alpha < 0 || beta < 0) throw ConfigError("balancing weights must be non-negative");
  return l_nct + (alpha * ((l_mrg + l_crg) + l_nud) + beta * l_si);
}

// ---------------------------------------------------------------------------
// α/β schedule

enum class ScheduleMode {
  linear,              // max(0, 1 - t/T)
  algorithm1_literal,  // α ← α(1 - t/T) applied at every step t = 1..T
  fixed,               // constant weight
};

inline ScheduleMode parse_schedule_mode(const std::string& s) {
  if (s == "linear") return ScheduleMode::linear;
  if (s == "algorithm1_literal") return ScheduleMode::algorithm1_literal;
  if (s == "fixed") return ScheduleMode::fixed;
  throw ConfigError("unknown schedule mode '" + s + "'");
}

inline std::string schedule_mode_name(ScheduleMode m) {
  switch (m) {
    case ScheduleMode::linear:
      return "linear";
    case ScheduleMode::algorithm1_literal:
      return "algorithm1_literal";
    case ScheduleMode::fixed:
      return "fixed";
  }
  return "linear";
}

struct Schedule {
  long total_steps = 1;
  ScheduleMode mode = ScheduleMode::linear;
  Real alpha0 = 1.0;
  Real beta0 = 1.0;
};

/// (α, β) in effect at fine-tuning step t2 ∈ [0, T2].
inline std::pair<Real, Real> schedule_step(const Schedule& s, long t2) {
  if (s.total_steps <= 0) throw ConfigError("schedule needs a positive number of steps");
  if (t2 < 0 || t2 > s.total_steps) {
    throw UsageError("schedule step " + std::to_string(t2) + " outside [0, " + std::to_string(s.total_steps) + "]");
  }
  const Real T = static_cast<Real>(s.total_steps);
  Real factor = 1;
  switch (s.mode) {
    case ScheduleMode::linear:
      factor = std::max(Real{0}, Real{1} - static_cast<Real>(t2) / T);
      break;
    case ScheduleMode::algorithm1_literal:
      // α ← α − α·k/T, written as a product so that step T lands on exactly 0.
      for (long k = 1; k <= t2; ++k) factor *= std::max(Real{0}, Real{1} - static_cast<Real>(k) / T);
      break;
    case ScheduleMode::fixed:
      break;
  }
  return {s.alpha0 * factor, s.beta0 * factor};
}

}  // namespace csanct
