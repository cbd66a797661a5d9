#pragma once

// Two-stage optimisation: sentence-level pretraining of the translation path,
// then multi-task fine-tuning of every parameter under the decayed joint
// objective.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "csanct/autodiff.hpp"
#include "csanct/corpus.hpp"
#include "csanct/error.hpp"
#include "csanct/model.hpp"
#include "csanct/objectives.hpp"

namespace csanct {

struct TrainConfig {
  long stage1_steps = 2000;
  long stage2_steps = 1000;
  long batch_tokens = 4096;
  Real adam_beta1 = 0.9;
  Real adam_beta2 = 0.998;
  Real adam_eps = 1e-9;
  Real lr_scale = 1.0;
  long warmup_steps = 4000;
  long finetune_warmup_steps = 500;
  Real label_smoothing = 0.1;
  std::uint64_t seed = 1;
  Real grad_clip = 5.0;  // global norm bound; <= 0 disables clipping
  int context_window = 3;
  std::string schedule_mode = "linear";
  Real alpha0 = 1.0;
  Real beta0 = 1.0;
  bool nct_only = false;  // fine-tune on the translation loss alone
  long dev_every = 0;     // 0 disables dev-BLEU checkpoint selection
  int min_count = 1;
  int beam_size = 4;
  Real length_penalty = 0.6;
  int max_len = 64;

  void validate() const {
    if (stage1_steps <= 0 || stage2_steps <= 0) throw ConfigError("stage1_steps and stage2_steps must be positive");
    if (batch_tokens <= 0) throw ConfigError("batch_tokens must be positive");
    if (!(label_smoothing >= 0 && label_smoothing < 1)) throw ConfigError("label_smoothing must lie in [0,1)");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
      throw ConfigError("adam betas must lie in [0,1)");
    }
    if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
    if (warmup_steps <= 0 || finetune_warmup_steps <= 0) throw ConfigError("warmup steps must be positive");
    if (context_window < 0) throw ConfigError("context_window must be non-negative");
    if (alpha0 < 0 || beta0 < 0) throw ConfigError("alpha0 and beta0 must be non-negative");
    if (dev_every < 0) throw ConfigError("dev_every must be non-negative");
    if (min_count < 1) throw ConfigError("min_count must be >= 1");
    parse_schedule_mode(schedule_mode);
  }

  bool operator==(const TrainConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Optimiser

/// lr_scale · d^-0.5 · min(step^-0.5, step · warmup^-1.5), step counted from 1.
inline Real noam_rate(Real lr_scale, int d_model, long step, long warmup) {
  if (step < 1) throw UsageError("learning-rate step counts from 1");
  const Real s = static_cast<Real>(step);
  return lr_scale / std::sqrt(static_cast<Real>(d_model)) *
         std::min(1 / std::sqrt(s), s * std::pow(static_cast<Real>(warmup), -1.5));
}

struct AdamConfig {
  Real beta1 = 0.9;
  Real beta2 = 0.998;
  Real eps = 1e-9;
  Real clip = 0;  // <= 0: no clipping
};

/// First/second moments for exactly one named parameter set.
struct AdamState {
  long step = 0;
  std::vector<std::string> names;
  std::vector<std::vector<Real>> m, v;

  static AdamState for_params(const std::vector<std::pair<std::string, Tensor>>& params) {
    AdamState s;
    for (const auto& [name, t] : params) {
      s.names.push_back(name);
      s.m.emplace_back(t.size(), Real{0});
      s.v.emplace_back(t.size(), Real{0});
    }
    return s;
  }
};

/// Global L2 norm of the gradients (missing gradients count as zero).
inline Real global_grad_norm(const std::vector<std::pair<std::string, Tensor>>& params) {
  Real sq = 0;
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (Real g : t.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

/// One bias-corrected Adam step at rate lr, with optional global-norm
/// clipping first. Non-finite gradients throw before any parameter changes.
/// Returns the pre-clipping gradient norm.
inline Real adam_update(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state, Real lr,
                        const AdamConfig& cfg) {
  if (params.size() != state.names.size()) throw UsageError("optimizer state does not match parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].first != state.names[i] || params[i].second.size() != state.m[i].size()) {
      throw UsageError("optimizer state does not match parameter " + params[i].first);
    }
  }
  const Real norm = global_grad_norm(params);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm at optimizer step " + std::to_string(state.step + 1));
  const Real factor = (cfg.clip > 0 && norm > cfg.clip) ? cfg.clip / norm : Real{1};
  ++state.step;
  const Real bc1 = 1 - std::pow(cfg.beta1, static_cast<Real>(state.step));
  const Real bc2 = 1 - std::pow(cfg.beta2, static_cast<Real>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& t = params[i].second;
    auto data = t.mutable_data();
    const bool has = t.has_grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const Real g = has ? t.grad()[j] * factor : Real{0};
      m[j] = cfg.beta1 * m[j] + (1 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1 - cfg.beta2) * g * g;
      data[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.eps);
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Token-budget batching

struct BatchPlan {
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> dropped;  // items longer than the budget
};

/// Groups items of similar length under a token budget: ties in length are
/// ordered by a fresh shuffle, items are packed greedily longest first, and the
/// full batches are shuffled. The last packed batch, the only one that may hold
/// fewer than budget/2 tokens, stays last.
inline BatchPlan plan_batches(const std::vector<std::size_t>& lengths, std::size_t budget, std::mt19937_64& rng) {
  if (budget == 0) throw ConfigError("batch budget must be positive");
  BatchPlan plan;
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] > budget) {
      plan.dropped.push_back(i);
    } else {
      order.push_back(i);
    }
  }
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lengths[a] > lengths[b]; });
  std::vector<std::size_t> cur;
  std::size_t used = 0;
  for (auto i : order) {
    if (used + lengths[i] > budget) {
      plan.batches.push_back(std::move(cur));
      cur.clear();
      used = 0;
    }
    cur.push_back(i);
    used += lengths[i];
  }
  if (!cur.empty()) plan.batches.push_back(std::move(cur));
  if (plan.batches.size() > 2) std::shuffle(plan.batches.begin(), plan.batches.end() - 1, rng);
  return plan;
}

/// Endless sequence of batches, replanned at every epoch boundary.
class BatchStream {
 public:
  BatchStream(std::vector<std::size_t> lengths, std::size_t budget, std::uint64_t seed)
      : lengths_(std::move(lengths)), budget_(budget), rng_(seed) {
    replan();
    if (plan_.batches.empty()) throw ValidationError("no training item fits the batch_tokens budget");
  }

  const std::vector<std::size_t>& next() {
    if (pos_ == plan_.batches.size()) {
      replan();
      ++epoch_;
    }
    return plan_.batches[pos_++];
  }

  long epoch() const { return epoch_; }
  std::size_t dropped() const { return plan_.dropped.size(); }
  std::size_t tokens(const std::vector<std::size_t>& batch) const {
    std::size_t n = 0;
    for (auto i : batch) n += lengths_[i];
    return n;
  }

 private:
  void replan() {
    plan_ = plan_batches(lengths_, budget_, rng_);
    pos_ = 0;
  }

  std::vector<std::size_t> lengths_;
  std::size_t budget_;
  std::mt19937_64 rng_;
  BatchPlan plan_;
  std::size_t pos_ = 0;
  long epoch_ = 0;
};

// ---------------------------------------------------------------------------
// Logging

struct StepRecord {
  long step = 0;
  int stage = 1;
  Real l_nct = 0, l_mrg = 0, l_crg = 0, l_nud = 0, l_si = 0;
  Real alpha = 0, beta = 0;
  Real lr = 0;
  std::size_t tokens = 0;
  bool update = true;  // false for the closing evaluation-only record

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["stage"] = stage;
    j["l_nct"] = l_nct;
    j["l_mrg"] = l_mrg;
    j["l_crg"] = l_crg;
    j["l_nud"] = l_nud;
    j["l_si"] = l_si;
    j["alpha"] = alpha;
    j["beta"] = beta;
    j["lr"] = lr;
    j["tokens"] = tokens;
    return j;
  }
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const std::string&)> on_warning;
  // Dev-set BLEU of the current parameters; consulted every dev_every steps.
  std::function<double(const Model&)> dev_bleu;
};

struct TrainResult {
  std::vector<StepRecord> log;
  AdamState optimizer;
  SampleStats stats;
  std::size_t dropped_examples = 0;
  std::optional<long> diverged_at;  // step whose update was refused
  std::optional<double> best_dev_bleu;
  std::optional<long> best_dev_step;
};

namespace detail {

enum class LossStream : std::uint64_t { nct = 1, mrg = 2, crg = 3, nud = 4, si = 5 };

/// Dropout generator private to one loss at one step of one stage.
inline std::mt19937_64 dropout_rng(std::uint64_t seed, int stage, long step, LossStream which) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stage), static_cast<std::uint32_t>(step),
                    static_cast<std::uint32_t>(which)};
  return std::mt19937_64(seq);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

inline bool fits(const NctExample& ex, int max_pos) {
  return ex.encoder.size() <= static_cast<std::size_t>(max_pos) && ex.decoder.size() - 1 <= static_cast<std::size_t>(max_pos);
}

inline void warn(const TrainHooks& hooks, const std::string& msg) {
  if (hooks.on_warning) hooks.on_warning(msg);
}

/// Keeps the best parameters seen by dev BLEU.
struct DevSelector {
  std::optional<ModelParams> best;
  std::optional<double> best_bleu;
  std::optional<long> best_step;

  void consider(const Model& model, long step, const TrainHooks& hooks) {
    if (!hooks.dev_bleu) return;
    const double b = hooks.dev_bleu(model);
    if (!best_bleu || b > *best_bleu) {
      best_bleu = b;
      best_step = step;
      best = model.params().clone();
    }
  }

  void restore(Model& model, TrainResult& result) {
    if (!best) return;
    for (auto& [name, t] : model.params().entries()) {
      auto src = best->at(name).data();
      Tensor handle = t;
      std::copy(src.begin(), src.end(), handle.mutable_data().begin());
    }
    result.best_dev_bleu = best_bleu;
    result.best_dev_step = best_step;
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1

/// Sentence-level training of θ on [cls] X → Y examples.
inline TrainResult pretrain(Model& model, const std::vector<SentencePair>& corpus, const Vocabulary& vocab,
                            const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (corpus.empty()) throw ValidationError("pretraining corpus is empty");
  if (static_cast<int>(vocab.size()) != model.config().vocab_size) {
    throw ValidationError("vocabulary size " + std::to_string(vocab.size()) + " does not match vocab_size " +
                          std::to_string(model.config().vocab_size));
  }
  TrainResult result;
  std::vector<NctExample> examples;
  std::vector<std::size_t> lengths;
  for (const auto& p : corpus) {
    auto ex = make_sentence_example(p, vocab, model.config().max_turns, &result.stats);
    if (!detail::fits(ex, model.config().max_pos)) {
      ++result.dropped_examples;
      continue;
    }
    lengths.push_back(ex.tokens());
    examples.push_back(std::move(ex));
  }
  if (examples.empty()) throw ValidationError("no pretraining example fits max_pos");
  BatchStream stream(lengths, static_cast<std::size_t>(cfg.batch_tokens), detail::derive_seed(cfg.seed, 11));
  result.dropped_examples += stream.dropped();
  if (result.dropped_examples) {
    detail::warn(hooks, std::to_string(result.dropped_examples) + " pretraining examples exceed max_pos or batch_tokens");
  }

  auto theta = model.params().theta();
  result.optimizer = AdamState::for_params(theta);
  const AdamConfig adam{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.grad_clip};
  detail::DevSelector dev;

  for (long step = 1; step <= cfg.stage1_steps; ++step) {
    const auto& idx = stream.next();
    std::vector<NctExample> batch;
    for (auto i : idx) batch.push_back(examples[i]);
    auto rng = detail::dropout_rng(cfg.seed, 1, step, detail::LossStream::nct);
    model.params().zero_grad();
    Tensor loss;
    try {
      loss = loss_nct(model, batch, cfg.label_smoothing, model.training(rng));
    } catch (const NumericError& e) {
      result.diverged_at = step;
      detail::warn(hooks, std::string(e.what()) + " at stage-1 step " + std::to_string(step) + "; stopping");
      break;
    }
    StepRecord rec;
    rec.step = step;
    rec.stage = 1;
    rec.l_nct = loss.item();
    rec.lr = noam_rate(cfg.lr_scale, model.config().d_model, step, cfg.warmup_steps);
    rec.tokens = stream.tokens(idx);
    if (!std::isfinite(rec.l_nct)) {
      result.diverged_at = step;
      detail::warn(hooks, "loss is not finite at stage-1 step " + std::to_string(step) + "; stopping");
      break;
    }
    backward(loss);
    try {
      adam_update(theta, result.optimizer, rec.lr, adam);
    } catch (const NumericError& e) {
      result.diverged_at = step;
      detail::warn(hooks, std::string(e.what()) + "; stopping");
      break;
    }
    result.log.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    if (cfg.dev_every > 0 && step % cfg.dev_every == 0) dev.consider(model, step, hooks);
  }
  model.params().zero_grad();
  if (cfg.dev_every > 0 && !result.diverged_at) dev.consider(model, cfg.stage1_steps, hooks);
  dev.restore(model, result);
  return result;
}

// ---------------------------------------------------------------------------
// Stage 2

/// All per-turn training material of a chat corpus.
struct ChatTrainingSet {
  struct Turn {
    std::size_t dialogue = 0;
    int u = 1;
    NctExample nct, mrg, crg;
    std::optional<std::pair<PairInput, PairInput>> si;
  };
  std::vector<Turn> turns;
  std::size_t dropped = 0;
  std::size_t si_pairs = 0;
};

inline ChatTrainingSet build_chat_training_set(const std::vector<Dialogue>& dialogues, const Vocabulary& vocab,
                                               const ModelConfig& mc, int k, SampleStats* stats) {
  ChatTrainingSet set;
  for (std::size_t di = 0; di < dialogues.size(); ++di) {
    const auto& d = dialogues[di];
    for (int u = 1; u <= static_cast<int>(d.size()); ++u) {
      const auto view = make_context_view(d, u, k);
      ChatTrainingSet::Turn t;
      t.dialogue = di;
      t.u = u;
      t.nct = make_nct_example(view, d, u, vocab, mc.max_turns, stats);
      t.mrg = make_response_example(view.cy, d.turn(u).target, vocab, mc.max_turns, stats);
      t.crg = make_response_example(view.cx, d.turn(u).target, vocab, mc.max_turns, stats);
      if (!detail::fits(t.nct, mc.max_pos) || !detail::fits(t.mrg, mc.max_pos) || !detail::fits(t.crg, mc.max_pos)) {
        ++set.dropped;
        continue;
      }
      if (auto si = make_si_samples(view, d, u, stats)) {
        t.si = std::make_pair(make_pair_input(si->first, vocab, mc.max_turns, stats),
                              make_pair_input(si->second, vocab, mc.max_turns, stats));
        ++set.si_pairs;
      }
      set.turns.push_back(std::move(t));
    }
  }
  return set;
}

/// Copies θ into a model whose auxiliary heads stay as initialised.
inline void load_theta(Model& model, const ModelParams& theta) {
  for (const auto& [name, t] : theta.entries()) {
    if (ModelParams::is_aux(name)) continue;
    if (!model.params().contains(name)) throw ValidationError("stage-1 parameter " + name + " unknown to the model");
    Tensor dst = model.params().at(name);
    if (dst.shape() != t.shape()) {
      throw ValidationError("stage-1 parameter " + name + " has shape " + shape_str(t.shape()) + ", model expects " +
                            shape_str(dst.shape()));
    }
    std::copy(t.data().begin(), t.data().end(), dst.mutable_data().begin());
  }
}

/// Multi-task fine-tuning of Θ. The model should already hold θ from stage 1.
/// Updates happen at t2 = 0 .. T2-1 with the weights of schedule_step(t2); a
/// closing record at t2 = T2 reports the losses of the final parameters.
inline TrainResult finetune(Model& model, const std::vector<Dialogue>& corpus, const Vocabulary& vocab,
                            const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (corpus.empty()) throw ValidationError("chat corpus is empty");
  if (static_cast<int>(vocab.size()) != model.config().vocab_size) {
    throw ValidationError("vocabulary size " + std::to_string(vocab.size()) + " does not match vocab_size " +
                          std::to_string(model.config().vocab_size));
  }
  TrainResult result;
  const auto& mc = model.config();
  auto set = build_chat_training_set(corpus, vocab, mc, cfg.context_window, &result.stats);
  result.dropped_examples = set.dropped;
  if (set.turns.empty()) throw ValidationError("no chat turn fits max_pos");
  if (set.si_pairs == 0 && !cfg.nct_only) {
    detail::warn(hooks, "chat corpus has no valid speaker-identification pair; the beta term contributes 0");
  }
  std::vector<std::size_t> lengths;
  for (const auto& t : set.turns) lengths.push_back(t.nct.tokens());
  BatchStream stream(lengths, static_cast<std::size_t>(cfg.batch_tokens), detail::derive_seed(cfg.seed, 21));
  result.dropped_examples += stream.dropped();
  if (result.dropped_examples) {
    detail::warn(hooks, std::to_string(result.dropped_examples) + " chat turns exceed max_pos or batch_tokens");
  }
  const TargetPool pool(corpus);
  std::mt19937_64 negative_rng(detail::derive_seed(cfg.seed, 22));

  const Schedule schedule{cfg.stage2_steps, parse_schedule_mode(cfg.schedule_mode), cfg.alpha0, cfg.beta0};
  auto params = model.params().all();
  result.optimizer = AdamState::for_params(params);
  const AdamConfig adam{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.grad_clip};
  detail::DevSelector dev;
  long epoch_si = 0;
  long epoch_seen = -1;

  for (long t2 = 0; t2 <= cfg.stage2_steps; ++t2) {
    const bool update = t2 < cfg.stage2_steps;
    const auto& idx = stream.next();
    if (stream.epoch() != epoch_seen) {
      if (epoch_seen >= 0 && epoch_si == 0 && set.si_pairs > 0 && !cfg.nct_only) {
        detail::warn(hooks, "no speaker-identification pair in epoch " + std::to_string(epoch_seen) +
                                "; the beta term contributed 0");
      }
      epoch_seen = stream.epoch();
      epoch_si = 0;
    }
    const long step = t2 + 1;
    std::vector<NctExample> nct, mrg, crg;
    std::vector<std::pair<PairInput, PairInput>> nud, si;
    for (auto i : idx) {
      const auto& t = set.turns[i];
      nct.push_back(t.nct);
      if (cfg.nct_only) continue;
      mrg.push_back(t.mrg);
      crg.push_back(t.crg);
      const auto& d = corpus[t.dialogue];
      const auto view = make_context_view(d, t.u, cfg.context_window);
      if (auto s = make_nud_samples(view, d, t.u, pool, negative_rng, &result.stats)) {
        nud.emplace_back(make_pair_input(s->first, vocab, mc.max_turns), make_pair_input(s->second, vocab, mc.max_turns));
      }
      if (t.si) si.push_back(*t.si);
    }
    epoch_si += static_cast<long>(si.size());

    StepRecord rec;
    rec.step = t2;
    rec.stage = 2;
    rec.tokens = stream.tokens(idx);
    rec.update = update;
    rec.lr = update ? noam_rate(cfg.lr_scale, mc.d_model, step, cfg.finetune_warmup_steps) : 0;

    auto drop_for = [&](std::mt19937_64& rng) { return update ? model.training(rng) : Dropout{}; };
    std::optional<NoGradGuard> no_grad;
    if (!update) no_grad.emplace();
    model.params().zero_grad();

    Tensor objective;
    try {
      auto rng_nct = detail::dropout_rng(cfg.seed, 2, step, detail::LossStream::nct);
      Tensor l_nct = loss_nct(model, nct, cfg.label_smoothing, drop_for(rng_nct));
      objective = l_nct;
      rec.l_nct = l_nct.item();
      if (!cfg.nct_only) {
        auto [alpha, beta] = schedule_step(schedule, t2);
        rec.alpha = alpha;
        rec.beta = beta;
        auto rng_mrg = detail::dropout_rng(cfg.seed, 2, step, detail::LossStream::mrg);
        auto rng_crg = detail::dropout_rng(cfg.seed, 2, step, detail::LossStream::crg);
        auto rng_nud = detail::dropout_rng(cfg.seed, 2, step, detail::LossStream::nud);
        auto rng_si = detail::dropout_rng(cfg.seed, 2, step, detail::LossStream::si);
        Tensor l_mrg = loss_mrg(model, mrg, cfg.label_smoothing, drop_for(rng_mrg));
        Tensor l_crg = loss_crg(model, crg, cfg.label_smoothing, drop_for(rng_crg));
        Tensor l_nud = loss_nud(model, nud, drop_for(rng_nud));
        Tensor l_si = loss_si(model, si, drop_for(rng_si));
        rec.l_mrg = l_mrg.item();
        rec.l_crg = l_crg.item();
        rec.l_nud = l_nud.item();
        rec.l_si = l_si.item();
        objective = joint(l_nct, l_mrg, l_crg, l_nud, l_si, alpha, beta);
      }
    } catch (const NumericError& e) {
      result.diverged_at = t2;
      detail::warn(hooks, std::string(e.what()) + " at stage-2 step " + std::to_string(t2) + "; stopping");
      break;
    }
    if (!update) {
      result.log.push_back(rec);
      if (hooks.on_step) hooks.on_step(rec);
      break;
    }
    if (!std::isfinite(objective.item())) {
      result.diverged_at = t2;
      detail::warn(hooks, "joint loss is not finite at stage-2 step " + std::to_string(t2) + "; stopping");
      break;
    }
    backward(objective);
    try {
      adam_update(params, result.optimizer, rec.lr, adam);
    } catch (const NumericError& e) {
      result.diverged_at = t2;
      detail::warn(hooks, std::string(e.what()) + "; stopping");
      break;
    }
    result.log.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    if (cfg.dev_every > 0 && step % cfg.dev_every == 0) dev.consider(model, step, hooks);
  }
  model.params().zero_grad();
  if (cfg.dev_every > 0 && !result.diverged_at) dev.consider(model, cfg.stage2_steps, hooks);
  dev.restore(model, result);
  return result;
}

}  // namespace csanct
