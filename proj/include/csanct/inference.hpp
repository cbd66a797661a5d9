#pragma once

// Beam-search decoding with a GNMT length penalty, and dialogue translation
// from source-side history.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "csanct/autodiff.hpp"
#include "csanct/corpus.hpp"
#include "csanct/model.hpp"

namespace csanct {

struct BeamConfig {
  int beam_size = 4;
  Real length_penalty = 0.6;
  int max_len = 64;
  int eos_id = special::eos_id;
  int bos_id = special::bos_id;

  void validate() const {
    if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
  }
};

/// lp(len) = ((5 + len) / 6)^p
inline Real length_penalty(std::size_t len, Real p) {
  return std::pow((5.0 + static_cast<Real>(len)) / 6.0, p);
}

struct Hypothesis {
  std::vector<int> tokens;  // generated tokens, excluding [bos]
  Real log_prob = 0;
  bool finished = false;
};

/// Orders by score, then shorter length, then lexicographically smaller ids.
inline bool better_hypothesis(Real score_a, const std::vector<int>& a, Real score_b, const std::vector<int>& b) {
  if (score_a != score_b) return score_a > score_b;
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

struct BeamResult {
  std::vector<int> tokens;  // including the final eos when finished
  Real log_prob = 0;
  Real score = 0;
  bool truncated = false;   // best hypothesis stopped at max_len without eos

  std::vector<int> output() const {
    auto out = tokens;
    if (!truncated && !out.empty()) out.pop_back();
    return out;
  }
};

/// A candidate dropped at a given step, with the weakest candidate kept then.
struct PruneRecord {
  int step = 0;
  Real pruned_log_prob = 0;
  Real weakest_kept_log_prob = 0;
};

/// Log-probabilities of the next token for each prefix ([bos] + tokens).
using NextTokenScorer = std::function<std::vector<std::vector<Real>>(const std::vector<std::vector<int>>&)>;

inline BeamResult beam_search(const NextTokenScorer& scorer, const BeamConfig& cfg,
                              std::vector<PruneRecord>* trace = nullptr) {
  cfg.validate();
  std::vector<Hypothesis> alive{Hypothesis{}};
  std::vector<Hypothesis> finished;
  Real best_finished = -std::numeric_limits<Real>::infinity();
  const Hypothesis* best = nullptr;

  auto score_of = [&](const Hypothesis& h) { return h.log_prob / length_penalty(h.tokens.size(), cfg.length_penalty); };

  for (int step = 1; step <= cfg.max_len && !alive.empty(); ++step) {
    std::vector<std::vector<int>> prefixes;
    prefixes.reserve(alive.size());
    for (const auto& h : alive) {
      std::vector<int> p{cfg.bos_id};
      p.insert(p.end(), h.tokens.begin(), h.tokens.end());
      prefixes.push_back(std::move(p));
    }
    const auto logps = scorer(prefixes);
    std::vector<Hypothesis> candidates;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      for (std::size_t v = 0; v < logps[i].size(); ++v) {
        Hypothesis c;
        c.tokens = alive[i].tokens;
        c.tokens.push_back(static_cast<int>(v));
        c.log_prob = alive[i].log_prob + logps[i][v];
        candidates.push_back(std::move(c));
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Hypothesis& a, const Hypothesis& b) {
      return better_hypothesis(a.log_prob, a.tokens, b.log_prob, b.tokens);
    });
    const std::size_t keep = std::min(candidates.size(), static_cast<std::size_t>(cfg.beam_size));
    if (trace) {
      for (std::size_t i = keep; i < candidates.size(); ++i) {
        trace->push_back({step, candidates[i].log_prob, candidates[keep - 1].log_prob});
      }
    }
    alive.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      auto& c = candidates[i];
      c.finished = c.tokens.back() == cfg.eos_id || static_cast<int>(c.tokens.size()) == cfg.max_len;
      if (c.finished) {
        finished.push_back(std::move(c));
      } else {
        alive.push_back(std::move(c));
      }
    }
    best = nullptr;
    for (const auto& f : finished) {
      if (!best || better_hypothesis(score_of(f), f.tokens, score_of(*best), best->tokens)) best = &f;
    }
    if (best) best_finished = score_of(*best);
    // Stop when no alive hypothesis can still overtake the best finished one:
    // log-probabilities only fall, so the most favourable future penalty bounds it.
    if (best && !alive.empty()) {
      bool can_improve = false;
      for (const auto& h : alive) {
        Real max_lp = 0;
        for (int len = static_cast<int>(h.tokens.size()) + 1; len <= cfg.max_len; ++len) {
          max_lp = std::max(max_lp, length_penalty(static_cast<std::size_t>(len), cfg.length_penalty));
        }
        if (h.log_prob / max_lp >= best_finished) {
          can_improve = true;
          break;
        }
      }
      if (!can_improve) break;
    }
  }

  BeamResult out;
  if (best) {
    out.tokens = best->tokens;
    out.log_prob = best->log_prob;
    out.score = score_of(*best);
    out.truncated = best->tokens.empty() || best->tokens.back() != cfg.eos_id;
  }
  return out;
}

/// Beam search over the translation head of a model.
inline BeamResult beam_search(const EncoderOutput& enc, const Model& model, const BeamConfig& cfg,
                              std::vector<PruneRecord>* trace = nullptr) {
  NoGradGuard guard;
  BeamConfig bounded = cfg;
  bounded.max_len = std::min(cfg.max_len, model.config().max_pos);
  auto scorer = [&](const std::vector<std::vector<int>>& prefixes) {
    std::vector<std::vector<Real>> out;
    out.reserve(prefixes.size());
    for (const auto& p : prefixes) {
      auto states = model.decode(p, enc);
      auto last = slice_rows(states, states.dim(0) - 1, states.dim(0));
      auto lp = log_softmax(model.project(last, Head::main));
      out.emplace_back(lp.data().begin(), lp.data().end());
    }
    return out;
  };
  return beam_search(scorer, bounded, trace);
}

struct TranslationResult {
  Tokens tokens;
  Real log_prob = 0;
  Real score = 0;
  bool truncated = false;
  bool input_truncated = false;
};

/// Fits an encoder input into max_pos: history tokens go first (oldest
/// first), then the tail of the utterance.
inline bool fit_to_max_pos(EncoderInput& in, std::size_t max_pos) {
  if (in.size() <= max_pos) return false;
  auto erase_at = [&](std::size_t i) {
    in.ids.erase(in.ids.begin() + static_cast<std::ptrdiff_t>(i));
    in.speakers.erase(in.speakers.begin() + static_cast<std::ptrdiff_t>(i));
    in.turns.erase(in.turns.begin() + static_cast<std::ptrdiff_t>(i));
    in.current.erase(in.current.begin() + static_cast<std::ptrdiff_t>(i));
  };
  while (in.size() > max_pos && in.size() > 1 && in.current[0] == 0 && in.current[1] == 0) erase_at(1);
  if (in.current[0] == 0 && (in.size() < 2 || in.current[1] != 0)) in.current[0] = 1;  // history now empty
  while (in.size() > max_pos) erase_at(in.size() - 1);
  return true;
}

/// Translates every turn of a dialogue using the k preceding source utterances.
inline std::vector<TranslationResult> translate_dialogue(const Dialogue& d, const Model& model,
                                                         const Vocabulary& vocab, int k, const BeamConfig& cfg,
                                                         std::size_t* warnings = nullptr) {
  std::vector<TranslationResult> out;
  out.reserve(d.size());
  for (int u = 1; u <= static_cast<int>(d.size()); ++u) {
    const auto view = make_context_view(d, u, k);
    const auto& utt = d.turn(u);
    auto input = make_source_input(view.cx, utt.source, utt.speaker, utt.turn, vocab, model.config().max_turns);
    TranslationResult r;
    r.input_truncated = fit_to_max_pos(input, static_cast<std::size_t>(model.config().max_pos));
    if (r.input_truncated && warnings) ++*warnings;
    EncoderOutput enc;
    {
      NoGradGuard guard;
      enc = model.encode(input);
    }
    auto best = beam_search(enc, model, cfg);
    r.tokens = vocab.decode(best.output());
    r.log_prob = best.log_prob;
    r.score = best.score;
    r.truncated = best.truncated;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace csanct
