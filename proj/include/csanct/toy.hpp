#pragma once

// A toy Θ (under 5k parameters) with a few random dialogues, and the joint
// objective over every auxiliary task, for finite-difference checking.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "csanct/autodiff.hpp"
#include "csanct/corpus.hpp"
#include "csanct/gradcheck.hpp"
#include "csanct/model.hpp"
#include "csanct/objectives.hpp"

namespace csanct {

struct ToySetup {
  ModelConfig config;
  Vocabulary vocab;
  std::vector<Dialogue> dialogues;
  std::vector<NctExample> nct, mrg, crg;
  std::vector<std::pair<PairInput, PairInput>> nud, si;
};

inline ModelConfig toy_config() {
  ModelConfig c;
  c.layers = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.heads = 2;
  c.vocab_size = 16;
  c.max_turns = 4;
  c.max_pos = 32;
  c.dropout = 0;
  // Smooth activation keeps central differences away from ReLU kinks.
  c.activation = "gelu";
  return c;
}

/// Two 3-turn dialogues over a 10-word vocabulary, drawn from `seed`.
inline ToySetup make_toy_setup(std::uint64_t seed) {
  ToySetup s;
  s.config = toy_config();
  std::vector<std::string> words = special::reserved();
  for (char c = 'a'; c < 'a' + 10; ++c) words.emplace_back(1, c);
  s.vocab = Vocabulary(words);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> word(0, 9), len(1, 3);
  auto sentence = [&] {
    Tokens t;
    for (int i = len(rng); i > 0; --i) t.emplace_back(1, static_cast<char>('a' + word(rng)));
    return t;
  };
  for (int di = 0; di < 2; ++di) {
    Dialogue d{"toy" + std::to_string(di), {}};
    for (int u = 1; u <= 3; ++u) d.utterances.push_back(Utterance{u, speaker_for_turn(u), sentence(), sentence()});
    s.dialogues.push_back(std::move(d));
  }
  const TargetPool pool(s.dialogues);
  for (const auto& d : s.dialogues) {
    for (int u = 1; u <= static_cast<int>(d.size()); ++u) {
      const auto view = make_context_view(d, u, 2);
      s.nct.push_back(make_nct_example(view, d, u, s.vocab, s.config.max_turns));
      s.mrg.push_back(make_response_example(view.cy, d.turn(u).target, s.vocab, s.config.max_turns));
      s.crg.push_back(make_response_example(view.cx, d.turn(u).target, s.vocab, s.config.max_turns));
      if (auto p = make_nud_samples(view, d, u, pool, rng)) {
        s.nud.emplace_back(make_pair_input(p->first, s.vocab, s.config.max_turns),
                           make_pair_input(p->second, s.vocab, s.config.max_turns));
      }
      if (auto p = make_si_samples(view, d, u)) {
        s.si.emplace_back(make_pair_input(p->first, s.vocab, s.config.max_turns),
                          make_pair_input(p->second, s.vocab, s.config.max_turns));
      }
    }
  }
  return s;
}

inline Tensor toy_joint(const Model& model, const ToySetup& s, Real alpha, Real beta, Real smoothing = 0.1) {
  return joint(loss_nct(model, s.nct, smoothing), loss_mrg(model, s.mrg, smoothing), loss_crg(model, s.crg, smoothing),
               loss_nud(model, s.nud), loss_si(model, s.si), alpha, beta);
}

/// Finite-difference check of J over every toy parameter.
inline GradCheckResult toy_gradcheck(std::uint64_t seed, Real alpha = 0.7, Real beta = 0.4) {
  const auto setup = make_toy_setup(seed);
  Model model(setup.config, seed);
  return check_gradients(model.params().all(), [&] { return toy_joint(model, setup, alpha, beta); });
}

}  // namespace csanct
