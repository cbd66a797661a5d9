#pragma once

// Synthetic bilingual chat corpus. Translation is a fixed token mapping. Every
// dialogue has a topic word that opens each utterance and the first utterance
// starts with a greeting, so an utterance is predictable from its history
// (including an empty one). Each speaker draws content words from a private set.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "csanct/corpus.hpp"

namespace csanct::testing {

struct SyntheticSpec {
  int dialogues = 200;
  int topics = 20;
  int words_per_speaker = 15;
  int min_turns = 4;
  int max_turns = 6;
  int min_words = 2;
  int max_words = 5;
};

inline std::string source_word(int i) { return "s" + std::to_string(i); }
inline std::string target_word(int i) { return "t" + std::to_string(i); }
inline std::string source_topic(int i) { return "S" + std::to_string(i); }
inline std::string target_topic(int i) { return "T" + std::to_string(i); }

inline std::vector<Dialogue> synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed,
                                              const std::string& prefix = "syn") {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> topic(0, spec.topics - 1), turns(spec.min_turns, spec.max_turns),
      words(spec.min_words, spec.max_words), word(0, spec.words_per_speaker - 1);
  std::vector<Dialogue> out;
  for (int di = 0; di < spec.dialogues; ++di) {
    Dialogue d;
    d.id = prefix + std::to_string(di);
    const int t = topic(rng);
    const int n = turns(rng);
    for (int u = 1; u <= n; ++u) {
      const Speaker s = speaker_for_turn(u);
      const int base = s == Speaker::sx ? 0 : spec.words_per_speaker;
      Utterance utt{u, s, {source_topic(t)}, {target_topic(t)}};
      if (u == 1) {
        utt.source.insert(utt.source.begin(), "hello");
        utt.target.insert(utt.target.begin(), "hallo");
      }
      for (int w = words(rng); w > 0; --w) {
        const int id = base + word(rng);
        utt.source.push_back(source_word(id));
        utt.target.push_back(target_word(id));
      }
      d.utterances.push_back(std::move(utt));
    }
    out.push_back(std::move(d));
  }
  return out;
}

/// Every utterance as a sentence pair, for stage-1 training.
inline std::vector<SentencePair> sentence_pairs(const std::vector<Dialogue>& dialogues) {
  std::vector<SentencePair> out;
  for (const auto& d : dialogues)
    for (const auto& u : d.utterances) out.push_back({u.source, u.target});
  return out;
}

}  // namespace csanct::testing
