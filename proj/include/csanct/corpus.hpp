#pragma once

// Bilingual dialogue data model, vocabulary, history contexts and the
// sample constructors for translation, response generation, next-utterance
// discrimination and speaker identification.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "csanct/error.hpp"

namespace csanct {

using Tokens = std::vector<std::string>;

enum class Speaker : int { sx = 0, sy = 1 };

inline const char* speaker_name(Speaker s) { return s == Speaker::sx ? "sx" : "sy"; }

/// Speakers alternate starting with sx on turn 1.
inline Speaker speaker_for_turn(int turn) { return (turn % 2 == 1) ? Speaker::sx : Speaker::sy; }

inline Tokens tokenize(const std::string& text) {
  Tokens out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline std::string join(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

struct Utterance {
  int turn = 1;
  Speaker speaker = Speaker::sx;
  Tokens source;
  Tokens target;

  bool operator==(const Utterance&) const = default;
};

struct Dialogue {
  std::string id;
  std::vector<Utterance> utterances;

  std::size_t size() const { return utterances.size(); }
  /// Utterance at 1-based turn u.
  const Utterance& turn(int u) const { return utterances.at(static_cast<std::size_t>(u - 1)); }

  bool operator==(const Dialogue&) const = default;
};

struct SentencePair {
  Tokens source;
  Tokens target;
};

// ---------------------------------------------------------------------------
// Vocabulary

namespace special {
inline constexpr const char* pad = "[pad]";
inline constexpr const char* unk = "[unk]";
inline constexpr const char* bos = "[bos]";
inline constexpr const char* eos = "[eos]";
inline constexpr const char* cls = "[cls]";
inline constexpr const char* sep = "[sep]";
inline constexpr int pad_id = 0;
inline constexpr int unk_id = 1;
inline constexpr int bos_id = 2;
inline constexpr int eos_id = 3;
inline constexpr int cls_id = 4;
inline constexpr int sep_id = 5;
inline constexpr int reserved_count = 6;
inline const std::vector<std::string>& reserved() {
  static const std::vector<std::string> r = {pad, unk, bos, eos, cls, sep};
  return r;
}
}  // namespace special

/// Token/id bijection shared by both languages; reserved tokens take ids 0..5.
class Vocabulary {
 public:
  Vocabulary() : Vocabulary(special::reserved()) {}

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    const auto& res = special::reserved();
    if (tokens_.size() < res.size() || !std::equal(res.begin(), res.end(), tokens_.begin())) {
      throw ValidationError("vocabulary must begin with the reserved tokens [pad] [unk] [bos] [eos] [cls] [sep]");
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
        throw ValidationError("duplicate vocabulary entry '" + tokens_[i] + "'");
      }
    }
  }

  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& tok) const { return index_.count(tok) > 0; }

  int id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? special::unk_id : it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw IndexError("vocabulary id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Maps tokens to ids; unknown tokens become [unk] and are counted.
  std::vector<int> encode(const Tokens& toks, std::size_t* unknown = nullptr) const {
    std::vector<int> ids;
    ids.reserve(toks.size());
    for (const auto& t : toks) {
      int i = id(t);
      if (i == special::unk_id && t != special::unk && unknown) ++*unknown;
      ids.push_back(i);
    }
    return ids;
  }

  Tokens decode(const std::vector<int>& ids) const {
    Tokens out;
    for (int i : ids) out.push_back(token(i));
    return out;
  }

  void save(std::ostream& os) const {
    for (const auto& t : tokens_) os << t << '\n';
  }

  static Vocabulary load(std::istream& is) {
    std::vector<std::string> toks;
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      toks.push_back(line);
    }
    return Vocabulary(std::move(toks));
  }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Keeps the most frequent tokens (ties broken lexicographically) of a pooled
/// sentence collection, up to max_size entries including the reserved ones.
inline Vocabulary build_vocabulary(const std::vector<const Tokens*>& sentences, std::size_t max_size,
                                   std::size_t min_count = 1) {
  if (max_size <= static_cast<std::size_t>(special::reserved_count)) {
    throw ConfigError("vocabulary max_size must exceed the number of reserved tokens");
  }
  std::map<std::string, std::size_t> counts;
  for (const auto* s : sentences)
    for (const auto& t : *s) ++counts[t];
  if (counts.empty()) throw ValidationError("cannot build a vocabulary from an empty corpus");
  for (const auto& r : special::reserved()) counts.erase(r);

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = special::reserved();
  for (const auto& [tok, n] : ranked) {
    if (tokens.size() >= max_size) break;
    if (n < min_count) break;
    tokens.push_back(tok);
  }
  return Vocabulary(std::move(tokens));
}

inline Vocabulary build_vocabulary(const std::vector<Dialogue>& dialogues, std::size_t max_size,
                                   std::size_t min_count = 1, const std::vector<SentencePair>* parallel = nullptr) {
  std::vector<const Tokens*> all;
  for (const auto& d : dialogues)
    for (const auto& u : d.utterances) {
      all.push_back(&u.source);
      all.push_back(&u.target);
    }
  if (parallel) {
    for (const auto& p : *parallel) {
      all.push_back(&p.source);
      all.push_back(&p.target);
    }
  }
  return build_vocabulary(all, max_size, min_count);
}

// ---------------------------------------------------------------------------
// Corpus files

struct ParseOptions {
  bool fail_fast = false;
  bool require_target = true;
};

struct ParseIssue {
  std::size_t line = 0;
  std::string message;
};

struct ParsedCorpus {
  std::vector<Dialogue> dialogues;
  std::vector<ParseIssue> issues;
};

namespace detail {

inline Dialogue dialogue_from_json(const nlohmann::json& j, bool require_target) {
  if (!j.is_object()) throw ValidationError("record is not an object");
  if (!j.contains("dialogue_id") || !j["dialogue_id"].is_string()) throw ValidationError("missing dialogue_id");
  if (!j.contains("turns") || !j["turns"].is_array()) throw ValidationError("missing turns array");
  Dialogue d;
  d.id = j["dialogue_id"].get<std::string>();
  if (j["turns"].empty()) throw ValidationError("dialogue has no turns");
  int expected = 1;
  for (const auto& t : j["turns"]) {
    if (!t.contains("turn") || !t["turn"].is_number_integer()) throw ValidationError("turn index missing");
    const int turn = t["turn"].get<int>();
    if (turn != expected) {
      throw ValidationError("turn gap: expected turn " + std::to_string(expected) + ", found " +
                            std::to_string(turn));
    }
    if (!t.contains("speaker") || !t["speaker"].is_string()) throw ValidationError("speaker missing");
    const auto sp = t["speaker"].get<std::string>();
    if (sp != "sx" && sp != "sy") throw ValidationError("unknown speaker '" + sp + "'");
    const Speaker speaker = sp == "sx" ? Speaker::sx : Speaker::sy;
    if (speaker != speaker_for_turn(turn)) {
      throw ValidationError("non-alternating speakers at turn " + std::to_string(turn));
    }
    Utterance u;
    u.turn = turn;
    u.speaker = speaker;
    if (!t.contains("source") || !t["source"].is_string()) throw ValidationError("source missing");
    u.source = tokenize(t["source"].get<std::string>());
    if (u.source.empty()) throw ValidationError("empty source text at turn " + std::to_string(turn));
    if (t.contains("target") && t["target"].is_string()) u.target = tokenize(t["target"].get<std::string>());
    if (require_target && u.target.empty()) {
      throw ValidationError("empty target text at turn " + std::to_string(turn));
    }
    d.utterances.push_back(std::move(u));
    ++expected;
  }
  return d;
}

}  // namespace detail

/// Reads one dialogue per line. Invalid records are skipped and reported,
/// or rethrown with their line number in fail-fast mode.
inline ParsedCorpus parse_dialogue_corpus(std::istream& in, const ParseOptions& opts = {}) {
  ParsedCorpus out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed JSON: ") + e.what());
      }
      out.dialogues.push_back(detail::dialogue_from_json(j, opts.require_target));
    } catch (const ValidationError& e) {
      if (opts.fail_fast) throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
      out.issues.push_back({lineno, e.what()});
    }
  }
  return out;
}

inline std::string serialize_dialogue(const Dialogue& d) {
  nlohmann::ordered_json j;
  j["dialogue_id"] = d.id;
  j["turns"] = nlohmann::ordered_json::array();
  for (const auto& u : d.utterances) {
    nlohmann::ordered_json t;
    t["turn"] = u.turn;
    t["speaker"] = speaker_name(u.speaker);
    t["source"] = join(u.source);
    t["target"] = join(u.target);
    j["turns"].push_back(std::move(t));
  }
  return j.dump();
}

inline void write_dialogue_corpus(std::ostream& os, const std::vector<Dialogue>& dialogues) {
  for (const auto& d : dialogues) os << serialize_dialogue(d) << '\n';
}

/// Tab-separated source/target pairs, one per line.
inline std::vector<SentencePair> parse_parallel_corpus(std::istream& in) {
  std::vector<SentencePair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw ParseError("line " + std::to_string(lineno) + ": expected exactly one tab separator");
    }
    SentencePair p{tokenize(line.substr(0, tab)), tokenize(line.substr(tab + 1))};
    if (p.source.empty() || p.target.empty()) {
      throw ParseError("line " + std::to_string(lineno) + ": empty source or target");
    }
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// History contexts

/// A flattened history: [cls] U1 [sep] U2 ... with per-token origin metadata.
/// [cls] is attributed to sx at turn 0; [sep] inherits the utterance before it.
struct Context {
  Tokens tokens;
  std::vector<Speaker> speakers;
  std::vector<int> turns;
  std::vector<int> utterance_turns;

  bool empty() const { return utterance_turns.empty(); }
};

struct ContextView {
  int u = 1;
  Context cx;     // source-side history
  Context cy;     // target-side history
  Context cy_sx;  // target-side history spoken by sx
  Context cy_sy;  // target-side history spoken by sy
};

enum class Side { source, target };

inline Context build_context(const Dialogue& d, const std::vector<int>& turns, Side side) {
  Context c;
  c.tokens.push_back(special::cls);
  c.speakers.push_back(Speaker::sx);
  c.turns.push_back(0);
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const auto& utt = d.turn(turns[i]);
    if (i > 0) {
      const auto& prev = d.turn(turns[i - 1]);
      c.tokens.push_back(special::sep);
      c.speakers.push_back(prev.speaker);
      c.turns.push_back(prev.turn);
    }
    const auto& toks = side == Side::source ? utt.source : utt.target;
    for (const auto& t : toks) {
      c.tokens.push_back(t);
      c.speakers.push_back(utt.speaker);
      c.turns.push_back(utt.turn);
    }
    c.utterance_turns.push_back(utt.turn);
  }
  return c;
}

/// The four histories of turn u over the k utterances preceding it.
inline ContextView make_context_view(const Dialogue& d, int u, int k) {
  if (u < 1 || static_cast<std::size_t>(u) > d.size()) {
    throw IndexError("turn " + std::to_string(u) + " outside dialogue '" + d.id + "' of " +
                     std::to_string(d.size()) + " turns");
  }
  if (k < 0) throw ConfigError("context window must be non-negative");
  std::vector<int> window, odd, even;
  for (int t = std::max(1, u - k); t < u; ++t) {
    window.push_back(t);
    (speaker_for_turn(t) == Speaker::sx ? odd : even).push_back(t);
  }
  ContextView v;
  v.u = u;
  v.cx = build_context(d, window, Side::source);
  v.cy = build_context(d, window, Side::target);
  v.cy_sx = build_context(d, odd, Side::target);
  v.cy_sy = build_context(d, even, Side::target);
  return v;
}

// ---------------------------------------------------------------------------
// Model inputs

/// Token ids with aligned speaker ids, turn ids and segment flags
/// (1 = current utterance, 0 = history).
struct EncoderInput {
  std::vector<int> ids;
  std::vector<int> speakers;
  std::vector<int> turns;
  std::vector<std::uint8_t> current;

  std::size_t size() const { return ids.size(); }
};

struct NctExample {
  EncoderInput encoder;
  std::vector<int> decoder;  // [bos] Y [eos]

  std::vector<int> decoder_input() const { return {decoder.begin(), decoder.end() - 1}; }
  std::vector<int> decoder_target() const { return {decoder.begin() + 1, decoder.end()}; }
  std::size_t tokens() const { return encoder.size() + decoder.size() - 1; }
};

struct SampleStats {
  std::size_t unknown_tokens = 0;
  std::size_t nud_single_utterance_skips = 0;
  std::size_t nud_collision_skips = 0;
  std::size_t si_empty_context_skips = 0;
};

inline int clip_turn(int turn, int max_turns) { return std::min(turn, max_turns - 1); }

inline void append_context(EncoderInput& in, const Context& c, const Vocabulary& vocab, int max_turns,
                           std::uint8_t flag, SampleStats* stats) {
  for (std::size_t i = 0; i < c.tokens.size(); ++i) {
    std::size_t unk = 0;
    in.ids.push_back(vocab.encode({c.tokens[i]}, &unk).front());
    if (stats) stats->unknown_tokens += unk;
    in.speakers.push_back(static_cast<int>(c.speakers[i]));
    in.turns.push_back(clip_turn(c.turns[i], max_turns));
    in.current.push_back(flag);
  }
}

inline void append_utterance(EncoderInput& in, const Tokens& toks, Speaker speaker, int turn,
                             const Vocabulary& vocab, int max_turns, SampleStats* stats) {
  std::size_t unk = 0;
  for (int id : vocab.encode(toks, &unk)) {
    in.ids.push_back(id);
    in.speakers.push_back(static_cast<int>(speaker));
    in.turns.push_back(clip_turn(turn, max_turns));
    in.current.push_back(1);
  }
  if (stats) stats->unknown_tokens += unk;
}

/// [context ; utterance]. An empty history ([cls] only) joins the utterance
/// segment, so a context-free input is a single fully visible segment.
inline EncoderInput make_source_input(const Context& context, const Tokens& utterance, Speaker speaker, int turn,
                                      const Vocabulary& vocab, int max_turns, SampleStats* stats = nullptr) {
  EncoderInput in;
  append_context(in, context, vocab, max_turns, context.empty() ? 1 : 0, stats);
  append_utterance(in, utterance, speaker, turn, vocab, max_turns, stats);
  return in;
}

inline std::vector<int> make_decoder_ids(const Tokens& target, const Vocabulary& vocab, SampleStats* stats) {
  std::size_t unk = 0;
  std::vector<int> out{special::bos_id};
  for (int id : vocab.encode(target, &unk)) out.push_back(id);
  out.push_back(special::eos_id);
  if (stats) stats->unknown_tokens += unk;
  return out;
}

/// Translation example for turn u: encoder [C_X ; X_u], decoder [bos Y_u eos].
inline NctExample make_nct_example(const ContextView& view, const Dialogue& d, int u, const Vocabulary& vocab,
                                   int max_turns, SampleStats* stats = nullptr) {
  if (view.u != u) throw UsageError("context view was built for a different turn");
  const auto& utt = d.turn(u);
  NctExample ex;
  ex.encoder = make_source_input(view.cx, utt.source, utt.speaker, utt.turn, vocab, max_turns, stats);
  ex.decoder = make_decoder_ids(utt.target, vocab, stats);
  return ex;
}

/// Sentence-level example; identical in layout to a first-turn NCT example.
inline NctExample make_sentence_example(const SentencePair& p, const Vocabulary& vocab, int max_turns,
                                        SampleStats* stats = nullptr) {
  Dialogue d{"", {Utterance{1, Speaker::sx, p.source, p.target}}};
  return make_nct_example(make_context_view(d, 1, 0), d, 1, vocab, max_turns, stats);
}

/// Response-generation example: the history alone is the encoder input.
inline NctExample make_response_example(const Context& history, const Tokens& target, const Vocabulary& vocab,
                                        int max_turns, SampleStats* stats = nullptr) {
  NctExample ex;
  append_context(ex.encoder, history, vocab, max_turns, 1, stats);
  ex.decoder = make_decoder_ids(target, vocab, stats);
  return ex;
}

// ---------------------------------------------------------------------------
// Discrimination samples

/// A (history, candidate utterance, label) triple. The candidate is placed in
/// the slot of turn u, so it carries that turn's speaker and turn index.
struct PairSample {
  Context context;
  Tokens candidate;
  Speaker slot_speaker = Speaker::sx;
  int slot_turn = 1;
  int label = 0;
};

using NudSample = PairSample;
using SiSample = PairSample;

/// Every target utterance of a corpus, addressable for negative sampling.
class TargetPool {
 public:
  explicit TargetPool(const std::vector<Dialogue>& dialogues) {
    for (const auto& d : dialogues)
      for (const auto& u : d.utterances) entries_.push_back({d.id, u.turn, &u.target});
  }

  std::size_t size() const { return entries_.size(); }
  const Tokens& target(std::size_t i) const { return *entries_.at(i).tokens; }

  std::optional<std::size_t> index_of(const std::string& dialogue_id, int turn) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].turn == turn && entries_[i].dialogue_id == dialogue_id) return i;
    return std::nullopt;
  }

 private:
  struct Entry {
    std::string dialogue_id;
    int turn;
    const Tokens* tokens;
  };
  std::vector<Entry> entries_;
};

/// Positive (C_Y, Y_u, 1) and negative (C_Y, Y⁻, 0) with Y⁻ drawn uniformly
/// from every other target utterance; token-identical draws are redrawn, at
/// most 10 draws in total.
inline std::optional<std::pair<NudSample, NudSample>> make_nud_samples(const ContextView& view, const Dialogue& d,
                                                                      int u, const TargetPool& pool,
                                                                      std::mt19937_64& rng,
                                                                      SampleStats* stats = nullptr) {
  const auto& utt = d.turn(u);
  const auto self = pool.index_of(d.id, u);
  const std::size_t eligible = pool.size() - (self ? 1 : 0);
  if (eligible == 0) {
    if (stats) ++stats->nud_single_utterance_skips;
    return std::nullopt;
  }
  std::uniform_int_distribution<std::size_t> pick(0, eligible - 1);
  for (int attempt = 0; attempt < 10; ++attempt) {
    std::size_t j = pick(rng);
    if (self && j >= *self) ++j;
    const auto& cand = pool.target(j);
    if (cand == utt.target) continue;
    NudSample pos{view.cy, utt.target, utt.speaker, u, 1};
    NudSample neg{view.cy, cand, utt.speaker, u, 0};
    return std::make_pair(std::move(pos), std::move(neg));
  }
  if (stats) ++stats->nud_collision_skips;
  return std::nullopt;
}

/// Positive pairs Y_u with the history of its own speaker, negative with the
/// other speaker's; nothing when either speaker history is empty.
inline std::optional<std::pair<SiSample, SiSample>> make_si_samples(const ContextView& view, const Dialogue& d, int u,
                                                                   SampleStats* stats = nullptr) {
  const auto& utt = d.turn(u);
  const Context& own = utt.speaker == Speaker::sx ? view.cy_sx : view.cy_sy;
  const Context& other = utt.speaker == Speaker::sx ? view.cy_sy : view.cy_sx;
  if (own.empty() || other.empty()) {
    if (stats) ++stats->si_empty_context_skips;
    return std::nullopt;
  }
  SiSample pos{own, utt.target, utt.speaker, u, 1};
  SiSample neg{other, utt.target, utt.speaker, u, 0};
  return std::make_pair(std::move(pos), std::move(neg));
}

/// Encoder inputs of a pair sample: history (segment 0) and candidate (segment 1).
struct PairInput {
  EncoderInput context;
  EncoderInput candidate;
  int label = 0;
};

inline PairInput make_pair_input(const PairSample& s, const Vocabulary& vocab, int max_turns,
                                 SampleStats* stats = nullptr) {
  PairInput p;
  append_context(p.context, s.context, vocab, max_turns, 0, stats);
  append_utterance(p.candidate, s.candidate, s.slot_speaker, s.slot_turn, vocab, max_turns, stats);
  p.label = s.label;
  return p;
}

}  // namespace csanct
