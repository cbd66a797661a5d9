#pragma once

// Corpus BLEU with exponential smoothing, TER with block shifts (exact search
// on short hypotheses, greedy otherwise), and dialogue coherence as cosine
// similarity of mean word vectors.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "csanct/corpus.hpp"
#include "csanct/error.hpp"

namespace csanct {

// ---------------------------------------------------------------------------
// BLEU

enum class BleuSmoothing { none, exp };

struct BleuReport {
  double score = 0;                         // [0, 100]
  std::array<double, 4> precisions{};       // smoothed, as fractions
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  double brevity_penalty = 1;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
};

namespace detail {

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(const Tokens& toks, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> out;
  if (toks.size() < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[Tokens(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                                                  toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

}  // namespace detail

/// Corpus-level BLEU-4 against a single reference per segment.
inline BleuReport corpus_bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs,
                              BleuSmoothing smoothing = BleuSmoothing::exp) {
  if (hyps.empty()) throw UsageError("corpus_bleu: empty hypothesis set");
  if (hyps.size() != refs.size()) throw UsageError("corpus_bleu: hypothesis/reference count mismatch");
  BleuReport r;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    r.hyp_len += hyps[s].size();
    r.ref_len += refs[s].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = detail::ngram_counts(hyps[s], n);
      const auto ref = detail::ngram_counts(refs[s], n);
      for (const auto& [gram, c] : h) {
        auto it = ref.find(gram);
        if (it != ref.end()) r.matches[n - 1] += std::min(c, it->second);
        r.totals[n - 1] += c;
      }
    }
  }
  double inv_smooth = 1;
  double log_sum = 0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    if (r.totals[n] == 0) {
      r.precisions[n] = 0;
      zero = true;
      continue;
    }
    if (r.matches[n] == 0) {
      if (smoothing == BleuSmoothing::exp) {
        inv_smooth *= 2;
        r.precisions[n] = 1.0 / (inv_smooth * static_cast<double>(r.totals[n]));
      } else {
        r.precisions[n] = 0;
        zero = true;
        continue;
      }
    } else {
      r.precisions[n] = static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]);
    }
    log_sum += std::log(r.precisions[n]);
  }
  if (r.hyp_len == 0) {
    r.brevity_penalty = 0;
  } else if (r.hyp_len < r.ref_len) {
    r.brevity_penalty = std::exp(1.0 - static_cast<double>(r.ref_len) / static_cast<double>(r.hyp_len));
  }
  r.score = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

inline Tokens lowercase_tokens(const Tokens& toks) {
  Tokens out;
  for (auto t : toks) {
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(std::move(t));
  }
  return out;
}

/// Splits every token into UTF-8 characters (character-level scoring).
inline Tokens split_characters(const Tokens& toks) {
  Tokens out;
  for (const auto& t : toks) {
    std::size_t i = 0;
    while (i < t.size()) {
      const auto c = static_cast<unsigned char>(t[i]);
      std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 1;
      len = std::min(len, t.size() - i);
      out.push_back(t.substr(i, len));
      i += len;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// TER

inline std::size_t edit_distance(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Moves the block [start, start+len) so that it begins at `dest` in the result.
inline Tokens apply_shift(const Tokens& seq, std::size_t start, std::size_t len, std::size_t dest) {
  Tokens block(seq.begin() + static_cast<std::ptrdiff_t>(start), seq.begin() + static_cast<std::ptrdiff_t>(start + len));
  Tokens rest;
  rest.reserve(seq.size() - len);
  rest.insert(rest.end(), seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(start));
  rest.insert(rest.end(), seq.begin() + static_cast<std::ptrdiff_t>(start + len), seq.end());
  rest.insert(rest.begin() + static_cast<std::ptrdiff_t>(dest), block.begin(), block.end());
  return rest;
}

struct TerOptions {
  std::size_t max_shift_distance = 10;
  std::size_t max_block = 10;
  // Hypotheses up to this length get an exact search over shift sequences;
  // longer ones use the greedy loop. 0 forces greedy everywhere.
  std::size_t exact_max_len = 6;
};

struct TerEdits {
  std::size_t shifts = 0;
  std::size_t edits = 0;  // shifts + residual insertions/deletions/substitutions
};

/// Calls visit(shifted) for every block shift allowed by the options.
template <typename Visit>
void for_each_shift(const Tokens& cur, const TerOptions& opt, Visit&& visit) {
  for (std::size_t start = 0; start < cur.size(); ++start) {
    for (std::size_t len = 1; len <= opt.max_block && start + len <= cur.size(); ++len) {
      const std::size_t slots = cur.size() - len;
      for (std::size_t dest = 0; dest <= slots; ++dest) {
        if (dest == start) continue;
        const std::size_t moved = dest > start ? dest - start : start - dest;
        if (moved > opt.max_shift_distance) continue;
        visit(apply_shift(cur, start, len, dest));
      }
    }
  }
}

/// Greedy shift loop: repeatedly applies the shift that lowers the edit
/// distance most, as long as it lowers it strictly.
inline TerEdits ter_edits_greedy(const Tokens& hyp, const Tokens& ref, const TerOptions& opt = {}) {
  Tokens cur = hyp;
  std::size_t dist = edit_distance(cur, ref);
  TerEdits out;
  while (dist > 0 && cur.size() > 1) {
    std::size_t best_dist = dist;
    Tokens best;
    for_each_shift(cur, opt, [&](Tokens cand) {
      const auto d = edit_distance(cand, ref);
      if (d < best_dist) {
        best_dist = d;
        best = std::move(cand);
      }
    });
    if (best_dist >= dist) break;
    cur = std::move(best);
    dist = best_dist;
    ++out.shifts;
  }
  out.edits = out.shifts + dist;
  return out;
}

/// Minimum of (shifts + edit distance) over all shift sequences, level by
/// level; a level is expanded only while one more shift could still win.
inline TerEdits ter_edits_exact(const Tokens& hyp, const Tokens& ref, const TerOptions& opt = {}) {
  TerEdits best{0, edit_distance(hyp, ref)};
  std::set<Tokens> seen{hyp};
  std::vector<Tokens> level{hyp};
  for (std::size_t k = 1; k < best.edits && !level.empty(); ++k) {
    std::vector<Tokens> next;
    for (const auto& cur : level) {
      for_each_shift(cur, opt, [&](Tokens cand) {
        if (!seen.insert(cand).second) return;
        const std::size_t total = k + edit_distance(cand, ref);
        if (total < best.edits) best = {k, total};
        next.push_back(std::move(cand));
      });
    }
    level = std::move(next);
  }
  return best;
}

inline TerEdits ter_edits(const Tokens& hyp, const Tokens& ref, const TerOptions& opt = {}) {
  return hyp.size() <= opt.exact_max_len ? ter_edits_exact(hyp, ref, opt) : ter_edits_greedy(hyp, ref, opt);
}

/// Translation edit rate in percent.
inline double ter(const Tokens& hyp, const Tokens& ref, const TerOptions& opt = {}) {
  if (ref.empty()) throw UsageError("ter: empty reference");
  return 100.0 * static_cast<double>(ter_edits(hyp, ref, opt).edits) / static_cast<double>(ref.size());
}

/// Total edits over total reference length, in percent.
inline double corpus_ter(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, const TerOptions& opt = {}) {
  if (hyps.empty() || hyps.size() != refs.size()) throw UsageError("corpus_ter: mismatched or empty input");
  std::size_t edits = 0, len = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    if (refs[i].empty()) throw UsageError("corpus_ter: empty reference at segment " + std::to_string(i));
    edits += ter_edits(hyps[i], refs[i], opt).edits;
    len += refs[i].size();
  }
  return 100.0 * static_cast<double>(edits) / static_cast<double>(len);
}

// ---------------------------------------------------------------------------
// Coherence

struct WordVectorTable {
  std::size_t dim = 100;
  std::unordered_map<std::string, std::vector<double>> vectors;

  const std::vector<double>* find(const std::string& w) const {
    auto it = vectors.find(w);
    return it == vectors.end() ? nullptr : &it->second;
  }
};

/// Text format: `word v1 ... vd` per line with an optional `count dim` header.
inline WordVectorTable load_word_vectors(std::istream& in, std::size_t dim = 100) {
  WordVectorTable table;
  table.dim = dim;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto fields = tokenize(line);
    if (fields.empty()) continue;
    if (lineno == 1 && fields.size() == 2) {
      bool numeric = std::all_of(fields.begin(), fields.end(), [](const std::string& f) {
        return !f.empty() && std::all_of(f.begin(), f.end(), [](unsigned char c) { return std::isdigit(c); });
      });
      if (numeric) continue;
    }
    if (fields.size() != dim + 1) {
      throw ParseError("word vectors line " + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                       " values, found " + std::to_string(fields.size() - 1));
    }
    std::vector<double> v(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      try {
        std::size_t used = 0;
        v[i] = std::stod(fields[i + 1], &used);
        if (used != fields[i + 1].size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw ParseError("word vectors line " + std::to_string(lineno) + ": bad number '" + fields[i + 1] + "'");
      }
    }
    table.vectors[fields[0]] = std::move(v);
  }
  if (table.vectors.empty()) throw ParseError("word vector file has no entries");
  return table;
}

inline WordVectorTable load_word_vectors(const std::string& path, std::size_t dim = 100) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open word vector file " + path);
  return load_word_vectors(in, dim);
}

/// Mean of the in-vocabulary word vectors; nullopt when every word is OOV.
inline std::optional<std::vector<double>> sentence_vector(const Tokens& s, const WordVectorTable& table) {
  std::vector<double> acc(table.dim, 0.0);
  std::size_t n = 0;
  for (const auto& w : s) {
    if (const auto* v = table.find(w)) {
      for (std::size_t i = 0; i < table.dim; ++i) acc[i] += (*v)[i];
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  for (auto& x : acc) x /= static_cast<double>(n);
  return acc;
}

/// cos(f(s1), f(s2)); nullopt when either side has no usable vector.
inline std::optional<double> coherence_sim(const Tokens& s1, const Tokens& s2, const WordVectorTable& table) {
  auto a = sentence_vector(s1, table);
  auto b = sentence_vector(s2, table);
  if (!a || !b) return std::nullopt;
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < table.dim; ++i) {
    dot += (*a)[i] * (*b)[i];
    na += (*a)[i] * (*a)[i];
    nb += (*b)[i] * (*b)[i];
  }
  if (na == 0 || nb == 0) return std::nullopt;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct CoherenceReport {
  std::vector<std::optional<double>> mean;  // index n-1
  std::vector<std::size_t> pairs;
  std::size_t skipped = 0;                  // pairs with undefined similarity
};

/// For n = 1..max_n: mean similarity between the translation of turn u and
/// the reference target utterance of turn u-n.
inline CoherenceReport coherence_report(const std::vector<std::vector<Tokens>>& translations,
                                        const std::vector<Dialogue>& dialogues, const WordVectorTable& table,
                                        int max_n = 3) {
  if (translations.size() != dialogues.size()) throw UsageError("coherence_report: dialogue count mismatch");
  CoherenceReport r;
  r.mean.assign(static_cast<std::size_t>(max_n), std::nullopt);
  r.pairs.assign(static_cast<std::size_t>(max_n), 0);
  std::vector<double> sums(static_cast<std::size_t>(max_n), 0.0);
  for (std::size_t di = 0; di < dialogues.size(); ++di) {
    const auto& d = dialogues[di];
    if (translations[di].size() != d.size()) {
      throw UsageError("coherence_report: dialogue '" + d.id + "' has mismatched translation count");
    }
    for (int u = 1; u <= static_cast<int>(d.size()); ++u) {
      for (int n = 1; n <= max_n && u - n >= 1; ++n) {
        auto sim = coherence_sim(translations[di][static_cast<std::size_t>(u - 1)], d.turn(u - n).target, table);
        if (!sim) {
          ++r.skipped;
          continue;
        }
        sums[static_cast<std::size_t>(n - 1)] += *sim;
        ++r.pairs[static_cast<std::size_t>(n - 1)];
      }
    }
  }
  for (std::size_t i = 0; i < sums.size(); ++i)
    if (r.pairs[i] > 0) r.mean[i] = sums[i] / static_cast<double>(r.pairs[i]);
  return r;
}

}  // namespace csanct
