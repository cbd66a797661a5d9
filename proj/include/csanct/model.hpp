#pragma once

// Context-aware transformer translator with speaker/turn embeddings, gated
// history attention, three generation heads and two pair classifiers.
//
// Sub-layers are pre-norm (x + F(LN(x))) with a final layer norm on both
// stacks. Weight matrices are stored [out×in].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csanct/autodiff.hpp"
#include "csanct/corpus.hpp"
#include "csanct/error.hpp"

namespace csanct {

struct ModelConfig {
  int layers = 2;
  int d_model = 32;
  int d_ff = 64;
  int heads = 4;
  int vocab_size = 64;
  int max_turns = 10;
  int max_pos = 256;
  Real dropout = 0.1;
  bool share_aux_heads_with_main = false;
  // Decoder cross-attention over history positions as well as the utterance.
  bool cross_attend_context = false;
  // Encode NUD/SI pairs as one [history ; candidate] sequence instead of two passes.
  bool pair_joint_encoding = true;
  std::string activation = "relu";
  Real layer_norm_eps = 1e-6;
  Real init_std = 0.02;

  void validate() const {
    if (layers < 1) throw ConfigError("layers must be >= 1");
    if (d_model < 1 || heads < 1 || d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
    if (d_ff < 1) throw ConfigError("d_ff must be >= 1");
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (max_turns < 1) throw ConfigError("max_turns must be >= 1");
    if (max_pos < 1) throw ConfigError("max_pos must be >= 1");
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must lie in [0,1)");
    if (activation != "relu" && activation != "gelu") throw ConfigError("activation must be relu or gelu");
    if (!(layer_norm_eps > 0)) throw ConfigError("layer_norm_eps must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

enum class Head { main, mrg, crg };
enum class Classifier { nud, si };

/// Dropout switch for one forward pass; inactive without a generator.
struct Dropout {
  Real rate = 0;
  std::mt19937_64* rng = nullptr;
};

// ---------------------------------------------------------------------------
// Parameters

/// Named trainable tensors in a fixed creation order.
class ModelParams {
 public:
  void add(std::string name, Tensor t) {
    if (index_.count(name)) throw UsageError("duplicate parameter " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(std::move(name), std::move(t));
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter " + name);
    return entries_[it->second].second;
  }
  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter " + name);
    return entries_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

  /// Auxiliary-task parameters: the MRG/CRG heads and the NUD/SI classifiers.
  static bool is_aux(const std::string& name) {
    return name.rfind("head.mrg.", 0) == 0 || name.rfind("head.crg.", 0) == 0 || name.rfind("cls.", 0) == 0;
  }

  /// Translation path θ (excludes auxiliary heads).
  std::vector<std::pair<std::string, Tensor>> theta() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& e : entries_)
      if (!is_aux(e.first)) out.push_back(e);
    return out;
  }

  /// Every parameter Θ.
  const std::vector<std::pair<std::string, Tensor>>& all() const { return entries_; }

  void zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }

  /// Deep copy with fresh leaves.
  ModelParams clone() const {
    ModelParams out;
    for (const auto& [name, t] : entries_) out.add(name, t.detach(true));
    return out;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Attention masks

struct AttentionMask {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<std::uint8_t> visible;  // row-major queries×keys

  bool at(std::size_t q, std::size_t k) const { return visible.at(q * keys + k) != 0; }
};

/// Layer 1 is fully visible; above it, history and current-utterance
/// positions only see their own segment.
inline AttentionMask encoder_self_mask(std::span<const std::uint8_t> current, int layer) {
  if (layer < 1) throw UsageError("encoder layers are numbered from 1");
  const std::size_t n = current.size();
  AttentionMask m{n, n, std::vector<std::uint8_t>(n * n, 1)};
  if (layer == 1) return m;
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t k = 0; k < n; ++k) m.visible[q * n + k] = (current[q] != 0) == (current[k] != 0) ? 1 : 0;
  return m;
}

inline AttentionMask causal_mask(std::size_t t) {
  AttentionMask m{t, t, std::vector<std::uint8_t>(t * t, 0)};
  for (std::size_t q = 0; q < t; ++q)
    for (std::size_t k = 0; k <= q; ++k) m.visible[q * t + k] = 1;
  return m;
}

/// Decoder queries see only current-utterance encoder positions unless
/// attend_context is set.
inline AttentionMask cross_attention_mask(std::size_t t, std::span<const std::uint8_t> current, bool attend_context) {
  const std::size_t n = current.size();
  AttentionMask m{t, n, std::vector<std::uint8_t>(t * n, 1)};
  if (attend_context) return m;
  bool any = false;
  for (std::size_t k = 0; k < n; ++k) any = any || current[k] != 0;
  if (!any) throw UsageError("cross-attention needs at least one current-utterance position");
  for (std::size_t q = 0; q < t; ++q)
    for (std::size_t k = 0; k < n; ++k) m.visible[q * n + k] = current[k];
  return m;
}

// ---------------------------------------------------------------------------

struct EncoderOutput {
  Tensor states;  // [len×d], top layer
  std::vector<std::uint8_t> current;
  std::vector<int> ids;
};

struct PairRepresentation {
  Tensor utterance;  // H_Y
  Tensor context;    // H_C
};

/// Fixed sinusoidal position table [max_pos×d].
inline Tensor sinusoidal_positions(int max_pos, int d) {
  std::vector<Real> pe(static_cast<std::size_t>(max_pos) * static_cast<std::size_t>(d));
  for (int p = 0; p < max_pos; ++p)
    for (int i = 0; i < d; ++i) {
      const Real rate = std::pow(10000.0, -static_cast<Real>(2 * (i / 2)) / d);
      pe[static_cast<std::size_t>(p * d + i)] = (i % 2 == 0) ? std::sin(p * rate) : std::cos(p * rate);
    }
  return Tensor({static_cast<std::size_t>(max_pos), static_cast<std::size_t>(d)}, std::move(pe));
}

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    build(rng, /*only_aux=*/false);
    positions_ = sinusoidal_positions(cfg_.max_pos, cfg_.d_model);
  }

  /// Adopts existing parameters; shapes are validated against the config.
  Model(ModelConfig cfg, ModelParams params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
    Model reference(cfg_, 0);
    for (const auto& [name, t] : reference.params_.entries()) {
      if (!params_.contains(name)) throw ValidationError("missing parameter " + name);
      if (params_.at(name).shape() != t.shape()) {
        throw ValidationError("parameter " + name + " has shape " + shape_str(params_.at(name).shape()) +
                              ", config expects " + shape_str(t.shape()));
      }
    }
    positions_ = sinusoidal_positions(cfg_.max_pos, cfg_.d_model);
  }

  const ModelConfig& config() const { return cfg_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  /// Redraws the auxiliary heads from a seed (fresh heads on top of θ).
  void reinitialize_aux(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ModelParams fresh;
    std::swap(fresh, params_);
    for (const auto& [name, t] : fresh.entries())
      if (!ModelParams::is_aux(name)) params_.add(name, t);
    build(rng, /*only_aux=*/true);
  }

  Dropout training(std::mt19937_64& rng) const { return Dropout{cfg_.dropout, &rng}; }

  /// WE(x)·√d, so token identity is not swamped by the unit-scale positions.
  Tensor word_embedding(std::span<const int> ids) const {
    return scale(embedding(params_.at("embed.word"), ids), std::sqrt(static_cast<Real>(cfg_.d_model)));
  }

  // WE + PE + SE + TE
  Tensor embed(std::span<const int> ids, std::span<const int> positions, std::span<const int> speakers,
               std::span<const int> turns, const Dropout& drop = {}) const {
    if (ids.size() != positions.size() || ids.size() != speakers.size() || ids.size() != turns.size()) {
      throw DimensionError("embed: ids, positions, speakers and turns must align");
    }
    auto x = add(word_embedding(ids), embedding(positions_, positions));
    x = add(x, embedding(params_.at("embed.speaker"), speakers));
    x = add(x, embedding(params_.at("embed.turn"), turns));
    return dropout(x, drop.rate, drop.rng);
  }

  EncoderOutput encode(const EncoderInput& in, const Dropout& drop = {}) const {
    const std::size_t n = in.size();
    if (n == 0) throw UsageError("encode: empty sequence");
    if (in.current.size() != n || in.speakers.size() != n || in.turns.size() != n) {
      throw DimensionError("encode: segment flags do not match sequence length");
    }
    std::vector<int> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = static_cast<int>(i);
    Tensor h = embed(in.ids, pos, in.speakers, in.turns, drop);
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string p = "enc." + std::to_string(l) + ".";
      const auto mask = encoder_self_mask(in.current, l + 1);
      auto a = norm(h, p + "ln1");
      h = add(h, dropout(attention(a, a, p + "attn", mask), drop.rate, drop.rng));
      h = add(h, dropout(feed_forward(norm(h, p + "ln2"), p + "ffn"), drop.rate, drop.rng));
    }
    return {norm(h, "enc.norm"), in.current, in.ids};
  }

  /// Top decoder states h^L_d for a prefix starting with [bos].
  Tensor decode(std::span<const int> prefix, const EncoderOutput& enc, const Dropout& drop = {}) const {
    const std::size_t t = prefix.size();
    if (t == 0) throw UsageError("decode: empty prefix");
    std::vector<int> pos(t);
    for (std::size_t i = 0; i < t; ++i) pos[i] = static_cast<int>(i);
    Tensor x = add(word_embedding(prefix), embedding(positions_, pos));
    x = dropout(x, drop.rate, drop.rng);
    const auto self_mask = causal_mask(t);
    const auto cross_mask = cross_attention_mask(t, enc.current, cfg_.cross_attend_context);
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string p = "dec." + std::to_string(l) + ".";
      auto a = norm(x, p + "ln1");
      x = add(x, dropout(attention(a, a, p + "self", self_mask), drop.rate, drop.rng));
      x = add(x, dropout(attention(norm(x, p + "ln2"), enc.states, p + "cross", cross_mask), drop.rate, drop.rng));
      x = add(x, dropout(feed_forward(norm(x, p + "ln3"), p + "ffn"), drop.rate, drop.rng));
    }
    return norm(x, "dec.norm");
  }

  /// Logits W h + b of the selected generation head.
  Tensor project(const Tensor& states, Head head) const {
    const std::string p = head_prefix(head);
    return linear(states, params_.at(p + "weight"), params_.at(p + "bias"));
  }

  /// Mean of the top-layer states over rows [begin, end).
  static Tensor pool_utterance(const Tensor& states, std::size_t begin, std::size_t end) {
    if (begin >= end) throw UsageError("pool_utterance: empty span");
    return mean_rows(states, begin, end);
  }

  /// Top-layer state of the leading [cls] token.
  static Tensor cls_state(const EncoderOutput& enc) {
    if (enc.ids.empty() || enc.ids.front() != special::cls_id) {
      throw UsageError("cls_state: input does not begin with [cls]");
    }
    return row(enc.states, 0);
  }

  Tensor classify_logits(const Tensor& utterance, const Tensor& context, Classifier which) const {
    const auto& w = params_.at(which == Classifier::nud ? "cls.nud.weight" : "cls.si.weight");
    auto joined = concat({utterance, context});
    return reshape(matmul_nt(reshape(joined, {1, joined.dim(0)}), w), {2});
  }

  /// (p(ℓ=0), p(ℓ=1)) from softmax(W [H_Y ; H_C]).
  Tensor classify(const Tensor& utterance, const Tensor& context, Classifier which) const {
    return softmax(classify_logits(utterance, context, which));
  }

  PairRepresentation represent_pair(const PairInput& pair, const Dropout& drop = {}) const {
    if (pair.candidate.size() == 0) throw UsageError("represent_pair: empty candidate");
    if (cfg_.pair_joint_encoding) {
      EncoderInput joined = pair.context;
      joined.ids.insert(joined.ids.end(), pair.candidate.ids.begin(), pair.candidate.ids.end());
      joined.speakers.insert(joined.speakers.end(), pair.candidate.speakers.begin(), pair.candidate.speakers.end());
      joined.turns.insert(joined.turns.end(), pair.candidate.turns.begin(), pair.candidate.turns.end());
      joined.current.insert(joined.current.end(), pair.candidate.current.begin(), pair.candidate.current.end());
      auto enc = encode(joined, drop);
      return {pool_utterance(enc.states, pair.context.size(), joined.size()), cls_state(enc)};
    }
    auto ctx = encode(pair.context, drop);
    auto cand = encode(pair.candidate, drop);
    return {pool_utterance(cand.states, 0, pair.candidate.size()), cls_state(ctx)};
  }

  std::string head_prefix(Head head) const {
    if (head == Head::main || cfg_.share_aux_heads_with_main) return "head.main.";
    if (head == Head::mrg) return "head.mrg.";
    if (head == Head::crg) return "head.crg.";
    throw UsageError("unknown head");
  }

 private:
  Tensor norm(const Tensor& x, const std::string& p) const {
    return layer_norm(x, params_.at(p + ".gain"), params_.at(p + ".bias"), cfg_.layer_norm_eps);
  }

  Tensor feed_forward(const Tensor& x, const std::string& p) const {
    auto h = linear(x, params_.at(p + ".in.weight"), params_.at(p + ".in.bias"));
    h = cfg_.activation == "gelu" ? gelu(h) : relu(h);
    return linear(h, params_.at(p + ".out.weight"), params_.at(p + ".out.bias"));
  }

  Tensor attention(const Tensor& query_in, const Tensor& memory, const std::string& p,
                   const AttentionMask& mask) const {
    auto q = linear(query_in, params_.at(p + ".q.weight"), params_.at(p + ".q.bias"));
    auto k = linear(memory, params_.at(p + ".k.weight"), params_.at(p + ".k.bias"));
    auto v = linear(memory, params_.at(p + ".v.weight"), params_.at(p + ".v.bias"));
    const auto heads = static_cast<std::size_t>(cfg_.heads);
    const std::size_t dh = static_cast<std::size_t>(cfg_.d_model) / heads;
    const Real inv_sqrt = Real{1} / std::sqrt(static_cast<Real>(dh));
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      auto qh = heads == 1 ? q : slice_cols(q, h * dh, (h + 1) * dh);
      auto kh = heads == 1 ? k : slice_cols(k, h * dh, (h + 1) * dh);
      auto vh = heads == 1 ? v : slice_cols(v, h * dh, (h + 1) * dh);
      auto scores = apply_mask(scale(matmul_nt(qh, kh), inv_sqrt), mask.visible);
      outs.push_back(matmul(softmax(scores), vh));
    }
    auto joined = heads == 1 ? outs.front() : concat_cols(outs);
    return linear(joined, params_.at(p + ".o.weight"), params_.at(p + ".o.bias"));
  }

  void build(std::mt19937_64& rng, bool only_aux) {
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const auto ff = static_cast<std::size_t>(cfg_.d_ff);
    const auto v = static_cast<std::size_t>(cfg_.vocab_size);
    auto normal = [&](Shape s) {
      std::normal_distribution<Real> dist(0.0, cfg_.init_std);
      std::vector<Real> vals(shape_numel(s));
      for (auto& x : vals) {
        do {
          x = dist(rng);
        } while (std::abs(x) > 2 * cfg_.init_std);
      }
      return Tensor(std::move(s), std::move(vals), true);
    };
    auto zeros = [](Shape s) { return Tensor::zeros(std::move(s), true); };
    auto ones = [](Shape s) { return Tensor::full(std::move(s), 1.0, true); };
    auto add_linear = [&](const std::string& p, std::size_t out, std::size_t in) {
      params_.add(p + ".weight", normal({out, in}));
      params_.add(p + ".bias", zeros({out}));
    };
    auto add_norm = [&](const std::string& p) {
      params_.add(p + ".gain", ones({d}));
      params_.add(p + ".bias", zeros({d}));
    };
    auto add_attention = [&](const std::string& p) {
      for (const char* part : {".q", ".k", ".v", ".o"}) add_linear(p + part, d, d);
    };

    if (!only_aux) {
      params_.add("embed.word", normal({v, d}));
      params_.add("embed.speaker", normal({2, d}));
      params_.add("embed.turn", normal({static_cast<std::size_t>(cfg_.max_turns), d}));
      for (int l = 0; l < cfg_.layers; ++l) {
        const std::string p = "enc." + std::to_string(l) + ".";
        add_norm(p + "ln1");
        add_attention(p + "attn");
        add_norm(p + "ln2");
        add_linear(p + "ffn.in", ff, d);
        add_linear(p + "ffn.out", d, ff);
      }
      add_norm("enc.norm");
      for (int l = 0; l < cfg_.layers; ++l) {
        const std::string p = "dec." + std::to_string(l) + ".";
        add_norm(p + "ln1");
        add_attention(p + "self");
        add_norm(p + "ln2");
        add_attention(p + "cross");
        add_norm(p + "ln3");
        add_linear(p + "ffn.in", ff, d);
        add_linear(p + "ffn.out", d, ff);
      }
      add_norm("dec.norm");
      add_linear("head.main", v, d);
    }
    if (!cfg_.share_aux_heads_with_main) {
      add_linear("head.mrg", v, d);
      add_linear("head.crg", v, d);
    }
    params_.add("cls.nud.weight", normal({2, 2 * d}));
    params_.add("cls.si.weight", normal({2, 2 * d}));
  }

  ModelConfig cfg_;
  ModelParams params_;
  Tensor positions_;
};

}  // namespace csanct
