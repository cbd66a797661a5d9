#pragma once

// Binary checkpoint container:
//   "CSANCTCK" | u32 version | u64 header bytes | JSON header | float64 values
// The header holds the model config, the vocabulary, the checkpoint kind and
// the name/shape of every tensor; values follow in header order, little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "csanct/config.hpp"
#include "csanct/corpus.hpp"
#include "csanct/error.hpp"
#include "csanct/model.hpp"

namespace csanct {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char checkpoint_magic[8] = {'C', 'S', 'A', 'N', 'C', 'T', 'C', 'K'};
inline constexpr std::uint32_t checkpoint_version = 1;

enum class CheckpointKind { theta, full };

struct Checkpoint {
  CheckpointKind kind = CheckpointKind::full;
  ModelConfig config;
  std::optional<Vocabulary> vocab;
  ModelParams params;
};

/// What a load produced, per parameter.
struct LoadManifest {
  std::vector<std::string> loaded;
  std::vector<std::string> freshly_initialized;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    for (const auto& n : loaded) j[n] = "loaded";
    for (const auto& n : freshly_initialized) j[n] = "freshly initialized";
    return j;
  }
};

inline nlohmann::ordered_json model_config_json(const ModelConfig& m) {
  RunConfig rc;
  rc.model = m;
  const auto all = config_to_json(rc);
  nlohmann::ordered_json out;
  for (const char* key : {"layers", "d_model", "d_ff", "heads", "vocab_size", "max_turns", "max_pos", "dropout",
                          "share_aux_heads_with_main", "cross_attend_context", "pair_joint_encoding", "activation",
                          "layer_norm_eps", "init_std"})
    out[key] = all[key];
  return out;
}

inline void save_checkpoint(std::ostream& os, const ModelParams& params, const ModelConfig& config,
                            CheckpointKind kind, const Vocabulary* vocab = nullptr) {
  nlohmann::ordered_json header;
  header["kind"] = kind == CheckpointKind::theta ? "theta" : "full";
  header["model"] = model_config_json(config);
  if (vocab) {
    nlohmann::ordered_json toks = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < vocab->size(); ++i) toks.push_back(vocab->token(static_cast<int>(i)));
    header["vocab"] = toks;
  }
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for (const auto& [name, t] : params.entries()) {
    if (kind == CheckpointKind::theta && ModelParams::is_aux(name)) continue;
    tensors.push_back({{"name", name}, {"shape", t.shape()}});
  }
  header["tensors"] = tensors;
  const std::string text = header.dump();
  const std::uint64_t len = text.size();
  os.write(checkpoint_magic, sizeof checkpoint_magic);
  os.write(reinterpret_cast<const char*>(&checkpoint_version), sizeof checkpoint_version);
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : params.entries()) {
    if (kind == CheckpointKind::theta && ModelParams::is_aux(name)) continue;
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(Real)));
  }
  if (!os) throw Error("failed writing checkpoint");
}

inline void save_checkpoint(const std::string& path, const ModelParams& params, const ModelConfig& config,
                            CheckpointKind kind, const Vocabulary* vocab = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot create checkpoint " + path);
  save_checkpoint(os, params, config, kind, vocab);
}

namespace detail {

inline void read_exact(std::istream& is, char* dst, std::size_t n, const std::string& what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw ParseError("truncated checkpoint: " + what);
}

}  // namespace detail

/// Reads a checkpoint and validates every tensor shape against its config.
inline Checkpoint load_checkpoint(std::istream& is) {
  char magic[8];
  detail::read_exact(is, magic, sizeof magic, "magic");
  if (std::memcmp(magic, checkpoint_magic, sizeof magic) != 0) throw ParseError("not a checkpoint file (bad magic)");
  std::uint32_t version = 0;
  detail::read_exact(is, reinterpret_cast<char*>(&version), sizeof version, "version");
  if (version != checkpoint_version) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  std::uint64_t len = 0;
  detail::read_exact(is, reinterpret_cast<char*>(&len), sizeof len, "header length");
  if (len > (std::uint64_t{1} << 32)) throw ParseError("corrupt checkpoint header length");
  std::string text(len, '\0');
  detail::read_exact(is, text.data(), len, "header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("corrupt checkpoint header: ") + e.what());
  }
  Checkpoint ck;
  try {
    const std::string kind = header.at("kind").get<std::string>();
    if (kind != "theta" && kind != "full") throw ParseError("unknown checkpoint kind " + kind);
    ck.kind = kind == "theta" ? CheckpointKind::theta : CheckpointKind::full;
    RunConfig rc;
    apply_config_json(rc, header.at("model"));
    ck.config = rc.model;
    ck.config.validate();
    if (header.contains("vocab")) ck.vocab = Vocabulary(header["vocab"].get<std::vector<std::string>>());
    if (!header.at("tensors").is_array()) throw ParseError("checkpoint tensor list is not an array");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed checkpoint header: ") + e.what());
  }

  const Model reference(ck.config, 0);
  for (const auto& entry : header["tensors"]) {
    if (!entry.is_object() || !entry.contains("name") || !entry.contains("shape")) {
      throw ParseError("malformed checkpoint tensor entry " + entry.dump());
    }
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    if (!reference.params().contains(name)) throw ValidationError("checkpoint tensor " + name + " unknown to config");
    const auto& expect = reference.params().at(name).shape();
    if (shape != expect) {
      throw ValidationError("checkpoint tensor " + name + " has shape " + shape_str(shape) + ", config expects " +
                            shape_str(expect));
    }
    std::vector<Real> data(shape_numel(shape));
    detail::read_exact(is, reinterpret_cast<char*>(data.data()), data.size() * sizeof(Real), "tensor " + name);
    ck.params.add(name, Tensor(shape, std::move(data), true));
  }
  for (const auto& [name, t] : reference.params().entries()) {
    const bool needed = ck.kind == CheckpointKind::full || !ModelParams::is_aux(name);
    if (needed && !ck.params.contains(name)) throw ValidationError("checkpoint lacks tensor " + name);
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open checkpoint " + path);
  return load_checkpoint(is);
}

/// Builds a full model from a checkpoint. Parameters absent from a θ
/// checkpoint (the auxiliary heads) are drawn fresh from `aux_seed`.
inline Model model_from_checkpoint(const Checkpoint& ck, std::uint64_t aux_seed, LoadManifest* manifest = nullptr) {
  Model model(ck.config, aux_seed);
  LoadManifest m;
  for (const auto& [name, t] : model.params().entries()) {
    if (ck.params.contains(name)) {
      Tensor dst = t;
      const auto src = ck.params.at(name).data();
      std::copy(src.begin(), src.end(), dst.mutable_data().begin());
      m.loaded.push_back(name);
    } else {
      m.freshly_initialized.push_back(name);
    }
  }
  if (manifest) *manifest = std::move(m);
  return model;
}

}  // namespace csanct
