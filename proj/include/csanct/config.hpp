#pragma once

// Flat key-value configuration covering ModelConfig and TrainConfig. Keys are
// the C++ field names; `dropout` is shared by both.

#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "csanct/error.hpp"
#include "csanct/model.hpp"
#include "csanct/trainer.hpp"

namespace csanct {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  void validate() const {
    model.validate();
    train.validate();
  }
};

struct ConfigField {
  std::string name;
  std::string help;
  std::function<nlohmann::ordered_json(const RunConfig&)> get;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
};

namespace detail {

template <class T>
T json_as(const nlohmann::json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    } else {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has a value of the wrong type: " + v.dump());
  }
}

template <class T, class Owner>
ConfigField field(std::string name, std::string help, Owner RunConfig::*owner, T Owner::*member) {
  const std::string key = name;
  return ConfigField{std::move(name), std::move(help),
                     [owner, member](const RunConfig& c) { return nlohmann::ordered_json((c.*owner).*member); },
                     [owner, member, key](RunConfig& c, const nlohmann::json& v) {
                       (c.*owner).*member = json_as<T>(v, key);
                     }};
}

}  // namespace detail

/// Every recognised key, in echo order.
inline const std::vector<ConfigField>& config_fields() {
  using detail::field;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto M = &RunConfig::model;
    auto T = &RunConfig::train;
    f.push_back(field("layers", "encoder/decoder layer count", M, &ModelConfig::layers));
    f.push_back(field("d_model", "hidden size", M, &ModelConfig::d_model));
    f.push_back(field("d_ff", "feed-forward size", M, &ModelConfig::d_ff));
    f.push_back(field("heads", "attention heads", M, &ModelConfig::heads));
    f.push_back(field("vocab_size", "vocabulary size (also the prepare size limit)", M, &ModelConfig::vocab_size));
    f.push_back(field("max_turns", "turn-embedding rows", M, &ModelConfig::max_turns));
    f.push_back(field("max_pos", "maximum positions", M, &ModelConfig::max_pos));
    f.push_back(field("dropout", "dropout rate", M, &ModelConfig::dropout));
    f.push_back(field("share_aux_heads_with_main", "MRG/CRG reuse the translation head", M,
                      &ModelConfig::share_aux_heads_with_main));
    f.push_back(field("cross_attend_context", "decoder attends to history positions too", M,
                      &ModelConfig::cross_attend_context));
    f.push_back(field("pair_joint_encoding", "encode NUD/SI history and candidate in one pass", M,
                      &ModelConfig::pair_joint_encoding));
    f.push_back(field("activation", "relu or gelu", M, &ModelConfig::activation));
    f.push_back(field("layer_norm_eps", "layer-norm epsilon", M, &ModelConfig::layer_norm_eps));
    f.push_back(field("init_std", "initialisation standard deviation", M, &ModelConfig::init_std));
    f.push_back(field("stage1_steps", "stage-1 steps (T1)", T, &TrainConfig::stage1_steps));
    f.push_back(field("stage2_steps", "stage-2 steps (T2)", T, &TrainConfig::stage2_steps));
    f.push_back(field("batch_tokens", "token budget per batch", T, &TrainConfig::batch_tokens));
    f.push_back(field("adam_beta1", "Adam beta1", T, &TrainConfig::adam_beta1));
    f.push_back(field("adam_beta2", "Adam beta2", T, &TrainConfig::adam_beta2));
    f.push_back(field("adam_eps", "Adam epsilon", T, &TrainConfig::adam_eps));
    f.push_back(field("lr_scale", "learning-rate scale", T, &TrainConfig::lr_scale));
    f.push_back(field("warmup_steps", "stage-1 warmup steps", T, &TrainConfig::warmup_steps));
    f.push_back(field("finetune_warmup_steps", "stage-2 warmup steps", T, &TrainConfig::finetune_warmup_steps));
    f.push_back(field("label_smoothing", "label smoothing", T, &TrainConfig::label_smoothing));
    f.push_back(field("seed", "random seed", T, &TrainConfig::seed));
    f.push_back(field("grad_clip", "global gradient-norm bound (<= 0 disables)", T, &TrainConfig::grad_clip));
    f.push_back(field("context_window", "history utterances k", T, &TrainConfig::context_window));
    f.push_back(field("schedule_mode", "linear, algorithm1_literal or fixed", T, &TrainConfig::schedule_mode));
    f.push_back(field("alpha0", "initial coherence-group weight", T, &TrainConfig::alpha0));
    f.push_back(field("beta0", "initial speaker-group weight", T, &TrainConfig::beta0));
    f.push_back(field("nct_only", "fine-tune with the translation loss only", T, &TrainConfig::nct_only));
    f.push_back(field("dev_every", "dev-BLEU selection interval (0 disables)", T, &TrainConfig::dev_every));
    f.push_back(field("min_count", "minimum token count for the vocabulary", T, &TrainConfig::min_count));
    f.push_back(field("beam_size", "beam size", T, &TrainConfig::beam_size));
    f.push_back(field("length_penalty", "length-penalty exponent", T, &TrainConfig::length_penalty));
    f.push_back(field("max_len", "maximum decoded length", T, &TrainConfig::max_len));
    return f;
  }();
  return fields;
}

inline const ConfigField& config_field(const std::string& key) {
  for (const auto& f : config_fields())
    if (f.name == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& f : config_fields()) j[f.name] = f.get(c);
  return j;
}

/// Applies every key of a flat JSON object; unknown keys are errors.
inline void apply_config_json(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config document must be a flat JSON object");
  for (const auto& [key, value] : j.items()) config_field(key).set(c, value);
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  apply_config_json(c, j);
  return c;
}

inline void load_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  apply_config_json(c, j);
}

/// `key=value`; the value is read as JSON, falling back to a bare string.
inline void apply_override(RunConfig& c, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + kv + "' is not key=value");
  const std::string key = kv.substr(0, eq);
  const std::string text = kv.substr(eq + 1);
  const auto& f = config_field(key);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  f.set(c, value);
}

inline std::string config_help() {
  std::ostringstream os;
  os << "Config fields (--config file.json, --set key=value):\n";
  const RunConfig defaults;
  for (const auto& f : config_fields()) os << "  " << f.name << " = " << f.get(defaults).dump() << "  " << f.help << "\n";
  return os.str();
}

}  // namespace csanct
