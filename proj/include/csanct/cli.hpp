#pragma once

// Command-line front end. run() is callable in-process; tools/csanct.cpp wraps it.
// Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "csanct/checkpoint.hpp"
#include "csanct/config.hpp"
#include "csanct/corpus.hpp"
#include "csanct/error.hpp"
#include "csanct/evalkit.hpp"
#include "csanct/inference.hpp"
#include "csanct/model.hpp"
#include "csanct/toy.hpp"
#include "csanct/trainer.hpp"

namespace csanct::cli {

namespace fs = std::filesystem;

inline const std::vector<std::string>& model_keys() {
  static const std::vector<std::string> k{"layers", "d_model", "d_ff", "heads", "vocab_size", "max_turns", "max_pos",
                                          "dropout", "share_aux_heads_with_main", "cross_attend_context",
                                          "pair_joint_encoding", "activation", "layer_norm_eps", "init_std"};
  return k;
}

inline std::vector<std::string> keys_for(const std::string& command) {
  const std::vector<std::string> optim{"batch_tokens", "adam_beta1", "adam_beta2", "adam_eps", "lr_scale",
                                       "label_smoothing", "dropout", "seed", "grad_clip", "dev_every",
                                       "beam_size", "length_penalty", "max_len"};
  std::vector<std::string> k;
  if (command == "prepare") {
    k = {"vocab_size", "min_count"};
  } else if (command == "pretrain") {
    k = model_keys();
    k.insert(k.end(), optim.begin(), optim.end());
    k.insert(k.end(), {"stage1_steps", "warmup_steps"});
  } else if (command == "finetune") {
    k = optim;
    k.insert(k.end(), {"stage2_steps", "finetune_warmup_steps", "context_window", "schedule_mode", "alpha0", "beta0",
                       "nct_only"});
  } else if (command == "translate") {
    k = {"context_window", "beam_size", "length_penalty", "max_len"};
  } else if (command == "make-samples") {
    k = {"context_window", "seed"};
  } else if (command == "gradcheck") {
    k = {"seed"};
  }
  std::vector<std::string> unique;
  for (const auto& key : k)
    if (std::find(unique.begin(), unique.end(), key) == unique.end()) unique.push_back(key);
  return unique;
}

inline std::string footer_for(const std::string& command) {
  const auto keys = keys_for(command);
  std::ostringstream os;
  if (keys.empty()) {
    os << "Config fields consumed: none\n";
    return os.str();
  }
  os << "Config fields consumed (--config file.json, --set key=value):\n";
  const RunConfig defaults;
  for (const auto& key : keys) {
    const auto& f = config_field(key);
    os << "  " << f.name << " = " << f.get(defaults).dump() << "  " << f.help << "\n";
  }
  return os.str();
}

struct Context {
  std::ostream& out;
  std::ostream& err;
  RunConfig config;

  void log(const std::string& msg) const { err << msg << '\n'; }
};

inline std::vector<Dialogue> read_corpus(const std::string& path, const Context& ctx, bool require_target = true,
                                         bool fail_fast = false) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus " + path);
  ParseOptions opts;
  opts.fail_fast = fail_fast;
  opts.require_target = require_target;
  auto parsed = parse_dialogue_corpus(in, opts);
  for (const auto& issue : parsed.issues) ctx.log(path + ":" + std::to_string(issue.line) + ": " + issue.message);
  if (parsed.dialogues.empty()) throw ValidationError("corpus " + path + " has no valid dialogue");
  return std::move(parsed.dialogues);
}

inline Vocabulary read_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open vocabulary " + path);
  return Vocabulary::load(in);
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

inline void echo_config(const fs::path& dir, const RunConfig& c) {
  write_text(dir / "config.json", config_to_json(c).dump(2) + "\n");
}

inline BeamConfig beam_from(const TrainConfig& t) {
  BeamConfig b;
  b.beam_size = t.beam_size;
  b.length_penalty = t.length_penalty;
  b.max_len = t.max_len;
  return b;
}

/// Corpus BLEU of a model translating dialogues against their targets.
inline double dialogue_bleu(const Model& model, const Vocabulary& vocab, const std::vector<Dialogue>& dialogues, int k,
                            const BeamConfig& beam) {
  std::vector<Tokens> hyps, refs;
  for (const auto& d : dialogues) {
    auto out = translate_dialogue(d, model, vocab, k, beam);
    for (std::size_t i = 0; i < out.size(); ++i) {
      hyps.push_back(out[i].tokens);
      refs.push_back(d.utterances[i].target);
    }
  }
  return corpus_bleu(hyps, refs).score;
}

inline TrainHooks make_hooks(const Context& ctx, std::ostream& log, std::function<double(const Model&)> dev) {
  TrainHooks hooks;
  hooks.on_step = [&log](const StepRecord& r) { log << r.to_json().dump() << '\n'; };
  hooks.on_warning = [&ctx](const std::string& msg) { ctx.log("warning: " + msg); };
  hooks.dev_bleu = std::move(dev);
  return hooks;
}

inline fs::path ensure_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error("cannot create output directory " + dir + ": " + ec.message());
  return p;
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_prepare(Context& ctx, const std::string& corpus, const std::string& parallel, const std::string& out_dir,
                       bool fail_fast) {
  auto dialogues = read_corpus(corpus, ctx, true, fail_fast);
  std::vector<SentencePair> pairs;
  if (!parallel.empty()) {
    std::ifstream in(parallel);
    if (!in) throw ValidationError("cannot open parallel corpus " + parallel);
    pairs = parse_parallel_corpus(in);
  }
  const auto vocab = build_vocabulary(dialogues, static_cast<std::size_t>(ctx.config.model.vocab_size),
                                      static_cast<std::size_t>(ctx.config.train.min_count),
                                      parallel.empty() ? nullptr : &pairs);
  const auto dir = ensure_dir(out_dir);
  {
    std::ofstream os(dir / "vocab.txt");
    vocab.save(os);
  }
  {
    std::ofstream os(dir / "corpus.jsonl");
    write_dialogue_corpus(os, dialogues);
  }
  echo_config(dir, ctx.config);
  ctx.log("prepared " + std::to_string(dialogues.size()) + " dialogues, vocabulary of " + std::to_string(vocab.size()));
  return 0;
}

inline int cmd_pretrain(Context& ctx, const std::string& parallel, const std::string& vocab_path,
                        const std::string& out_dir, const std::string& dev_path) {
  std::ifstream in(parallel);
  if (!in) throw ValidationError("cannot open parallel corpus " + parallel);
  const auto pairs = parse_parallel_corpus(in);
  const auto vocab = read_vocab(vocab_path);
  if (ctx.config.model.vocab_size != static_cast<int>(vocab.size())) {
    ctx.log("vocab_size set to " + std::to_string(vocab.size()) + " from " + vocab_path);
    ctx.config.model.vocab_size = static_cast<int>(vocab.size());
  }
  ctx.config.validate();
  const auto dir = ensure_dir(out_dir);
  echo_config(dir, ctx.config);
  Model model(ctx.config.model, ctx.config.train.seed);
  std::ofstream log(dir / "train_log.jsonl");
  std::function<double(const Model&)> dev;
  std::vector<Dialogue> dev_set;
  if (!dev_path.empty()) {
    dev_set = read_corpus(dev_path, ctx);
    dev = [&](const Model& m) { return dialogue_bleu(m, vocab, dev_set, 0, beam_from(ctx.config.train)); };
  }
  auto result = pretrain(model, pairs, vocab, ctx.config.train, make_hooks(ctx, log, dev));
  save_checkpoint((dir / "theta.ckpt").string(), model.params(), model.config(), CheckpointKind::theta, &vocab);
  if (result.diverged_at) {
    ctx.log("training diverged at step " + std::to_string(*result.diverged_at) + "; kept last good parameters");
    return 2;
  }
  ctx.log("pretraining finished after " + std::to_string(result.log.size()) + " steps");
  return 0;
}

inline int cmd_finetune(Context& ctx, const std::string& corpus, const std::string& theta_path,
                        const std::string& out_dir, const std::string& dev_path, bool dropout_set) {
  if (theta_path.empty() || !fs::exists(theta_path)) {
    throw ValidationError("missing stage-1 checkpoint (theta.ckpt written by pretrain): " +
                          (theta_path.empty() ? std::string("--theta not given") : theta_path));
  }
  const auto ck = load_checkpoint(theta_path);
  if (!ck.vocab) throw ValidationError("stage-1 checkpoint " + theta_path + " carries no vocabulary");
  const Vocabulary& vocab = *ck.vocab;
  const Real dropout = ctx.config.model.dropout;
  ctx.config.model = ck.config;
  if (dropout_set) ctx.config.model.dropout = dropout;
  ctx.config.validate();
  auto dialogues = read_corpus(corpus, ctx);
  const auto dir = ensure_dir(out_dir);
  echo_config(dir, ctx.config);

  Checkpoint adjusted{ck.kind, ctx.config.model, ck.vocab, ck.params.clone()};
  LoadManifest manifest;
  Model model = model_from_checkpoint(adjusted, ctx.config.train.seed, &manifest);
  write_text(dir / "load_manifest.json", manifest.to_json().dump(2) + "\n");

  std::ofstream log(dir / "train_log.jsonl");
  std::function<double(const Model&)> dev;
  std::vector<Dialogue> dev_set;
  if (!dev_path.empty()) {
    dev_set = read_corpus(dev_path, ctx);
    dev = [&](const Model& m) {
      return dialogue_bleu(m, vocab, dev_set, ctx.config.train.context_window, beam_from(ctx.config.train));
    };
  }
  auto result = finetune(model, dialogues, vocab, ctx.config.train, make_hooks(ctx, log, dev));
  save_checkpoint((dir / "model.ckpt").string(), model.params(), model.config(), CheckpointKind::full, &vocab);
  if (result.diverged_at) {
    ctx.log("fine-tuning diverged at step " + std::to_string(*result.diverged_at) + "; kept last good parameters");
    return 2;
  }
  ctx.log("fine-tuning finished; NUD skips " +
          std::to_string(result.stats.nud_single_utterance_skips + result.stats.nud_collision_skips) +
          ", SI empty-context skips " + std::to_string(result.stats.si_empty_context_skips));
  return 0;
}

inline int cmd_translate(Context& ctx, const std::string& model_path, const std::string& corpus,
                         const std::string& out_path, const std::string& scores_path) {
  const auto ck = load_checkpoint(model_path);
  if (!ck.vocab) throw ValidationError("checkpoint " + model_path + " carries no vocabulary");
  Model model = model_from_checkpoint(ck, 0);
  auto dialogues = read_corpus(corpus, ctx, /*require_target=*/false);
  const auto beam = beam_from(ctx.config.train);
  std::ofstream out(out_path);
  if (!out) throw Error("cannot write " + out_path);
  std::optional<std::ofstream> scores;
  if (!scores_path.empty()) scores.emplace(scores_path);
  std::size_t warnings = 0;
  for (auto& d : dialogues) {
    auto results = translate_dialogue(d, model, *ck.vocab, ctx.config.train.context_window, beam, &warnings);
    for (std::size_t i = 0; i < results.size(); ++i) {
      d.utterances[i].target = results[i].tokens;
      if (scores) {
        nlohmann::ordered_json j;
        j["dialogue_id"] = d.id;
        j["turn"] = d.utterances[i].turn;
        j["log_prob"] = results[i].log_prob;
        j["score"] = results[i].score;
        j["truncated"] = results[i].truncated;
        j["input_truncated"] = results[i].input_truncated;
        *scores << j.dump() << '\n';
      }
    }
    out << serialize_dialogue(d) << '\n';
  }
  if (warnings) ctx.log("warning: " + std::to_string(warnings) + " inputs were truncated to max_pos");
  return 0;
}

inline std::vector<Tokens> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  std::vector<Tokens> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(tokenize(line));
  }
  return out;
}

inline nlohmann::ordered_json coherence_json(const CoherenceReport& r) {
  nlohmann::ordered_json j;
  for (std::size_t i = 0; i < r.mean.size(); ++i) {
    const std::string key = "n" + std::to_string(i + 1);
    if (r.mean[i]) {
      j[key] = *r.mean[i];
    } else {
      j[key] = nullptr;
    }
  }
  j["skipped"] = r.skipped;
  return j;
}

/// Flattened target sides of translated dialogues, aligned to a reference corpus.
inline std::vector<std::vector<Tokens>> aligned_translations(const std::vector<Dialogue>& hyp,
                                                             const std::vector<Dialogue>& ref) {
  if (hyp.size() != ref.size()) throw ValidationError("translated corpus and reference differ in dialogue count");
  std::vector<std::vector<Tokens>> out;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    if (hyp[i].id != ref[i].id || hyp[i].size() != ref[i].size()) {
      throw ValidationError("translated dialogue '" + hyp[i].id + "' does not align with reference '" + ref[i].id + "'");
    }
    std::vector<Tokens> turns;
    for (const auto& u : hyp[i].utterances) turns.push_back(u.target);
    out.push_back(std::move(turns));
  }
  return out;
}

inline int cmd_evaluate(Context& ctx, const std::string& hyp_path, const std::string& ref_path, bool lowercase,
                        bool chars, const std::string& hyp_corpus, const std::string& ref_corpus,
                        const std::string& vectors, std::size_t dim, int max_n, const std::string& out_path) {
  auto hyps = read_lines(hyp_path);
  auto refs = read_lines(ref_path);
  if (hyps.size() != refs.size()) {
    throw ValidationError("hypothesis and reference files differ in line count (" + std::to_string(hyps.size()) +
                          " vs " + std::to_string(refs.size()) + ")");
  }
  if (hyps.empty()) throw ValidationError("no segments to evaluate");
  for (auto* side : {&hyps, &refs}) {
    for (auto& s : *side) {
      if (lowercase) s = lowercase_tokens(s);
      if (chars) s = split_characters(s);
    }
  }
  for (std::size_t i = 0; i < refs.size(); ++i)
    if (refs[i].empty()) throw ValidationError("empty reference on line " + std::to_string(i + 1));
  const auto bleu = corpus_bleu(hyps, refs);
  nlohmann::ordered_json report;
  report["bleu"] = bleu.score;
  for (std::size_t n = 0; n < 4; ++n) report["p" + std::to_string(n + 1)] = 100.0 * bleu.precisions[n];
  report["bp"] = bleu.brevity_penalty;
  report["ter"] = corpus_ter(hyps, refs);
  if (!vectors.empty() && !hyp_corpus.empty() && !ref_corpus.empty()) {
    const auto table = load_word_vectors(vectors, dim);
    const auto hyp_d = read_corpus(hyp_corpus, ctx);
    const auto ref_d = read_corpus(ref_corpus, ctx);
    report["coherence"] = coherence_json(coherence_report(aligned_translations(hyp_d, ref_d), ref_d, table, max_n));
  } else {
    report["coherence"] = nullptr;
  }
  const std::string text = report.dump() + "\n";
  if (!out_path.empty()) {
    write_text(out_path, text);
  } else {
    ctx.out << text;
  }
  return 0;
}

inline int cmd_coherence(Context& ctx, const std::string& hyp_corpus, const std::string& ref_corpus,
                         const std::string& vectors, std::size_t dim, int max_n, const std::string& out_path) {
  const auto table = load_word_vectors(vectors, dim);
  const auto hyp_d = read_corpus(hyp_corpus, ctx);
  const auto ref_d = read_corpus(ref_corpus, ctx);
  nlohmann::ordered_json report;
  report["coherence"] = coherence_json(coherence_report(aligned_translations(hyp_d, ref_d), ref_d, table, max_n));
  const std::string text = report.dump() + "\n";
  if (!out_path.empty()) {
    write_text(out_path, text);
  } else {
    ctx.out << text;
  }
  return 0;
}

inline nlohmann::ordered_json pair_record(const std::string& task, const std::string& dialogue_id, int turn,
                                          const PairSample& s) {
  nlohmann::ordered_json j;
  j["task"] = task;
  j["dialogue_id"] = dialogue_id;
  j["turn"] = turn;
  j["context"] = join(s.context.tokens);
  j["candidate"] = join(s.candidate);
  j["label"] = s.label;
  return j;
}

/// NUD then SI records for every turn, in corpus order.
inline void write_samples(std::ostream& os, const std::vector<Dialogue>& dialogues, int k, std::uint64_t seed,
                          SampleStats* stats) {
  const TargetPool pool(dialogues);
  std::mt19937_64 rng(seed);
  for (const auto& d : dialogues) {
    for (int u = 1; u <= static_cast<int>(d.size()); ++u) {
      const auto view = make_context_view(d, u, k);
      if (auto p = make_nud_samples(view, d, u, pool, rng, stats)) {
        os << pair_record("nud", d.id, u, p->first).dump() << '\n';
        os << pair_record("nud", d.id, u, p->second).dump() << '\n';
      }
      if (auto p = make_si_samples(view, d, u, stats)) {
        os << pair_record("si", d.id, u, p->first).dump() << '\n';
        os << pair_record("si", d.id, u, p->second).dump() << '\n';
      }
    }
  }
}

inline int cmd_make_samples(Context& ctx, const std::string& corpus, const std::string& out_path) {
  const auto dialogues = read_corpus(corpus, ctx);
  std::ofstream os(out_path);
  if (!os) throw Error("cannot write " + out_path);
  SampleStats stats;
  write_samples(os, dialogues, ctx.config.train.context_window, ctx.config.train.seed, &stats);
  ctx.log("skipped NUD turns: " + std::to_string(stats.nud_single_utterance_skips + stats.nud_collision_skips) +
          ", SI turns without both speaker histories: " + std::to_string(stats.si_empty_context_skips));
  return 0;
}

inline int cmd_gradcheck(Context& ctx) {
  const auto r = toy_gradcheck(ctx.config.train.seed);
  nlohmann::ordered_json j;
  j["max_rel_error"] = r.max_rel_error;
  j["checked"] = r.checked;
  j["worst_param"] = r.worst_param;
  j["worst_index"] = r.worst_index;
  ctx.out << j.dump() << '\n';
  if (r.max_rel_error < 1e-3) return 0;
  ctx.log("gradient check failed: max relative error " + std::to_string(r.max_rel_error) + " at " + r.worst_param);
  return 2;
}

// ---------------------------------------------------------------------------

/// Parses and executes one command; args exclude the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Context-aware chat translation: data preparation, two-stage training, decoding and evaluation",
               "csanct"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::vector<std::string> overrides;
  app.footer(config_help());

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "random seed (overrides the config)");
    sub->add_option("--config", config_path, "flat JSON config file");
    sub->add_option("--set", overrides, "config override key=value (repeatable)");
    sub->footer(footer_for(sub->get_name()));
  };

  std::string corpus, parallel, vocab, out_dir, theta, dev, model_path, out_path, scores, hyp, ref, hyp_corpus,
      ref_corpus, vectors;
  bool fail_fast = false, lowercase = false, chars = false;
  std::size_t dim = 100;
  int max_n = 3;

  auto* prepare = app.add_subcommand("prepare", "validate a chat corpus and build the shared vocabulary");
  add_common(prepare);
  prepare->add_option("--corpus", corpus, "dialogue corpus (JSON lines)")->required();
  prepare->add_option("--parallel", parallel, "sentence-level parallel corpus (source<TAB>target)");
  prepare->add_option("--out-dir", out_dir, "output directory")->required();
  prepare->add_flag("--fail-fast", fail_fast, "stop at the first malformed record");

  auto* pre = app.add_subcommand("pretrain", "stage 1: sentence-level training of the translation path");
  add_common(pre);
  pre->add_option("--parallel", parallel, "sentence-level parallel corpus")->required();
  pre->add_option("--vocab", vocab, "vocabulary file from prepare")->required();
  pre->add_option("--out-dir", out_dir, "output directory")->required();
  pre->add_option("--dev", dev, "dev dialogues for BLEU-based checkpoint selection");

  auto* fine = app.add_subcommand("finetune", "stage 2: multi-task fine-tuning from a stage-1 checkpoint");
  add_common(fine);
  fine->add_option("--corpus", corpus, "chat corpus")->required();
  fine->add_option("--theta", theta, "stage-1 checkpoint (theta.ckpt)");
  fine->add_option("--out-dir", out_dir, "output directory")->required();
  fine->add_option("--dev", dev, "dev dialogues for BLEU-based checkpoint selection");

  auto* trans = app.add_subcommand("translate", "translate every utterance of a dialogue corpus");
  add_common(trans);
  trans->add_option("--model", model_path, "checkpoint")->required();
  trans->add_option("--corpus", corpus, "dialogue corpus; target fields optional")->required();
  trans->add_option("--out", out_path, "output corpus with target filled")->required();
  trans->add_option("--scores", scores, "per-utterance score sidecar (JSON lines)");

  auto* eval = app.add_subcommand("evaluate", "BLEU and TER of a hypothesis file, optional coherence");
  add_common(eval);
  eval->add_option("--hyp", hyp, "hypotheses, one tokenized segment per line")->required();
  eval->add_option("--ref", ref, "references, one tokenized segment per line")->required();
  eval->add_flag("--lowercase", lowercase, "case-insensitive scoring");
  eval->add_flag("--char", chars, "split tokens into characters before scoring");
  eval->add_option("--hyp-corpus", hyp_corpus, "translated dialogue corpus for coherence");
  eval->add_option("--ref-corpus", ref_corpus, "reference dialogue corpus for coherence");
  eval->add_option("--vectors", vectors, "word vector file for coherence");
  eval->add_option("--dim", dim, "word vector dimension");
  eval->add_option("--max-n", max_n, "furthest preceding utterance for coherence");
  eval->add_option("--out", out_path, "write the report here instead of standard output");

  auto* coh = app.add_subcommand("coherence", "coherence of translations with preceding reference utterances");
  add_common(coh);
  coh->add_option("--translations", hyp_corpus, "translated dialogue corpus")->required();
  coh->add_option("--ref", ref_corpus, "reference dialogue corpus")->required();
  coh->add_option("--vectors", vectors, "word vector file")->required();
  coh->add_option("--dim", dim, "word vector dimension");
  coh->add_option("--max-n", max_n, "furthest preceding utterance");
  coh->add_option("--out", out_path, "write the report here instead of standard output");

  auto* samples = app.add_subcommand("make-samples", "write NUD/SI context-utterance pairs");
  add_common(samples);
  samples->add_option("--corpus", corpus, "chat corpus")->required();
  samples->add_option("--out", out_path, "output pairs (JSON lines)")->required();

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the joint objective on a toy model");
  add_common(grad);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help(app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  Context ctx{out, err, {}};
  try {
    if (!config_path.empty()) load_config_file(ctx.config, config_path);
    bool dropout_set = false;
    for (const auto& kv : overrides) {
      apply_override(ctx.config, kv);
      dropout_set = dropout_set || kv.rfind("dropout=", 0) == 0;
    }
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      auto j = nlohmann::json::parse(in, nullptr, false);
      dropout_set = dropout_set || (j.is_object() && j.contains("dropout"));
    }
    if (seed) ctx.config.train.seed = *seed;
    ctx.config.validate();

    if (prepare->parsed()) return cmd_prepare(ctx, corpus, parallel, out_dir, fail_fast);
    if (pre->parsed()) return cmd_pretrain(ctx, parallel, vocab, out_dir, dev);
    if (fine->parsed()) return cmd_finetune(ctx, corpus, theta, out_dir, dev, dropout_set);
    if (trans->parsed()) return cmd_translate(ctx, model_path, corpus, out_path, scores);
    if (eval->parsed()) {
      return cmd_evaluate(ctx, hyp, ref, lowercase, chars, hyp_corpus, ref_corpus, vectors, dim, max_n, out_path);
    }
    if (coh->parsed()) return cmd_coherence(ctx, hyp_corpus, ref_corpus, vectors, dim, max_n, out_path);
    if (samples->parsed()) return cmd_make_samples(ctx, corpus, out_path);
    if (grad->parsed()) return cmd_gradcheck(ctx);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace csanct::cli
