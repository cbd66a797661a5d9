#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "csanct/inference.hpp"
#include "csanct/toy.hpp"
#include "csanct/trainer.hpp"

using namespace csanct;

namespace {

std::vector<std::pair<std::string, Tensor>> one_param(std::vector<Real> values) {
  const std::size_t n = values.size();
  return {{"w", Tensor({n}, std::move(values), true)}};
}

void set_grad(Tensor& t, const std::vector<Real>& g) {
  auto dst = t.mutable_grad();
  std::copy(g.begin(), g.end(), dst.begin());
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  for (const auto& [name, t] : a.entries()) {
    auto x = t.data(), y = b.at(name).data();
    if (!std::equal(x.begin(), x.end(), y.begin())) return false;
  }
  return true;
}

TrainConfig toy_train_config() {
  TrainConfig c;
  c.stage1_steps = 6;
  c.stage2_steps = 5;
  c.batch_tokens = 40;
  c.warmup_steps = 4;
  c.finetune_warmup_steps = 3;
  c.seed = 9;
  return c;
}

}  // namespace

TEST(Noam, PeakAndShape) {
  const double peak = noam_rate(2.0, 64, 400, 400);
  EXPECT_NEAR(peak, 2.0 / 8.0 / 20.0, 1e-15);
  EXPECT_LT(noam_rate(2.0, 64, 399, 400), peak);
  EXPECT_LT(noam_rate(2.0, 64, 401, 400), peak);
  EXPECT_NEAR(noam_rate(1.0, 16, 1, 100), 0.25 * 1e-3, 1e-15);
  EXPECT_THROW(noam_rate(1.0, 16, 0, 100), UsageError);
}

TEST(Adam, ThreeStepsByHand) {
  auto params = one_param({0.5, -1.0});
  auto state = AdamState::for_params(params);
  const AdamConfig cfg{0.9, 0.998, 1e-9, 0};
  const std::vector<std::vector<Real>> grads = {{0.2, -0.4}, {0.1, 0.3}, {-0.5, 0.05}};
  const Real lrs[] = {0.01, 0.02, 0.015};

  // Hand-unrolled reference.
  double w[2] = {0.5, -1.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 3; ++t) {
    for (int j = 0; j < 2; ++j) {
      const double g = grads[t - 1][j];
      m[j] = 0.9 * m[j] + 0.1 * g;
      v[j] = 0.998 * v[j] + 0.002 * g * g;
      const double mhat = m[j] / (1 - std::pow(0.9, t));
      const double vhat = v[j] / (1 - std::pow(0.998, t));
      w[j] -= lrs[t - 1] * mhat / (std::sqrt(vhat) + 1e-9);
    }
    set_grad(params[0].second, grads[t - 1]);
    adam_update(params, state, lrs[t - 1], cfg);
    EXPECT_NEAR(params[0].second.at(0), w[0], 1e-12);
    EXPECT_NEAR(params[0].second.at(1), w[1], 1e-12);
  }
  EXPECT_EQ(state.step, 3);
  // The very first step moves each coordinate by lr·sign(g), up to eps.
  auto fresh = one_param({0.0});
  auto st = AdamState::for_params(fresh);
  set_grad(fresh[0].second, {-3.0});
  adam_update(fresh, st, 0.1, cfg);
  EXPECT_NEAR(fresh[0].second.at(0), 0.1, 1e-9);
}

TEST(Adam, ZeroGradientLeavesParameterUnchanged) {
  auto params = one_param({1.25, -0.5});
  auto state = AdamState::for_params(params);
  adam_update(params, state, 0.1, {});
  EXPECT_EQ(params[0].second.at(0), 1.25);
  set_grad(params[0].second, {0.0, 0.0});
  adam_update(params, state, 0.1, {});
  EXPECT_EQ(params[0].second.at(1), -0.5);
}

TEST(Adam, GlobalNormClipping) {
  auto params = one_param({0.0, 0.0});
  auto state = AdamState::for_params(params);
  set_grad(params[0].second, {6.0, 8.0});
  const Real norm = adam_update(params, state, 0.1, AdamConfig{0.9, 0.998, 1e-9, 5.0});
  EXPECT_DOUBLE_EQ(norm, 10.0);
  EXPECT_NEAR(state.m[0][0], 0.1 * 3.0, 1e-15);
  EXPECT_NEAR(state.m[0][1], 0.1 * 4.0, 1e-15);
}

TEST(Adam, NonFiniteGradientRejectedBeforeAnyChange) {
  auto params = one_param({1.0, 2.0});
  params.push_back({"u", Tensor({1}, {3.0}, true)});
  auto state = AdamState::for_params(params);
  set_grad(params[0].second, {0.1, 0.1});
  set_grad(params[1].second, {std::numeric_limits<Real>::quiet_NaN()});
  EXPECT_THROW(adam_update(params, state, 0.1, {}), NumericError);
  EXPECT_EQ(params[0].second.at(0), 1.0);
  EXPECT_EQ(state.step, 0);
  auto mismatched = AdamState::for_params(one_param({1.0}));
  EXPECT_THROW(adam_update(params, mismatched, 0.1, {}), UsageError);
}

TEST(Batching, InvariantsOverRandomLengths) {
  std::mt19937_64 gen(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t budget = 20 + gen() % 100;
    std::vector<std::size_t> lengths(1 + gen() % 80);
    for (auto& l : lengths) l = 1 + gen() % (budget + 10);
    std::mt19937_64 rng(trial);
    auto plan = plan_batches(lengths, budget, rng);
    std::multiset<std::size_t> seen;
    for (std::size_t b = 0; b < plan.batches.size(); ++b) {
      std::size_t used = 0;
      for (auto i : plan.batches[b]) {
        used += lengths[i];
        seen.insert(i);
      }
      EXPECT_LE(used, budget);
      EXPECT_FALSE(plan.batches[b].empty());
      if (b + 1 < plan.batches.size()) {
        EXPECT_GE(2 * used, budget);
      }
    }
    for (auto i : plan.dropped) EXPECT_GT(lengths[i], budget);
    EXPECT_EQ(seen.size() + plan.dropped.size(), lengths.size());
    for (std::size_t i = 0; i < lengths.size(); ++i) EXPECT_LE(seen.count(i), 1u);

    std::mt19937_64 again(trial);
    EXPECT_EQ(plan_batches(lengths, budget, again).batches, plan.batches);
  }
  std::vector<std::size_t> too_long{50, 60};
  EXPECT_THROW(BatchStream(too_long, 10, 1), ValidationError);
}

TEST(Batching, StreamCoversEveryItemEachEpoch) {
  std::vector<std::size_t> lengths{5, 3, 8, 2, 7, 4, 6, 1, 9, 30};
  BatchStream stream(lengths, 12, 3);
  EXPECT_EQ(stream.dropped(), 1u);
  std::multiset<std::size_t> seen;
  while (stream.epoch() == 0) {
    const auto& b = stream.next();
    if (stream.epoch() != 0) break;
    seen.insert(b.begin(), b.end());
  }
  EXPECT_EQ(seen.size(), 9u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 9u);
}

TEST(Pretrain, CopyTaskOverfits) {
  std::mt19937_64 rng(5);
  std::vector<std::string> words = special::reserved();
  for (int i = 0; i < 10; ++i) words.push_back("c" + std::to_string(i));
  Vocabulary vocab(words);
  std::vector<SentencePair> corpus;
  std::set<Tokens> distinct;
  while (corpus.size() < 50) {
    Tokens s;
    for (int n = 2 + static_cast<int>(rng() % 3); n > 0; --n) s.push_back("c" + std::to_string(rng() % 10));
    if (distinct.insert(s).second) corpus.push_back({s, s});
  }
  ModelConfig mc;
  mc.layers = 1;
  mc.d_model = 32;
  mc.d_ff = 64;
  mc.heads = 2;
  mc.vocab_size = static_cast<int>(vocab.size());
  mc.max_pos = 16;
  mc.dropout = 0;
  TrainConfig tc;
  tc.stage1_steps = 2000;
  tc.batch_tokens = 120;
  tc.warmup_steps = 100;
  tc.label_smoothing = 0;
  tc.seed = 2;
  Model model(mc, 2);
  auto result = pretrain(model, corpus, vocab, tc);
  ASSERT_EQ(result.log.size(), 2000u);
  NoGradGuard guard;
  std::vector<NctExample> all;
  for (const auto& p : corpus) all.push_back(make_sentence_example(p, vocab, mc.max_turns));
  EXPECT_LT(loss_nct(model, all, 0).item(), 0.1);
  int exact = 0;
  BeamConfig greedy{1, 0.6, 10};
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto out = beam_search(model.encode(all[i].encoder), model, greedy);
    exact += vocab.decode(out.output()) == corpus[i].target;
  }
  EXPECT_GE(exact, 48);
}

TEST(Pretrain, DeterministicPerSeedAndThetaOnly) {
  auto setup = make_toy_setup(2);
  std::vector<SentencePair> corpus;
  for (const auto& d : setup.dialogues)
    for (const auto& u : d.utterances) corpus.push_back({u.source, u.target});
  auto cfg = setup.config;
  cfg.dropout = 0.2;
  auto run = [&](std::uint64_t seed) {
    Model model(cfg, 1);
    auto tc = toy_train_config();
    tc.seed = seed;
    auto r = pretrain(model, corpus, setup.vocab, tc);
    return std::make_pair(model.params().clone(), r);
  };
  auto [a, ra] = run(4);
  auto [b, rb] = run(4);
  auto [c, rc] = run(5);
  EXPECT_TRUE(same_params(a, b));
  EXPECT_FALSE(same_params(a, c));
  ASSERT_EQ(ra.log.size(), 6u);
  for (std::size_t i = 0; i < ra.log.size(); ++i) EXPECT_EQ(ra.log[i].l_nct, rb.log[i].l_nct);
  EXPECT_EQ(ra.log.front().step, 1);
  Model init(cfg, 1);
  for (const auto& [name, t] : init.params().entries()) {
    if (ModelParams::is_aux(name)) {
      auto x = t.data(), y = a.at(name).data();
      EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin())) << name;
    }
  }
  Vocabulary wrong;
  Model model(cfg, 1);
  EXPECT_THROW(pretrain(model, corpus, wrong, toy_train_config()), ValidationError);
}

TEST(Finetune, ZeroWeightsMatchTranslationOnlyBitwise) {
  auto setup = make_toy_setup(3);
  auto cfg = setup.config;
  cfg.dropout = 0.3;
  auto run = [&](bool nct_only) {
    Model model(cfg, 11);
    auto tc = toy_train_config();
    if (nct_only) {
      tc.nct_only = true;
    } else {
      tc.schedule_mode = "fixed";
      tc.alpha0 = 0;
      tc.beta0 = 0;
    }
    auto r = finetune(model, setup.dialogues, setup.vocab, tc);
    return std::make_pair(model.params().clone(), r);
  };
  auto [zero, rz] = run(false);
  auto [only, ro] = run(true);
  EXPECT_TRUE(same_params(zero, only));
  ASSERT_EQ(rz.log.size(), ro.log.size());
  for (std::size_t i = 0; i < rz.log.size(); ++i) EXPECT_EQ(rz.log[i].l_nct, ro.log[i].l_nct);
  // With α=β=0 the auxiliary heads receive no gradient at all.
  Model init(cfg, 11);
  for (const auto& [name, t] : init.params().entries()) {
    if (!ModelParams::is_aux(name)) continue;
    auto x = t.data(), y = zero.at(name).data();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin())) << name;
  }
}

TEST(Finetune, ScheduleLoggedAndAllParametersTrained) {
  auto setup = make_toy_setup(4);
  Model model(setup.config, 12);
  auto before = model.params().clone();
  auto tc = toy_train_config();
  std::vector<StepRecord> streamed;
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) { streamed.push_back(r); };
  auto r = finetune(model, setup.dialogues, setup.vocab, tc, hooks);
  ASSERT_EQ(r.log.size(), 6u);
  EXPECT_EQ(streamed.size(), 6u);
  EXPECT_EQ(r.log.front().step, 0);
  EXPECT_EQ(r.log.front().alpha, 1.0);
  EXPECT_EQ(r.log.front().beta, 1.0);
  EXPECT_EQ(r.log.back().step, 5);
  EXPECT_EQ(r.log.back().alpha, 0.0);
  EXPECT_FALSE(r.log.back().update);
  EXPECT_EQ(r.log.back().lr, 0.0);
  for (std::size_t i = 1; i < r.log.size(); ++i) EXPECT_LE(r.log[i].alpha, r.log[i - 1].alpha);
  EXPECT_EQ(r.optimizer.step, 5);
  EXPECT_EQ(r.optimizer.names.size(), model.params().all().size());
  for (const char* name : {"head.mrg.weight", "head.crg.weight", "cls.nud.weight", "cls.si.weight", "embed.turn"}) {
    auto x = before.at(name).data(), y = model.params().at(name).data();
    EXPECT_FALSE(std::equal(x.begin(), x.end(), y.begin())) << name;
  }
  auto keys = r.log.front().to_json();
  std::vector<std::string> order;
  for (auto it = keys.begin(); it != keys.end(); ++it) order.push_back(it.key());
  EXPECT_EQ(order, (std::vector<std::string>{"step", "stage", "l_nct", "l_mrg", "l_crg", "l_nud", "l_si", "alpha",
                                             "beta", "lr", "tokens"}));
}

TEST(Finetune, NonFiniteParametersStopTraining) {
  auto setup = make_toy_setup(5);
  Model model(setup.config, 13);
  model.params().at("embed.word").mutable_data()[special::cls_id * 8] = std::numeric_limits<Real>::infinity();
  std::vector<std::string> warnings;
  TrainHooks hooks;
  hooks.on_warning = [&](const std::string& w) { warnings.push_back(w); };
  auto r = finetune(model, setup.dialogues, setup.vocab, toy_train_config(), hooks);
  ASSERT_TRUE(r.diverged_at.has_value());
  EXPECT_EQ(*r.diverged_at, 0);
  EXPECT_FALSE(warnings.empty());
}

TEST(Finetune, WarnsWithoutSpeakerPairs) {
  auto setup = make_toy_setup(6);
  for (auto& d : setup.dialogues) d.utterances.resize(2);
  Model model(setup.config, 14);
  std::vector<std::string> warnings;
  TrainHooks hooks;
  hooks.on_warning = [&](const std::string& w) { warnings.push_back(w); };
  auto tc = toy_train_config();
  tc.stage2_steps = 2;
  auto r = finetune(model, setup.dialogues, setup.vocab, tc, hooks);
  ASSERT_FALSE(warnings.empty());
  EXPECT_NE(warnings.front().find("speaker-identification"), std::string::npos);
  for (const auto& rec : r.log) EXPECT_EQ(rec.l_si, 0.0);
}

TEST(Config, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.label_smoothing = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.schedule_mode = "exp";
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.stage2_steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}
