#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "csanct/model.hpp"
#include "support/reference_transformer.hpp"

using namespace csanct;

namespace {

std::vector<std::uint8_t> random_flags(std::mt19937_64& rng, std::size_t n) {
  std::vector<std::uint8_t> f(n);
  for (auto& x : f) x = static_cast<std::uint8_t>(rng() % 2);
  return f;
}

ModelConfig small_config(const std::string& activation) {
  ModelConfig c;
  c.layers = 2;
  c.d_model = 12;
  c.d_ff = 20;
  c.heads = 3;
  c.vocab_size = 17;
  c.max_turns = 5;
  c.max_pos = 40;
  c.dropout = 0;
  c.activation = activation;
  c.init_std = 0.3;
  return c;
}

}  // namespace

TEST(Masks, EncoderLayerOneSeesEverything) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    auto flags = random_flags(rng, 1 + rng() % 12);
    auto m = encoder_self_mask(flags, 1);
    EXPECT_TRUE(std::all_of(m.visible.begin(), m.visible.end(), [](auto v) { return v == 1; }));
    for (int layer = 2; layer <= 4; ++layer) {
      auto g = encoder_self_mask(flags, layer);
      for (std::size_t q = 0; q < flags.size(); ++q)
        for (std::size_t k = 0; k < flags.size(); ++k) EXPECT_EQ(g.at(q, k), flags[q] == flags[k]);
    }
  }
  std::vector<std::uint8_t> f{1};
  EXPECT_THROW(encoder_self_mask(f, 0), UsageError);
}

TEST(Masks, CausalAndCrossAttention) {
  auto c = causal_mask(4);
  for (std::size_t q = 0; q < 4; ++q)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(c.at(q, k), k <= q);
  std::vector<std::uint8_t> flags{0, 0, 1, 1, 0};
  auto x = cross_attention_mask(3, flags, false);
  for (std::size_t q = 0; q < 3; ++q)
    for (std::size_t k = 0; k < flags.size(); ++k) EXPECT_EQ(x.at(q, k), flags[k] == 1);
  auto all = cross_attention_mask(3, flags, true);
  EXPECT_TRUE(std::all_of(all.visible.begin(), all.visible.end(), [](auto v) { return v == 1; }));
  std::vector<std::uint8_t> none{0, 0};
  EXPECT_THROW(cross_attention_mask(2, none, false), UsageError);
}

TEST(Positions, SinusoidTable) {
  auto pe = sinusoidal_positions(6, 4);
  EXPECT_DOUBLE_EQ(pe.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(pe.at(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(pe.at(3, 0), std::sin(3.0));
  EXPECT_DOUBLE_EQ(pe.at(3, 3), std::cos(3.0 / 100.0));
}

class NoContext : public ::testing::TestWithParam<std::string> {};

TEST_P(NoContext, MatchesPlainSentenceTransformer) {
  const auto cfg = small_config(GetParam());
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    Model model(cfg, seed);
    for (const char* table : {"embed.speaker", "embed.turn"}) {
      auto d = model.params().at(table).mutable_data();
      std::fill(d.begin(), d.end(), 0.0);
    }
    // Nonzero biases and gains so every parameter influences the comparison.
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (const auto& [name, t] : model.params().entries()) {
      if (name.find("bias") != std::string::npos || name.find("gain") != std::string::npos) {
        auto d = model.params().at(name).mutable_data();
        for (auto& v : d) v += u(rng);
      }
    }
    std::vector<std::string> words = special::reserved();
    for (int i = 0; i < 11; ++i) words.push_back("w" + std::to_string(i));
    Vocabulary vocab(words);
    SentencePair pair{{"w1", "w4", "w4", "w9"}, {"w2", "w3", "w0"}};
    auto ex = make_sentence_example(pair, vocab, cfg.max_turns);
    ASSERT_TRUE(std::all_of(ex.encoder.current.begin(), ex.encoder.current.end(), [](auto f) { return f == 1; }));

    auto enc = model.encode(ex.encoder);
    auto logits = model.project(model.decode(ex.decoder_input(), enc), Head::main);
    csanct::testing::ReferenceTransformer ref(cfg, model.params());
    auto expected = ref.logits(ex.encoder.ids, ex.decoder_input());
    ASSERT_EQ(logits.dim(0), expected.size());
    double worst = 0;
    for (std::size_t i = 0; i < expected.size(); ++i)
      for (std::size_t j = 0; j < expected[i].size(); ++j)
        worst = std::max(worst, std::abs(logits.at(i, j) - expected[i][j]));
    EXPECT_LT(worst, 1e-10) << "seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(Activations, NoContext, ::testing::Values("relu", "gelu"));

TEST(Model, HistoryReachesDecoderThroughFirstLayer) {
  // Cross-attention reads only utterance states, but layer 1 lets those read
  // the history, so a history token still moves the decoder output.
  auto cfg = small_config("relu");
  Model model(cfg, 9);
  EncoderInput in{{special::cls_id, 7, 8, 9, 10}, {0, 0, 0, 1, 1}, {0, 1, 1, 2, 2}, {0, 0, 0, 1, 1}};
  auto a = model.decode(std::vector<int>{special::bos_id}, model.encode(in));
  in.ids[1] = 11;
  auto b = model.decode(std::vector<int>{special::bos_id}, model.encode(in));
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a.at(i) - b.at(i)));
  EXPECT_GT(diff, 1e-8);
}

TEST(Model, ParameterSetsAndAuxReinit) {
  auto cfg = small_config("relu");
  Model model(cfg, 1);
  std::size_t aux = 0;
  for (const auto& [name, t] : model.params().all()) aux += ModelParams::is_aux(name);
  EXPECT_EQ(aux, 6u);
  EXPECT_EQ(model.params().theta().size() + aux, model.params().all().size());

  auto before = model.params().clone();
  model.reinitialize_aux(77);
  for (const auto& [name, t] : before.entries()) {
    const auto now = model.params().at(name).data();
    const bool same = std::equal(now.begin(), now.end(), t.data().begin());
    if (ModelParams::is_aux(name) && name.find("weight") != std::string::npos) {
      EXPECT_FALSE(same) << name;
    } else if (!ModelParams::is_aux(name)) {
      EXPECT_TRUE(same) << name;
    }
  }

  cfg.share_aux_heads_with_main = true;
  Model shared(cfg, 1);
  EXPECT_FALSE(shared.params().contains("head.mrg.weight"));
  EXPECT_EQ(shared.head_prefix(Head::crg), "head.main.");
}

TEST(Model, AdoptingParamsValidatesShapes) {
  auto cfg = small_config("relu");
  Model model(cfg, 1);
  EXPECT_NO_THROW(Model(cfg, model.params().clone()));
  auto bigger = cfg;
  bigger.d_ff = 24;
  try {
    Model bad(bigger, model.params().clone());
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("enc.0.ffn.in.weight"), std::string::npos) << e.what();
  }
}

TEST(Model, ConfigValidation) {
  auto cfg = small_config("relu");
  cfg.heads = 5;
  EXPECT_THROW(Model(cfg, 1), ConfigError);
  cfg = small_config("swish");
  EXPECT_THROW(Model(cfg, 1), ConfigError);
  cfg = small_config("relu");
  cfg.dropout = 1.0;
  EXPECT_THROW(Model(cfg, 1), ConfigError);
}

TEST(Model, PairRepresentationsBothModes) {
  auto cfg = small_config("gelu");
  for (bool joint : {true, false}) {
    cfg.pair_joint_encoding = joint;
    Model model(cfg, 2);
    PairInput p{{{special::cls_id, 7, 8}, {0, 1, 1}, {0, 1, 1}, {0, 0, 0}}, {{9, 10}, {0, 0}, {2, 2}, {1, 1}}, 1};
    auto r = model.represent_pair(p);
    EXPECT_EQ(r.utterance.size(), 12u);
    EXPECT_EQ(r.context.size(), 12u);
    auto probs = model.classify(r.utterance, r.context, Classifier::si);
    EXPECT_NEAR(probs.at(0) + probs.at(1), 1.0, 1e-12);
  }
  Model model(cfg, 2);
  EncoderOutput no_cls{Tensor::zeros({1, 12}), {1}, {7}};
  EXPECT_THROW(Model::cls_state(no_cls), UsageError);
}
