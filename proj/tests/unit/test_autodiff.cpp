#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "csanct/autodiff.hpp"
#include "csanct/gradcheck.hpp"

using namespace csanct;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool rg = true) {
  std::uniform_real_distribution<Real> u(-1, 1);
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), rg);
}

void expect_values(const Tensor& t, const std::vector<Real>& want, Real tol = 1e-12) {
  ASSERT_EQ(t.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t.at(i), want[i], tol) << "index " << i;
}

}  // namespace

TEST(Tensor, RejectsShapeDataMismatch) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<Real>(5)), DimensionError);
  EXPECT_THROW(Tensor({0, 3}, std::vector<Real>{}), DimensionError);
}

TEST(Matmul, IdentityAndProjector) {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  expect_values(matmul(eye, m), {1, 2, 3, 4});
  Tensor p({2, 2}, {1, 0, 0, 0});
  expect_values(matmul(p, Tensor({2, 2}, {5, 6, 7, 8})), {5, 6, 0, 0});
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  auto r = check_gradients({{"a", a}, {"b", b}}, [&] { return sum(matmul(a, b)); });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Softmax, Examples) {
  expect_values(softmax(Tensor({4}, {0, 0, 0, 0})), {0.25, 0.25, 0.25, 0.25});
  expect_values(softmax(Tensor({2}, {1000, 0})), {1.0, 0.0});
  expect_values(softmax(Tensor({3}, {std::log(1.0), std::log(2.0), std::log(3.0)})), {1.0 / 6, 2.0 / 6, 3.0 / 6});
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({3, 5}, rng, false);
    auto s = softmax(x);
    for (std::size_t r = 0; r < 3; ++r) {
      Real total = 0;
      for (std::size_t c = 0; c < 5; ++c) total += s.at(r, c);
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
    std::vector<Real> shifted(x.data().begin(), x.data().end());
    for (auto& v : shifted) v += 7.25;
    auto s2 = softmax(Tensor({3, 5}, shifted));
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s.at(i), s2.at(i), 1e-12);
  }
}

TEST(Softmax, AlongLeadingAxis) {
  Tensor x({2, 2}, {0, std::log(3.0), 0, 0});
  auto s = softmax(x, 0);
  EXPECT_NEAR(s.at(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(s.at(0, 1), 0.75, 1e-12);
  EXPECT_NEAR(s.at(1, 1), 0.25, 1e-12);
}

TEST(Softmax, NaNIsNumericError) {
  EXPECT_THROW(softmax(Tensor({2}, {std::nan(""), 0})), NumericError);
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  auto x = random_tensor({3, 4}, rng);
  auto w = random_tensor({3, 4}, rng, false);
  for (int axis : {0, 1}) {
    auto r = check_gradients({{"x", x}}, [&] { return sum(mul(softmax(x, axis), w)); });
    EXPECT_LT(r.max_rel_error, 1e-4) << "axis " << axis;
  }
}

TEST(LayerNorm, Examples) {
  auto g = Tensor::full({3}, 1), b = Tensor::zeros({3});
  expect_values(layer_norm(Tensor({3}, {2, 2, 2}), g, b, 1e-6), {0, 0, 0});
  auto g2 = Tensor::full({2}, 1), b2 = Tensor::zeros({2});
  expect_values(layer_norm(Tensor({2}, {1, -1}), g2, b2, 1e-15), {1, -1}, 1e-9);
  EXPECT_THROW(layer_norm(Tensor({2}, {1, -1}), g2, b2, 0), ConfigError);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  auto x = random_tensor({2, 8}, rng), g = random_tensor({8}, rng), b = random_tensor({8}, rng);
  auto w = random_tensor({2, 8}, rng, false);
  auto r = check_gradients({{"x", x}, {"g", g}, {"b", b}}, [&] { return sum(mul(layer_norm(x, g, b, 1e-6), w)); });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  auto logits = Tensor::zeros({3, 7});
  std::vector<int> tgt{1, 2, 3};
  EXPECT_NEAR(cross_entropy_label_smoothed(logits, tgt, 0.0, -1).loss.item(), std::log(7.0), 1e-12);
  EXPECT_NEAR(cross_entropy_label_smoothed(logits, tgt, 0.1, -1).loss.item(), std::log(7.0), 1e-12);
}

TEST(CrossEntropy, ConfidentCorrectLogitApproachesZero) {
  Tensor logits({1, 3}, {0, 60, 0});
  std::vector<int> tgt{1};
  EXPECT_LT(cross_entropy_label_smoothed(logits, tgt, 0.0, -1).loss.item(), 1e-20);
}

TEST(CrossEntropy, MatchesPerClassSumOracle) {
  Tensor logits({2, 4}, {0.3, -1.2, 2.0, 0.5, 1.0, 1.0, -0.5, 0.0});
  std::vector<int> tgt{2, 0};
  const Real eps = 0.1;
  Real want = 0;
  for (std::size_t r = 0; r < 2; ++r) {
    Real z = 0;
    for (std::size_t j = 0; j < 4; ++j) z += std::exp(logits.at(r, j));
    for (std::size_t j = 0; j < 4; ++j) {
      const Real q = (static_cast<int>(j) == tgt[r] ? 1 - eps : 0) + eps / 4;
      want -= q * (logits.at(r, j) - std::log(z));
    }
  }
  want /= 2;
  EXPECT_NEAR(cross_entropy_label_smoothed(logits, tgt, eps, -1).loss.item(), want, 1e-12);
}

TEST(CrossEntropy, PadPositionsIgnoredAndAllPadIsZero) {
  Tensor logits({2, 3}, {0.1, 0.2, 0.3, 5, -5, 0});
  std::vector<int> with_pad{2, 0};
  std::vector<int> only{2};
  auto a = cross_entropy_label_smoothed(logits, with_pad, 0.1, 0);
  auto b = cross_entropy_label_smoothed(slice_rows(logits, 0, 1), only, 0.1, 0);
  EXPECT_NEAR(a.loss.item(), b.loss.item(), 1e-14);
  EXPECT_EQ(a.counted, 1u);
  std::vector<int> pads{0, 0};
  auto c = cross_entropy_label_smoothed(logits, pads, 0.1, 0);
  EXPECT_TRUE(c.all_pad());
  EXPECT_EQ(c.loss.item(), 0.0);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  auto logits = random_tensor({3, 5}, rng);
  std::vector<int> tgt{4, 0, 2};
  auto r = check_gradients({{"logits", logits}},
                           [&] { return cross_entropy_label_smoothed(logits, tgt, 0.1, -1).loss; });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Backward, SumGivesOnesAndSquareGivesTwoX) {
  Tensor x({3}, {0.5, -2, 4}, true);
  backward(sum(x));
  for (Real g : x.grad()) EXPECT_EQ(g, 1.0);
  Tensor y = Tensor::scalar(3, true);
  backward(mul(y, y));
  EXPECT_EQ(y.grad()[0], 6.0);
}

TEST(Backward, RepeatedCallsAccumulateOnLeaves) {
  Tensor x = Tensor::scalar(2, true);
  auto loss = mul(x, x);
  backward(loss);
  backward(loss);
  EXPECT_EQ(x.grad()[0], 8.0);
}

TEST(Backward, NonScalarRootIsUsageError) {
  Tensor x({2}, {1, 2}, true);
  EXPECT_THROW(backward(scale(x, 2)), UsageError);
}

TEST(Backward, ExecutionOrderAndPostorderAgree) {
  std::mt19937_64 rng(12);
  auto a = random_tensor({3, 3}, rng), b = random_tensor({3, 3}, rng);
  auto build = [&] {
    auto h = relu(matmul(a, b));
    auto s = softmax(add(h, matmul_nt(a, b)));
    return sum(mul(concat_rows({s, h}), concat_rows({h, s})));
  };
  backward(build(), BackwardOrder::reverse_execution);
  std::vector<Real> ga(a.grad().begin(), a.grad().end()), gb(b.grad().begin(), b.grad().end());
  a.zero_grad();
  b.zero_grad();
  backward(build(), BackwardOrder::reverse_postorder);
  for (std::size_t i = 0; i < ga.size(); ++i) {
    EXPECT_NEAR(a.grad()[i], ga[i], 1e-12);
    EXPECT_NEAR(b.grad()[i], gb[i], 1e-12);
  }
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::scalar(2, true);
  Tensor y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    y = mul(x, x);
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_FALSE(y.requires_grad());
}

TEST(Ops, GradientsOfStructuralOps) {
  std::mt19937_64 rng(14);
  auto x = random_tensor({4, 6}, rng), w = random_tensor({3, 6}, rng), bias = random_tensor({3}, rng);
  auto table = random_tensor({5, 6}, rng);
  std::vector<int> ids{4, 0, 4, 2};
  auto r = check_gradients({{"x", x}, {"w", w}, {"bias", bias}, {"table", table}}, [&] {
    auto h = gelu(linear(add(x, embedding(table, ids)), w, bias));
    auto parts = concat_cols({slice_cols(h, 0, 1), slice_cols(h, 1, 3)});
    auto t = transpose(parts);
    auto masked = apply_mask(matmul(parts, t), {1, 0, 1, 1, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 1, 1});
    auto pooled = concat({mean_rows(softmax(masked), 1, 3), row(h, 0)});
    return add(sum(mul(pooled, pooled)), sum(log_softmax(reshape(h, {2, 6}))));
  });
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "]";
}

TEST(Ops, MaskedRowWithNoVisibleKeyIsNumericError) {
  auto scores = Tensor::zeros({2, 2});
  EXPECT_THROW(softmax(apply_mask(scores, {0, 0, 1, 1})), NumericError);
}

TEST(Ops, EmbeddingRejectsOutOfRangeIds) {
  auto table = Tensor::zeros({3, 2});
  std::vector<int> ids{0, 3};
  EXPECT_THROW(embedding(table, ids), IndexError);
}

TEST(Ops, OnlyBiasBroadcastIsAllowed) {
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3})), DimensionError);
  EXPECT_NO_THROW(add_bias(Tensor::zeros({2, 3}), Tensor::zeros({3})));
}

TEST(Dropout, InvertedScalingAndDeterminism) {
  auto x = Tensor::full({10000}, 1.0);
  std::mt19937_64 r1(1), r2(1);
  auto a = dropout(x, 0.25, &r1);
  auto b = dropout(x, 0.25, &r2);
  Real total = 0;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.at(i), b.at(i));
    total += a.at(i);
    if (a.at(i) != 0) {
      EXPECT_NEAR(a.at(i), 1 / 0.75, 1e-15);
      ++kept;
    }
  }
  EXPECT_NEAR(total / 10000, 1.0, 0.03);
  EXPECT_GT(kept, 7000u);
  auto off = dropout(x, 0.25, nullptr);
  for (std::size_t i = 0; i < off.size(); ++i) EXPECT_EQ(off.at(i), 1.0);
}
