#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "zstal/error.hpp"
#include "zstal/gradcheck.hpp"
#include "zstal/head.hpp"
#include "zstal/math.hpp"
#include "zstal/optim.hpp"

namespace zstal {
namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.values()) v = rng.gaussian();
  return t;
}

TEST(HeadForward, IdentityAffine) {
  HeadSpec head;
  head.layers = {Affine{Tensor::identity(3), Tensor({3})}};
  Rng rng(1);
  const Tensor x = random_matrix(rng, 4, 3);
  EXPECT_EQ(head_forward(head, x).output, x);
}

TEST(HeadForward, ReluClamps) {
  HeadSpec head;
  head.layers = {Affine{Tensor({1, 1}, {2.0}), Tensor({1}, {1.0})},
                 Activation{ActivationKind::kRelu}};
  EXPECT_EQ(head_forward(head, Tensor({1, 1}, {-3.0})).output, Tensor({1, 1}, {0.0}));
}

TEST(HeadForward, MatchesStraightLineEvaluation) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const HeadSpec head = random_head(rng, 5, 4, 3);
    const Tensor x = random_matrix(rng, 6, 5);
    const Tensor y = head_forward(head, x).output;
    for (std::size_t r = 0; r < 6; ++r) {
      const auto ref = oracle::forward_row(head, oracle::row_of(x, r));
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(y.at(r, c), ref[c], 1e-12);
    }
  }
}

TEST(HeadForward, RepeatedCallsAreBitIdentical) {
  Rng rng(3);
  const HeadSpec head = random_head(rng, 4, 4, 3);
  const Tensor x = random_matrix(rng, 5, 4);
  EXPECT_EQ(head_forward(head, x).output, head_forward(head, x).output);
}

TEST(HeadBackward, LinearClosedForm) {
  HeadSpec head;
  head.layers = {Affine{Tensor::identity(2), Tensor({2})}};
  const Tensor x({3, 2}, {1, 2, 3, 4, 5, 6});
  const Tensor ones = Tensor::matrix(3, 2, 1.0);
  const auto g = head_backward(head_forward(head, x).tape, ones);
  // dW[o][i] = sum_r dY[r][o] X[r][i]
  EXPECT_EQ(g.param_grads[0], Tensor({2, 2}, {9, 12, 9, 12}));
  EXPECT_EQ(g.param_grads[1], Tensor({2}, {3, 3}));
  EXPECT_EQ(g.input_grad, ones);
}

TEST(HeadBackward, MatchesFiniteDifferences) {
  GradCheckOptions opts;
  opts.seed = 11;
  const auto results = run_gradcheck(opts);
  ASSERT_EQ(results[0].name, "head_backward");
  EXPECT_TRUE(results[0].passed) << results[0].max_relative_error;
  EXPECT_EQ(results[0].instances, 50u);
}

TEST(Activation, DerivativesAtZero) {
  EXPECT_DOUBLE_EQ(activate_derivative(ActivationKind::kGeluTanh, 0.0), 0.5);
  EXPECT_DOUBLE_EQ(activate_derivative(ActivationKind::kRelu, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(activate_derivative(ActivationKind::kTanh, 0.0), 1.0);
  EXPECT_EQ(parse_activation("gelu"), ActivationKind::kGeluTanh);
  EXPECT_THROW(parse_activation("swish"), Error);
}

TEST(Cosine, SelfAndOrthogonal) {
  const Tensor a({2, 3}, {1, 2, 3, 0, 1, 0});
  const Tensor b({2, 3}, {1, 2, 3, 1, 0, 0});
  const Tensor c = cosine_matrix(a, b);
  EXPECT_NEAR(c.at(0, 0), 1.0, 1e-15);
  EXPECT_EQ(c.at(1, 1), 0.0);
}

TEST(Cosine, MatchesPairwiseFormulaAndStaysBounded) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_matrix(rng, 4, 6), b = random_matrix(rng, 3, 6);
    const Tensor c = cosine_matrix(a, b);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        const auto ai = oracle::row_of(a, i), bj = oracle::row_of(b, j);
        EXPECT_NEAR(c.at(i, j), dot(ai, bj) / (norm2(ai) * norm2(bj)), 1e-12);
        EXPECT_LE(std::abs(c.at(i, j)), 1.0 + 1e-12);
      }
    }
  }
}

TEST(Normalize, ZeroRowThrows) {
  EXPECT_THROW(l2_normalize_rows(Tensor({2, 2}, {1, 0, 0, 0})), Error);
}

TEST(Normalize, BackwardMatchesFiniteDifferences) {
  Rng rng(2);
  const Tensor x = random_matrix(rng, 3, 4);
  const Tensor dy = random_matrix(rng, 3, 4);
  const Tensor y = l2_normalize_rows(x);
  const Tensor g = l2_normalize_rows_backward(x, y, dy);
  auto f = [&](std::span<const double> v) {
    const Tensor yy = l2_normalize_rows(Tensor({3, 4}, {v.begin(), v.end()}));
    return dot(yy.values(), dy.values());
  };
  const auto num = finite_diff_grad(f, x.values());
  EXPECT_LT(relative_error(g.values(), num), 1e-8);
}

TEST(PiAlign, KnownValues) {
  const std::vector<double> e1{1.0, 0.0}, e2{0.0, 1.0};
  EXPECT_DOUBLE_EQ(pi_align(e1, e2, 1.0, 0.0), 0.5);
  double prev = 0.0;
  for (double tau : {1.0, 5.0, 20.0, 30.0}) {
    const double p = pi_align(e1, e1, tau, 0.0);
    EXPECT_GT(p, prev);
    EXPECT_LT(p, 1.0);
    prev = p;
  }
  EXPECT_GT(prev, 0.999);
  const std::vector<double> x{0.3, std::sqrt(1 - 0.09)};
  EXPECT_NEAR(pi_align(e1, x, 10.0, -2.0), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
}

TEST(PiAlign, StaysInsideOpenInterval) {
  EXPECT_GT(logistic(-800.0), -1e-300);
  EXPECT_LE(logistic(800.0), 1.0);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> a(3), b(3);
    for (double& v : a) v = rng.gaussian();
    for (double& v : b) v = rng.gaussian();
    const double na = norm2(a), nb = norm2(b);
    for (double& v : a) v /= na;
    for (double& v : b) v /= nb;
    const double p = pi_align(a, b, rng.uniform(0, 20), rng.uniform(-3, 3));
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(AdamW, ZeroGradientZeroDecayIsIdentity) {
  Tensor p({3}, {1.0, -2.0, 0.5});
  const Tensor before = p;
  std::vector<Tensor*> params{&p};
  OptState st = OptState::zeros_like(std::vector<const Tensor*>{&p});
  AdamWOptions opt;
  opt.weight_decay = 0.0;
  for (int i = 0; i < 5; ++i) adamw_step(params, std::vector<Tensor>{Tensor({3})}, st, opt);
  EXPECT_EQ(p, before);
}

TEST(AdamW, FirstStepConstant) {
  Tensor p({1}, {0.0});
  std::vector<Tensor*> params{&p};
  OptState st = OptState::zeros_like(std::vector<const Tensor*>{&p});
  AdamWOptions opt;
  opt.learning_rate = 0.1;
  opt.weight_decay = 0.0;
  adamw_step(params, std::vector<Tensor>{Tensor({1}, {1.0})}, st, opt);
  // m_hat = 1, v_hat = 1: -0.1 * 1 / (1 + 1e-8)
  EXPECT_DOUBLE_EQ(p[0], -0.1 / (1.0 + 1e-8));
  EXPECT_EQ(st.step, 1u);
}

TEST(AdamW, DecoupledDecayAlone) {
  Tensor p({2}, {2.0, -4.0});
  std::vector<Tensor*> params{&p};
  OptState st = OptState::zeros_like(std::vector<const Tensor*>{&p});
  AdamWOptions opt;
  opt.learning_rate = 1.0;
  opt.weight_decay = 0.1;
  adamw_step(params, std::vector<Tensor>{Tensor({2})}, st, opt);
  EXPECT_DOUBLE_EQ(p[0], 2.0 * 0.9);
  EXPECT_DOUBLE_EQ(p[1], -4.0 * 0.9);
}

TEST(AdamW, NonFiniteGradientThrows) {
  Tensor p({1}, {0.0});
  std::vector<Tensor*> params{&p};
  OptState st = OptState::zeros_like(std::vector<const Tensor*>{&p});
  try {
    adamw_step(params, std::vector<Tensor>{Tensor({1}, {NAN})}, st, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumerical);
  }
}

TEST(FiniteDiff, Square) {
  const auto g = finite_diff_grad([](std::span<const double> v) { return v[0] * v[0]; }, {3.0});
  EXPECT_NEAR(g[0], 6.0, 1e-6);
}

TEST(FiniteDiff, ConstantGivesZero) {
  const auto g = finite_diff_grad([](std::span<const double>) { return 4.0; }, {1.0, 2.0, 3.0});
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(Tensor, ShapeChecks) {
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0}), Error);
  EXPECT_THROW(matmul(Tensor::matrix(2, 3), Tensor::matrix(2, 3)), Error);
  const Tensor a({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(matmul(a, Tensor::identity(2)), a);
  EXPECT_EQ(matmul_bt(a, Tensor::identity(2)), a);
  EXPECT_EQ(matmul_at(Tensor::identity(2), a), a);
}

}  // namespace
}  // namespace zstal
