#include <gtest/gtest.h>

#include <cmath>

#include "mtl/error.hpp"
#include "mtl/ops.hpp"
#include "mtl/optim.hpp"

using namespace mtl;

TEST(Sgd, Examples) {
  std::vector<double> p{1.0, -2.0};
  optim::sgd_step(p, std::vector<double>{0.0, 0.0}, 0.1);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
  std::vector<double> q{1.0};
  optim::sgd_step(q, std::vector<double>{2.0}, 0.1);
  EXPECT_NEAR(q[0], 0.8, 1e-15);
  std::vector<double> a{0.5}, b{0.5};
  optim::sgd_step(a, std::vector<double>{3.0}, 0.01);
  optim::sgd_step(a, std::vector<double>{3.0}, 0.01);
  optim::sgd_step(b, std::vector<double>{3.0}, 0.02);
  EXPECT_NEAR(a[0], b[0], 1e-15);
  EXPECT_THROW(optim::sgd_step(a, std::vector<double>{1, 2}, 0.1), ShapeError);
}

TEST(Adam, FirstStepIsLearningRateSized) {
  // m_hat = g, v_hat = g^2, so the first step is lr * g / (|g| + eps).
  std::vector<double> p{0.0};
  optim::AdamMoments st;
  optim::adam_step(p, std::vector<double>{1.0}, st, {});
  EXPECT_NEAR(p[0], -0.001 / (1.0 + 1e-8), 1e-18);
  EXPECT_EQ(st.t, 1u);
}

TEST(Adam, ScaleInvariantUpdate) {
  std::vector<double> a{0.0}, b{0.0};
  optim::AdamMoments sa, sb;
  for (int i = 0; i < 5; ++i) {
    optim::adam_step(a, std::vector<double>{0.3}, sa, {});
    optim::adam_step(b, std::vector<double>{30.0}, sb, {});
    EXPECT_NEAR(a[0], b[0], 1e-9);
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<double> p{1.5, -0.5};
  optim::AdamMoments st;
  for (int i = 0; i < 10; ++i) optim::adam_step(p, std::vector<double>{0.0, 0.0}, st, {});
  EXPECT_EQ(p, (std::vector<double>{1.5, -0.5}));
}

TEST(Adam, MatchesHandRolledRecurrence) {
  const optim::AdamHyper hp{0.01, 0.8, 0.95, 1e-6};
  std::vector<double> p{2.0};
  optim::AdamMoments st;
  double m = 0, v = 0, ref = 2.0;
  const double gs[] = {0.5, -1.0, 0.25, 2.0};
  for (int t = 1; t <= 4; ++t) {
    const double g = gs[t - 1];
    optim::adam_step(p, std::vector<double>{g}, st, hp);
    m = 0.8 * m + 0.2 * g;
    v = 0.95 * v + 0.05 * g * g;
    ref -= 0.01 * (m / (1 - std::pow(0.8, t))) / (std::sqrt(v / (1 - std::pow(0.95, t))) + 1e-6);
    EXPECT_NEAR(p[0], ref, 1e-15);
  }
}

TEST(Optimizer, StepsLeavesAndClearsGradients) {
  auto x = Tensor({2}, {1.0, 2.0}, true);
  auto y = Tensor({1}, {5.0}, true);
  backward(ops::sum(ops::mul(x, x)));
  std::vector<Tensor> ps{x, y};
  optim::Sgd sgd(0.25);
  sgd.step(ps);
  EXPECT_EQ(x.values()[0], 0.5);
  EXPECT_EQ(x.values()[1], 1.0);
  EXPECT_EQ(y.values()[0], 5.0);
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);

  optim::Adam adam({});
  backward(ops::sum(x));
  adam.step(ps);
  EXPECT_NEAR(x.values()[0], 0.5 - 0.001, 1e-10);
  EXPECT_EQ(y.values()[0], 5.0);
  std::vector<Tensor> fewer{x};
  EXPECT_THROW(adam.step(fewer), ShapeError);
}
