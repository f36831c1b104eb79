#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mtl/combiners.hpp"
#include "mtl/error.hpp"
#include "mtl/ops.hpp"
#include "oracle.hpp"

using namespace mtl;

namespace {

TaskLossVector leaves(const std::vector<double>& values) {
  TaskLossVector out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.push_back({"t" + std::to_string(i), Tensor::scalar(values[i], true)});
  }
  return out;
}

std::vector<double> grads(const TaskLossVector& v) {
  std::vector<double> g;
  for (const auto& tl : v) g.push_back(tl.loss.grad().empty() ? 0.0 : tl.loss.grad()[0]);
  return g;
}

std::vector<double> random_losses(std::mt19937_64& eng, std::size_t n, double lo = 1e-3, double hi = 1e3) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  std::vector<double> v(n);
  for (auto& x : v) x = std::exp(u(eng));
  return v;
}

}  // namespace

TEST(Gls, Examples) {
  EXPECT_NEAR(combiners::combine_gls(leaves({1, 1, 1})).item(), 1.0, 1e-15);
  EXPECT_NEAR(combiners::combine_gls(leaves({2, 4, 8})).item(), 4.0, 1e-14);
  auto l = leaves({1, 2, 4});
  auto out = combiners::combine_gls(l);
  EXPECT_NEAR(out.item(), 2.0, 1e-14);
  backward(out);
  const auto g = grads(l);
  EXPECT_NEAR(g[0], 2.0 / 3.0, 1e-14);
  EXPECT_NEAR(g[1], 1.0 / 3.0, 1e-14);
  EXPECT_NEAR(g[2], 1.0 / 6.0, 1e-14);
}

TEST(Gls, GradientMatchesFiniteDifferences) {
  auto l = leaves({0.3, 7.0, 120.0});
  std::vector<Tensor> ts;
  for (auto& tl : l) ts.push_back(tl.loss);
  EXPECT_LE(mtl::testing::check_grads([&] { return combiners::combine_gls(l); }, ts, 1e-5).max_rel, 1e-8);
}

TEST(Gls, AnalyticIdentityAndBounds) {
  std::mt19937_64 eng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + trial % 5;
    const auto v = random_losses(eng, n);
    auto l = leaves(v);
    auto out = combiners::combine_gls(l);
    backward(out);
    const auto g = grads(l);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(g[i] * static_cast<double>(n) * v[i], out.item(), 1e-10 * out.item());
    }
    EXPECT_GE(out.item(), *std::min_element(v.begin(), v.end()) * (1 - 1e-14));
    EXPECT_LE(out.item(), *std::max_element(v.begin(), v.end()) * (1 + 1e-14));
  }
}

TEST(Gls, PermutationInvariantAndHomogeneous) {
  std::mt19937_64 eng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto v = random_losses(eng, 4);
    const double base = combiners::combine_gls(leaves(v)).item();
    auto p = v;
    std::shuffle(p.begin(), p.end(), eng);
    EXPECT_NEAR(combiners::combine_gls(leaves(p)).item(), base, 1e-12 * base);
    auto scaled = v;
    for (auto& x : scaled) x *= 3.5;
    EXPECT_NEAR(combiners::combine_gls(leaves(scaled)).item(), 3.5 * base, 1e-12 * base);
    auto one = v;
    one[2] *= 1000.0;
    EXPECT_NEAR(combiners::combine_gls(leaves(one)).item(), std::pow(1000.0, 0.25) * base, 1e-11 * base);
  }
}

TEST(Gls, FloorsTinyLossesAndRejectsBadOnes) {
  auto out = combiners::combine_gls(leaves({0.0, 1.0}));
  EXPECT_NEAR(out.item(), std::sqrt(kDefaultLossFloor), 1e-20);
  EXPECT_TRUE(std::isfinite(out.item()));
  EXPECT_THROW(combiners::combine_gls(leaves({-1.0, 1.0})), NumericError);
  EXPECT_THROW(combiners::combine_gls(leaves({std::nan(""), 1.0})), NumericError);
  EXPECT_THROW(combiners::combine_gls({}), ConfigError);
}

TEST(Gls, ManySmallLossesDoNotUnderflow) {
  std::vector<double> v(400, 1e-5);
  EXPECT_NEAR(combiners::combine_gls(leaves(v)).item(), 1e-5, 1e-18);
}

TEST(Fls, Examples) {
  EXPECT_NEAR(combiners::combine_fls(leaves({2, 4, 8}), 3).item(), 16.0, 1e-12);
  EXPECT_NEAR(combiners::combine_fls(leaves({1, 8, 27}), 1).item(), 6.0, 1e-12);
  EXPECT_NEAR(combiners::combine_fls(leaves({5}), 1).item(), 25.0, 1e-12);
  EXPECT_THROW(combiners::combine_fls(leaves({1, 2}), 0), ConfigError);
  EXPECT_THROW(combiners::combine_fls(leaves({1, 2}), 3), ConfigError);
}

TEST(Fls, SquareOfGlsWhenAllFocusedAndNotBelowGls) {
  std::mt19937_64 eng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + trial % 5;
    const auto v = random_losses(eng, n, 0.1, 10.0);
    const double g = combiners::combine_gls(leaves(v)).item();
    EXPECT_NEAR(combiners::combine_fls(leaves(v), n).item(), g * g, 1e-12 * std::max(1.0, g * g));
    auto big = v;
    for (auto& x : big) x += 1.0;
    const double gb = combiners::combine_gls(leaves(big)).item();
    for (std::size_t m = 1; m <= n; ++m) EXPECT_GE(combiners::combine_fls(leaves(big), m).item(), gb);
  }
}

TEST(Equal, Examples) {
  auto l = leaves({1, 2, 3});
  auto out = combiners::combine_equal(l);
  EXPECT_EQ(out.item(), 6.0);
  backward(out);
  EXPECT_EQ(grads(l), (std::vector<double>{1, 1, 1}));
  EXPECT_EQ(combiners::combine_equal(leaves({4.25})).item(), 4.25);
}

TEST(Weighted, Examples) {
  EXPECT_EQ(combiners::combine_weighted(leaves({1, 2, 3}), {1, 1, 1}).item(), 6.0);
  auto l = leaves({1, 2});
  auto out = combiners::combine_weighted(l, {2, 0.5});
  EXPECT_EQ(out.item(), 3.0);
  backward(out);
  EXPECT_EQ(grads(l), (std::vector<double>{2, 0.5}));
  EXPECT_THROW(combiners::combine_weighted(leaves({1, 2}), {1}), ConfigError);
  EXPECT_THROW(combiners::combine_weighted(leaves({1, 2}), {1, 0}), ConfigError);
}

TEST(Uncertainty, Examples) {
  auto state = CombinerState::for_tasks(3);
  auto l = leaves({1, 2, 3});
  auto out = combiners::combine_uncertainty(l, state);
  EXPECT_NEAR(out.item(), 3.0, 1e-15);
  backward(out);
  for (double g : grads(l)) EXPECT_NEAR(g, 0.5, 1e-15);
  EXPECT_THROW(combiners::combine_uncertainty(leaves({1, 2}), state), ConfigError);
}

TEST(Uncertainty, StationaryAtLogLossAndClosedFormGradient) {
  const std::vector<double> v{0.5, 2.0, 40.0};
  auto state = CombinerState::for_tasks(3);
  for (std::size_t i = 0; i < 3; ++i) state.log_variances[i].mutable_values()[0] = std::log(v[i]);
  backward(combiners::combine_uncertainty(leaves(v), state));
  for (const auto& s : state.log_variances) EXPECT_NEAR(s.grad()[0], 0.0, 1e-14);

  auto other = CombinerState::for_tasks(3, 0.7);
  auto l = leaves(v);
  backward(combiners::combine_uncertainty(l, other));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(other.log_variances[i].grad()[0], 0.5 * (1.0 - std::exp(-0.7) * v[i]), 1e-14);
    EXPECT_NEAR(l[i].loss.grad()[0], 0.5 * std::exp(-0.7), 1e-15);
  }
}

TEST(Uncertainty, FrozenAtZeroIsHalfEqual) {
  std::mt19937_64 eng(4);
  const auto v = random_losses(eng, 4);
  EXPECT_NEAR(combiners::combine_uncertainty(leaves(v), CombinerState::for_tasks(4)).item(),
              0.5 * combiners::combine_equal(leaves(v)).item(), 1e-12);
}

TEST(Dwa, FirstEpochsUseUnitWeights) {
  auto state = CombinerState::for_tasks(3);
  EXPECT_EQ(combiners::dwa_weights(state, 3), (std::vector<double>{1, 1, 1}));
  EXPECT_EQ(combiners::combine_dwa(leaves({1, 2, 3}), state).item(), 6.0);
  state = combiners::update_state(state, {5, 1, 2});
  EXPECT_EQ(combiners::dwa_weights(state, 3), (std::vector<double>{1, 1, 1}));
}

TEST(Dwa, EqualHistoryGivesUnitWeights) {
  auto state = combiners::update_state(combiners::update_state(CombinerState::for_tasks(3), {3, 3, 3}), {2, 2, 2});
  for (double w : combiners::dwa_weights(state, 3)) EXPECT_NEAR(w, 1.0, 1e-15);
}

TEST(Dwa, TwoTaskReference) {
  // r = (2, 1), T = 2: w = 2 e^{r/T} / sum e^{r/T}; e^1 / (e^1 + e^0.5) = 1 / (1 + e^-0.5)
  auto state = combiners::update_state(combiners::update_state(CombinerState::for_tasks(2), {1, 1}), {2, 1});
  const auto w = combiners::dwa_weights(state, 2);
  const double w0 = 2.0 / (1.0 + std::exp(-0.5));
  EXPECT_NEAR(w[0], w0, 1e-14);
  EXPECT_NEAR(w[1], 2.0 - w0, 1e-14);
  EXPECT_NEAR(w[0], 1.245, 1e-3);
  EXPECT_NEAR(w[1], 0.755, 1e-3);
  EXPECT_NEAR(combiners::combine_dwa(leaves({3, 5}), state).item(), 3 * w[0] + 5 * w[1], 1e-13);
}

TEST(Dwa, WeightsSumToN) {
  std::mt19937_64 eng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + trial % 5;
    auto state = combiners::update_state(
        combiners::update_state(CombinerState::for_tasks(n, 0.0, 0.5 + trial % 3), random_losses(eng, n)),
        random_losses(eng, n));
    const auto w = combiners::dwa_weights(state, n);
    double s = 0.0;
    for (double x : w) s += x;
    EXPECT_NEAR(s, static_cast<double>(n), 1e-12);
  }
}

TEST(UpdateState, HistoryWindow) {
  auto s = CombinerState::for_tasks(2);
  s = combiners::update_state(s, {1.5, 2.5});
  EXPECT_EQ(s.dwa_history.size(), 1u);
  EXPECT_EQ(s.dwa_history.back(), (std::vector<double>{1.5, 2.5}));
  s = combiners::update_state(s, {3, 4});
  EXPECT_EQ(s.dwa_history.size(), 2u);
  s = combiners::update_state(s, {5, 6});
  EXPECT_EQ(s.dwa_history.size(), 2u);
  EXPECT_EQ(s.dwa_history.front(), (std::vector<double>{3, 4}));
  EXPECT_EQ(s.epoch_counter, 3u);
  EXPECT_THROW(combiners::update_state(s, {1}), ConfigError);
}

TEST(Combiners, AllStrictlyIncreasingInEachLoss) {
  auto dwa_state = combiners::update_state(combiners::update_state(CombinerState::for_tasks(3), {1, 2, 3}), {2, 1, 3});
  for (const auto& name : combiner_names()) {
    CombinerConfig cfg;
    cfg.kind = parse_combiner(name);
    cfg.weights = {0.5, 1.5, 2.0};
    cfg.focus_m = 2;
    LossCombiner c(cfg, 3);
    if (cfg.kind == CombinerKind::dwa) {
      c.end_epoch({1, 2, 3});
      c.end_epoch({2, 1, 3});
    }
    const std::vector<double> base{0.4, 3.0, 25.0};
    const double b = c.combine(leaves(base)).item();
    for (std::size_t i = 0; i < 3; ++i) {
      auto up = base;
      up[i] *= 1.01;
      EXPECT_GT(c.combine(leaves(up)).item(), b) << name << " task " << i;
    }
  }
}

TEST(LossCombiner, AnalyticTaskWeightsMatchAutodiff) {
  const std::vector<double> v{0.4, 3.0, 25.0};
  for (const auto& name : combiner_names()) {
    CombinerConfig cfg;
    cfg.kind = parse_combiner(name);
    cfg.weights = {0.5, 1.5, 2.0};
    cfg.focus_m = 2;
    cfg.initial_log_variance = 0.3;
    LossCombiner c(cfg, 3);
    c.end_epoch({1, 2, 3});
    c.end_epoch({2, 1, 3});
    auto l = leaves(v);
    backward(c.combine(l));
    const auto w = c.task_weights(v);
    const auto g = grads(l);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(w[i], g[i], 1e-12 * std::max(1.0, std::abs(g[i]))) << name;
  }
}

TEST(LossCombiner, ConfigValidation) {
  EXPECT_THROW(parse_combiner("geometric"), ConfigError);
  try {
    parse_combiner("nope");
  } catch (const ConfigError& e) {
    for (const auto& n : combiner_names()) EXPECT_NE(std::string(e.what()).find(n), std::string::npos);
  }
  CombinerConfig fls;
  fls.kind = CombinerKind::fls;
  fls.focus_m = 4;
  EXPECT_THROW(LossCombiner(fls, 3), ConfigError);
  CombinerConfig weighted;
  weighted.kind = CombinerKind::weighted;
  EXPECT_THROW(LossCombiner(weighted, 2), ConfigError);
  EXPECT_THROW(LossCombiner(CombinerConfig{}, 0), ConfigError);
  CombinerConfig dwa;
  dwa.kind = CombinerKind::dwa;
  dwa.temperature = 0.0;
  EXPECT_THROW(LossCombiner(dwa, 2), ConfigError);
}

TEST(LossCombiner, OnlyUncertaintyHasTrainableParameters) {
  for (const auto& name : combiner_names()) {
    CombinerConfig cfg;
    cfg.kind = parse_combiner(name);
    cfg.weights = {1, 1};
    LossCombiner c(cfg, 2);
    EXPECT_EQ(c.trainable().size(), cfg.kind == CombinerKind::uncertainty ? 2u : 0u) << name;
  }
}
