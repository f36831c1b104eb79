#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mtl/error.hpp"
#include "mtl/losses.hpp"
#include "mtl/ops.hpp"
#include "oracle.hpp"

using namespace mtl;
using mtl::testing::check_grads;
using mtl::testing::random_tensor;

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  for (std::size_t c : {2, 3, 4, 20}) {
    ClassMap labels(2, 3, 4);
    for (std::size_t i = 0; i < labels.size(); ++i) labels.data[i] = static_cast<std::int32_t>(i % c);
    auto loss = losses::cross_entropy(Tensor::zeros({2, c, 3, 4}), labels);
    EXPECT_NEAR(loss.item(), std::log(static_cast<double>(c)), 1e-12);
  }
}

TEST(CrossEntropy, ConfidentCorrectPixel) {
  // -log(e^10 / (e^10 + 3)) = log(1 + 3 e^-10)
  auto loss = losses::cross_entropy(Tensor({1, 4, 1, 1}, {10, 0, 0, 0}), ClassMap(1, 1, 1, 0));
  EXPECT_NEAR(loss.item(), std::log1p(3.0 * std::exp(-10.0)), 1e-15);
  EXPECT_NEAR(loss.item(), 1.3619e-4, 1e-8);
}

TEST(CrossEntropy, MeanOverPixels) {
  Tensor logits({1, 2, 1, 2}, {0.3, -1.0, 2.0, 0.5});
  ClassMap labels(1, 1, 2, std::vector<std::int32_t>{0, 1});
  auto a = losses::cross_entropy(Tensor({1, 2, 1, 1}, {0.3, 2.0}), ClassMap(1, 1, 1, 0)).item();
  auto b = losses::cross_entropy(Tensor({1, 2, 1, 1}, {-1.0, 0.5}), ClassMap(1, 1, 1, 1)).item();
  EXPECT_NEAR(losses::cross_entropy(logits, labels).item(), 0.5 * (a + b), 1e-15);
}

TEST(CrossEntropy, NonNegativeAndDecreasingInTrueLogit) {
  auto logits = random_tensor({1, 3, 2, 2}, 1, -4, 4, false);
  ClassMap labels(1, 2, 2, std::vector<std::int32_t>{0, 1, 2, 1});
  double prev = losses::cross_entropy(logits, labels).item();
  EXPECT_GE(prev, 0.0);
  for (int step = 0; step < 5; ++step) {
    logits.mutable_values()[(1 * 2 + 0) * 2 + 1] += 0.5;  // class 1 at pixel (0,1), which is labelled 1
    const double now = losses::cross_entropy(logits, labels).item();
    EXPECT_LT(now, prev);
    prev = now;
  }
}

TEST(CrossEntropy, GradientsMatchFiniteDifferences) {
  auto logits = random_tensor({2, 4, 3, 3}, 2, -3, 3);
  ClassMap labels(2, 3, 3);
  std::mt19937_64 eng(3);
  for (auto& l : labels.data) l = static_cast<std::int32_t>(eng() % 4);
  EXPECT_LE(check_grads([&] { return losses::cross_entropy(logits, labels); }, {logits}).max_rel, 1e-6);
}

TEST(CrossEntropy, RejectsOutOfRangeLabelAndShapeMismatch) {
  EXPECT_THROW(losses::cross_entropy(Tensor::zeros({1, 2, 1, 1}), ClassMap(1, 1, 1, 2)), DataError);
  EXPECT_THROW(losses::cross_entropy(Tensor::zeros({1, 2, 1, 1}), ClassMap(1, 1, 1, -1)), DataError);
  EXPECT_THROW(losses::cross_entropy(Tensor::zeros({1, 2, 2, 1}), ClassMap(1, 1, 1, 0)), ShapeError);
}

TEST(Huber, Examples) {
  EXPECT_EQ(losses::huber(Tensor::full({1, 1, 2, 2}, 7.0), DepthMap(1, 2, 2, 7.0)).item(), 0.0);
  EXPECT_EQ(losses::huber(Tensor({1, 1, 1, 1}, {0.0}), DepthMap(1, 1, 1, 100.0)).item(), 5000.0);
  EXPECT_EQ(losses::huber(Tensor({1, 1, 1, 1}, {0.0}), DepthMap(1, 1, 1, 500.0)).item(), 93750.0);
  EXPECT_EQ(losses::huber_value(500.0, 250.0), 93750.0);
  EXPECT_THROW(losses::huber(Tensor::zeros({1, 2, 1, 1}), DepthMap(1, 1, 1, 0.0)), ShapeError);
  EXPECT_THROW(losses::huber(Tensor::zeros({1, 1, 1, 1}), DepthMap(1, 1, 1, 0.0), {0.0}), ConfigError);
}

TEST(Huber, ContinuousAndSmoothAtDelta) {
  const double d = 250.0;
  EXPECT_EQ(losses::huber_value(d, d), 0.5 * d * d);
  const double h = 1e-6;
  const double left = (losses::huber_value(d, d) - losses::huber_value(d - h, d)) / h;
  const double right = (losses::huber_value(d + h, d) - losses::huber_value(d, d)) / h;
  EXPECT_NEAR(left, d, 1e-3);
  EXPECT_NEAR(right, d, 1e-3);
}

TEST(Huber, EvenAndBoundedByHalfSquare) {
  std::mt19937_64 eng(4);
  std::uniform_real_distribution<double> r(-1000, 1000);
  for (int i = 0; i < 1000; ++i) {
    const double x = r(eng);
    EXPECT_EQ(losses::huber_value(x, 250.0), losses::huber_value(-x, 250.0));
    EXPECT_LE(losses::huber_value(x, 250.0), 0.5 * x * x);
  }
}

TEST(Huber, GradientsMatchFiniteDifferencesAwayFromBoundary) {
  auto pred = random_tensor({2, 1, 3, 3}, 5, 0.0, 10.0);
  DepthMap target(2, 3, 3);
  std::mt19937_64 eng(6);
  for (std::size_t i = 0; i < target.size(); ++i) target.data[i] = (i % 2 == 0) ? 5.0 : 400.0 + (eng() % 100);
  EXPECT_LE(check_grads([&] { return losses::huber(pred, target); }, {pred}, 1e-3).max_rel, 1e-6);
}

TEST(Metrics, PixelAccuracyExamples) {
  ClassMap truth(1, 2, 2, std::vector<std::int32_t>{0, 1, 1, 0});
  EXPECT_EQ(losses::pixel_accuracy(truth, truth), 1.0);
  ClassMap half(1, 2, 2, std::vector<std::int32_t>{0, 1, 0, 1});
  EXPECT_EQ(losses::pixel_accuracy(half, truth), 0.5);
  ClassMap comp(1, 2, 2, std::vector<std::int32_t>{1, 0, 0, 1});
  EXPECT_EQ(losses::pixel_accuracy(comp, truth), 0.0);
  EXPECT_THROW(losses::pixel_accuracy(ClassMap(1, 1, 4), truth), ShapeError);
}

TEST(Metrics, RegressionAccuracyExamples) {
  DepthMap target(1, 2, 3, std::vector<double>{1, 2, 5, 10, 50, 99});
  Tensor same({1, 1, 2, 3}, target.data);
  EXPECT_EQ(losses::regression_accuracy(same, target), 1.0);
  Tensor near({1, 1, 2, 3}, std::vector<double>(6));
  Tensor twice({1, 1, 2, 3}, std::vector<double>(6));
  for (std::size_t i = 0; i < 6; ++i) {
    near.mutable_values()[i] = 1.05 * target.data[i];
    twice.mutable_values()[i] = 2.0 * target.data[i];
  }
  EXPECT_EQ(losses::regression_accuracy(near, target, 0.1), 1.0);
  EXPECT_EQ(losses::regression_accuracy(twice, target, 0.1), 0.0);
  // zero target falls back to the absolute floor
  EXPECT_EQ(losses::regression_accuracy(Tensor({1, 1, 1, 1}, {5e-4}), DepthMap(1, 1, 1, 0.0)), 1.0);
  EXPECT_EQ(losses::regression_accuracy(Tensor({1, 1, 1, 1}, {2e-3}), DepthMap(1, 1, 1, 0.0)), 0.0);
}

TEST(Metrics, PermutationInvariant) {
  std::mt19937_64 eng(7);
  ClassMap pred(1, 1, 50), truth(1, 1, 50);
  DepthMap target(1, 1, 50);
  std::vector<double> dp(50);
  for (std::size_t i = 0; i < 50; ++i) {
    pred.data[i] = static_cast<std::int32_t>(eng() % 3);
    truth.data[i] = static_cast<std::int32_t>(eng() % 3);
    target.data[i] = 1.0 + static_cast<double>(eng() % 100);
    dp[i] = target.data[i] * (0.8 + 0.01 * static_cast<double>(eng() % 40));
  }
  const double a = losses::pixel_accuracy(pred, truth);
  const double r = losses::regression_accuracy(Tensor({1, 1, 1, 50}, dp), target);
  std::vector<std::size_t> perm(50);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), eng);
  ClassMap p2 = pred, t2 = truth;
  DepthMap tg2 = target;
  std::vector<double> dp2(50);
  for (std::size_t i = 0; i < 50; ++i) {
    p2.data[i] = pred.data[perm[i]];
    t2.data[i] = truth.data[perm[i]];
    tg2.data[i] = target.data[perm[i]];
    dp2[i] = dp[perm[i]];
  }
  EXPECT_EQ(losses::pixel_accuracy(p2, t2), a);
  EXPECT_EQ(losses::regression_accuracy(Tensor({1, 1, 1, 50}, dp2), tg2), r);
}

TEST(Metrics, ArgmaxTiesGoToLowestClass) {
  auto labels = losses::argmax_channels(Tensor({1, 3, 1, 2}, {1, 0, 1, 5, 1, 5}));
  EXPECT_EQ(labels.data, (std::vector<std::int32_t>{0, 1}));
}
