#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mtl/error.hpp"
#include "mtl/ops.hpp"
#include "mtl/tensor.hpp"
#include "oracle.hpp"

using namespace mtl;

TEST(Tensor, ShapeMustMatchValueCount) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  Tensor t({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(shape_str(t.shape()), "[2,3]");
  EXPECT_THROW(t.dim(2), ShapeError);
  EXPECT_THROW(t.item(), ShapeError);
}

TEST(Tensor, GradHasValueShapeOnceAllocated) {
  auto x = Tensor::full({2, 2}, 3.0, true);
  EXPECT_FALSE(x.has_grad());
  backward(ops::sum(x));
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad().size(), x.numel());
}

TEST(Tensor, CloneIsDeepAndDetached) {
  auto x = Tensor::full({3}, 1.0, true);
  auto y = ops::scale(x, 2.0);
  auto c = y.clone();
  EXPECT_TRUE(c.is_leaf());
  EXPECT_FALSE(c.requires_grad());
  c.mutable_values()[0] = 99.0;
  EXPECT_EQ(y.values()[0], 2.0);
}

TEST(Tensor, CheckFiniteNamesTheTensorAndIndex) {
  Tensor t({3}, {1.0, std::numeric_limits<double>::quiet_NaN(), 2.0});
  try {
    t.check_finite("weights");
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("weights"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("index 1"), std::string::npos);
  }
  Tensor inf({2}, {std::numeric_limits<double>::infinity(), 0.0});
  EXPECT_THROW(inf.check_finite("x"), NumericError);
  EXPECT_NO_THROW(Tensor::full({7}, 1e300).check_finite("big"));
}

TEST(Backward, SumGivesOnes) {
  auto x = mtl::testing::random_tensor({2, 3}, 1);
  backward(ops::sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, HalfSquaredNormGivesInput) {
  auto x = mtl::testing::random_tensor({4, 5}, 2);
  backward(ops::scale(ops::sum(ops::mul(x, x)), 0.5));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(x.grad()[i], x.values()[i], 1e-15);
}

TEST(Backward, RejectsNonScalarAndDetachedRoots) {
  auto x = mtl::testing::random_tensor({2, 2}, 3);
  EXPECT_THROW(backward(ops::scale(x, 2.0)), GraphError);
  auto c = Tensor::full({2}, 1.0, false);
  EXPECT_THROW(backward(ops::sum(c)), GraphError);
  {
    NoGradGuard guard;
    auto y = ops::sum(x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_THROW(backward(y), GraphError);
  }
  EXPECT_TRUE(grad_enabled());
}

TEST(Backward, SecondPassWithoutRetainIsAnError) {
  auto x = mtl::testing::random_tensor({3}, 4);
  auto loss = ops::sum(ops::mul(x, x));
  backward(loss);
  EXPECT_THROW(backward(loss), GraphError);
}

TEST(Backward, RetainedGraphAccumulatesIntoLeaves) {
  auto x = mtl::testing::random_tensor({3}, 5);
  auto loss = ops::sum(ops::mul(x, x));
  backward(loss, {.retain_graph = true});
  std::vector<double> once(x.grad().begin(), x.grad().end());
  backward(loss);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(x.grad()[i], 2.0 * once[i], 1e-14);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  auto x = mtl::testing::random_tensor({2, 3}, 6);
  auto w = mtl::testing::random_tensor({2, 3}, 7);
  auto build = [&] {
    auto e = ops::mul(x, w);  // used twice
    return ops::sum(ops::add(ops::mul(e, e), ops::exp(ops::scale(e, 0.3))));
  };
  const auto r = mtl::testing::check_grads(build, {x, w});
  EXPECT_LE(r.max_rel, 1e-7);
}

TEST(Graph, TraceIsExactReverseOfExecution) {
  auto x = mtl::testing::random_tensor({2, 2}, 8);
  auto a = ops::exp(x);
  auto b = ops::scale(a, 2.0);
  auto c = ops::log(ops::add_scalar(b, 1.0));
  auto loss = ops::sum(ops::mul(c, a));
  const auto g = Graph::trace(loss);
  EXPECT_EQ(g.op_names(), (std::vector<std::string>{"sum", "mul", "log", "add_scalar", "scale", "exp"}));
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_GT(g.ops()[i - 1]->seq, g.ops()[i]->seq);
}

TEST(Graph, EveryRequiresGradLeafGetsGradient) {
  auto used = mtl::testing::random_tensor({3}, 9);
  auto unused_path = mtl::testing::random_tensor({3}, 10);
  auto loss = ops::sum(ops::add(used, ops::scale(unused_path, 0.0)));
  backward(loss);
  EXPECT_TRUE(used.has_grad());
  EXPECT_TRUE(unused_path.has_grad());
  for (double g : unused_path.grad()) EXPECT_EQ(g, 0.0);
}

TEST(NoGrad, GuardNestsAndRestores) {
  EXPECT_TRUE(grad_enabled());
  {
    NoGradGuard a;
    {
      NoGradGuard b;
      EXPECT_FALSE(grad_enabled());
    }
    EXPECT_FALSE(grad_enabled());
  }
  EXPECT_TRUE(grad_enabled());
}
