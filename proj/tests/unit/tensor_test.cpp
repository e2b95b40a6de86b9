#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "grad_suite.hpp"
#include "oracles.hpp"
#include "pct/errors.hpp"
#include "pct/ops.hpp"
#include "pct/optim.hpp"

using namespace pct;
using pct::testing::gradcheck;
using pct::testing::uniform;

namespace {

void expect_values(const Tensor& t, const std::vector<double>& expected, double tol = 0.0) {
  ASSERT_EQ(t.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t.data()[i], expected[i], tol) << "entry " << i;
}

}  // namespace

TEST(Tensor, ShapeAndDataAgree) {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), numel(t.shape()));
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::zeros({2, 0}), DimensionError);
}

TEST(Tensor, GradHasDataShape) {
  std::mt19937_64 rng(1);
  Tensor a = uniform({3, 2}, rng);
  sum(mul(a, a)).backward();
  ASSERT_TRUE(a.has_grad());
  EXPECT_EQ(a.grad().size(), a.size());
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  expect_values(matmul(eye, m), {1, 2, 3, 4});
}

TEST(Matmul, HandArithmetic) {
  Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor v = Tensor::from({2, 1}, {0, 1});
  Tensor r = matmul(m, v);
  EXPECT_EQ(r.shape(), (Shape{2, 1}));
  expect_values(r, {2, 4});
}

TEST(Matmul, MismatchedInnerExtentThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(matmul(Tensor::zeros({2, 2, 3}), Tensor::zeros({3, 3, 1})), DimensionError);
}

TEST(Matmul, SumGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  Tensor a = uniform({3, 4}, rng), b = uniform({4, 2}, rng);
  EXPECT_LT(gradcheck([&] { return sum(matmul(a, b)); }, {a}), 1e-5);
}

TEST(Softmax, UniformLogits) {
  expect_values(softmax_rows(Tensor::from({1, 3}, {0, 0, 0})), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-15);
}

TEST(Softmax, ShiftInvariance) {
  for (double c : {-1000.0, -3.5, 0.0, 2.0, 700.0}) {
    expect_values(softmax_rows(Tensor::from({1, 2}, {c, c + std::log(3.0)})), {0.25, 0.75}, 1e-12);
  }
}

TEST(Softmax, MatchesQuadPrecisionOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = uniform({4, 4}, rng, -10, 10, false);
    Tensor y = softmax_rows(x);
    for (std::size_t r = 0; r < 4; ++r) {
      const auto ref = pct::testing::softmax_quad(x.data().subspan(r * 4, 4));
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y.data()[r * 4 + j], ref[j], 1e-12);
    }
  }
}

TEST(Softmax, NaNInputThrows) {
  EXPECT_THROW(softmax_rows(Tensor::from({1, 2}, {0.0, std::nan("")})), NumericError);
}

TEST(Conv2d, ScalarKernelDoubles) {
  std::vector<double> img(9);
  for (std::size_t i = 0; i < 9; ++i) img[i] = static_cast<double>(i) - 3.0;
  Tensor y = conv2d(Tensor::from({1, 1, 3, 3}, img), Tensor::from({1, 1, 1, 1}, {2}), 1, 0);
  std::vector<double> expected;
  for (double v : img) expected.push_back(2 * v);
  expect_values(y, expected);
}

TEST(Conv2d, BoxSumWithPadding) {
  Tensor y = conv2d(Tensor::full({1, 1, 5, 5}, 1.0), Tensor::full({1, 1, 3, 3}, 1.0), 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 5, 5}));
  auto d = y.data();
  for (std::size_t r = 1; r < 4; ++r) {
    for (std::size_t c = 1; c < 4; ++c) EXPECT_EQ(d[r * 5 + c], 9.0);
  }
  for (std::size_t corner : {0u, 4u, 20u, 24u}) EXPECT_EQ(d[corner], 4.0);
  EXPECT_EQ(d[2], 6.0);
}

TEST(Conv2d, StrideTwoOutputExtent) {
  Tensor y = conv2d(Tensor::zeros({2, 3, 7, 6}), Tensor::zeros({4, 3, 3, 3}), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 4, 3}));
}

TEST(Conv2d, KernelGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  Tensor x = uniform({2, 2, 5, 5}, rng), k = uniform({3, 2, 3, 3}, rng);
  Tensor w = uniform({2, 3, 3, 3}, rng, -1, 1, false);
  EXPECT_LT(gradcheck([&] { return pct::testing::readout(conv2d(x, k, 2, 1), w); }, {k}), 1e-4);
}

TEST(Conv2d, BadArgumentsThrow) {
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), 1, 1), DimensionError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), 3, 1), ConfigError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), 1, 0), DimensionError);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::from({3}, {0.5, -1, 2}, true);
  sum(x).backward();
  expect_values(Tensor::from({3}, {x.grad()[0], x.grad()[1], x.grad()[2]}), {1, 1, 1});
}

TEST(Backward, Quadratic) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  sum(mul(x, x)).backward();
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Backward, ComposedGraphMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  Tensor x = uniform({4, 3}, rng), w = uniform({3, 5}, rng);
  const std::vector<int> labels{0, 4, 2, 2};
  EXPECT_LT(gradcheck([&] { return cross_entropy(softmax_rows(matmul(x, w)), labels); }, {x, w}), 1e-4);
}

TEST(Backward, ReachesEveryLeaf) {
  std::mt19937_64 rng(2);
  Tensor a = uniform({2, 3}, rng), b = uniform({3, 2}, rng), c = uniform({2}, rng);
  sum(relu(add_broadcast(matmul(a, b), c))).backward();
  EXPECT_TRUE(a.has_grad());
  EXPECT_TRUE(b.has_grad());
  EXPECT_TRUE(c.has_grad());
}

TEST(Backward, NonScalarRootThrows) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(mul(x, x).backward(), ContractError);
}

TEST(Backward, NoGradGuardRecordsNoHistory) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  NoGradGuard guard;
  EXPECT_FALSE(sum(x).requires_grad());
}

TEST(Sgd, PlainStep) {
  Param p("p", Tensor::from({1}, {0.0}, true));
  p.value.mutable_grad()[0] = 1.0;
  std::vector<Param*> ps{&p};
  sgd_step(ps, OptimizerConfig{0.1, 0.0, 0.0, {}}, 0);
  EXPECT_DOUBLE_EQ(p.value.data()[0], -0.1);
}

TEST(Sgd, MomentumRecurrence) {
  const double g = 0.3, lr = 0.1;
  Param p("p", Tensor::from({1}, {0.0}, true));
  std::vector<Param*> ps{&p};
  const OptimizerConfig cfg{lr, 0.9, 0.0, {}};
  p.value.mutable_grad()[0] = g;
  sgd_step(ps, cfg, 0);
  const double after_first = p.value.data()[0];
  p.value.mutable_grad()[0] = g;
  sgd_step(ps, cfg, 0);
  EXPECT_NEAR(after_first - p.value.data()[0], lr * 1.9 * g, 1e-15);
}

TEST(Sgd, ScheduleDecay) {
  const OptimizerConfig cfg{0.1, 0.9, 5e-4, {{16, 0.1}}};
  EXPECT_DOUBLE_EQ(learning_rate_at(cfg, 15), 0.1);
  EXPECT_NEAR(learning_rate_at(cfg, 16), 0.01, 1e-15);
  const OptimizerConfig full{0.1, 0.9, 5e-4, {{16, 0.1}, {24, 0.1}, {28, 0.1}}};
  EXPECT_NEAR(learning_rate_at(full, 31), 1e-4, 1e-18);
}

TEST(Sgd, MissingGradientThrows) {
  Param p("p", Tensor::from({1}, {0.0}, true));
  std::vector<Param*> ps{&p};
  EXPECT_THROW(sgd_step(ps, OptimizerConfig{}, 0), ContractError);
}

TEST(Sgd, ClipGradNormRescales) {
  Param a("a", Tensor::from({2}, {0, 0}, true)), b("b", Tensor::from({1}, {0}, true)), c("c", Tensor::zeros({1}, true));
  a.value.mutable_grad()[0] = 3;
  b.value.mutable_grad()[0] = 4;
  std::vector<Param*> ps{&a, &b, &c};
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(a.value.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(b.value.grad()[0], 0.8, 1e-15);
  EXPECT_FALSE(c.value.has_grad());
  EXPECT_THROW(clip_grad_norm(ps, 0.0), ContractError);
}

TEST(GradientSuite, TensorOps) {
  std::mt19937_64 rng(101);
  for (const auto& c : pct::testing::gradient_cases()) {
    if (c.family != "tensor") continue;
    for (int trial = 0; trial < 20; ++trial) EXPECT_LT(c.trial(rng), 1e-4) << c.op << " trial " << trial;
  }
}
