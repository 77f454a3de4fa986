#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hact/error.hpp"
#include "hact/gradcheck.hpp"
#include "hact/ops.hpp"
#include "hact/tensor.hpp"
#include "oracles.hpp"

namespace hact {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> d(shape_numel(shape));
  for (auto& v : d) v = u(rng);
  return Tensor(std::move(shape), std::move(d));
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

TEST(TensorTest, RejectsInconsistentShape) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor({2, 0}, {}), ShapeError);
}

TEST(Conv3dTest, ZeroInputGivesZeroOutput) {
  std::mt19937_64 rng(1);
  const Tensor x = Tensor::zeros({1, 2, 3, 4, 4});
  const Tensor out = conv3d(x, random_tensor({3, 2, 2, 3, 3}, rng), Tensor::zeros({3}), {{1, 1, 1}, {0, 1, 1}});
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv3dTest, UnitKernelIsIdentity) {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({2, 1, 3, 4, 5}, rng);
  const Tensor out = conv3d(x, Tensor::full({1, 1, 1, 1, 1}, 1.0), Tensor::zeros({1}));
  EXPECT_EQ(out.shape(), x.shape());
  EXPECT_EQ(values(out), values(x));
}

TEST(Conv3dTest, HandEvaluatedSlidingDot) {
  const Tensor x({1, 1, 1, 1, 3}, {1, 2, 3});
  const Tensor out = conv3d(x, Tensor({1, 1, 1, 1, 2}, {1, 1}), Tensor::zeros({1}));
  EXPECT_EQ(out.shape(), (Shape{1, 1, 1, 1, 2}));
  EXPECT_EQ(values(out), (std::vector<double>{3, 5}));
}

TEST(Conv3dTest, OutputExtentsFollowStrideAndPadding) {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({1, 2, 7, 9, 6}, rng);
  const Tensor out = conv3d(x, random_tensor({4, 2, 3, 3, 2}, rng), Tensor::zeros({4}), {{2, 2, 1}, {1, 1, 0}});
  // (7+2-3)/2+1 = 4, (9+2-3)/2+1 = 5, (6-2)/1+1 = 5
  EXPECT_EQ(out.shape(), (Shape{1, 4, 4, 5, 5}));
}

TEST(Conv3dTest, ChannelMismatchNamesBothShapes) {
  const Tensor x = Tensor::zeros({1, 2, 1, 3, 3});
  const Tensor w = Tensor::zeros({1, 3, 1, 1, 1});
  try {
    conv3d(x, w, Tensor::zeros({1}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1,2,1,3,3]"), std::string::npos);
    EXPECT_NE(msg.find("[1,3,1,1,1]"), std::string::npos);
  }
}

TEST(Conv3dTest, KernelLargerThanPaddedInputRejected) {
  EXPECT_THROW(conv3d(Tensor::zeros({1, 1, 1, 2, 2}), Tensor::zeros({1, 1, 1, 3, 3}), Tensor::zeros({1})),
               ShapeError);
}

TEST(Conv3dTest, LinearInInputAndWeight) {
  std::mt19937_64 rng(4);
  const Conv3dOptions opt{{1, 2, 1}, {1, 1, 1}};
  const Tensor x = random_tensor({2, 2, 3, 5, 4}, rng), y = random_tensor({2, 2, 3, 5, 4}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3, 3}, rng), v = random_tensor({3, 2, 3, 3, 3}, rng);
  const Tensor zb = Tensor::zeros({3});
  const double a = 0.7, b = -1.3;
  const Tensor mix_x = add(scale(x, a), scale(y, b));
  const auto lhs = values(conv3d(mix_x, w, zb, opt));
  const auto fx = values(conv3d(x, w, zb, opt)), fy = values(conv3d(y, w, zb, opt));
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], a * fx[i] + b * fy[i], 1e-10);

  const Tensor mix_w = add(scale(w, a), scale(v, b));
  const auto lhs_w = values(conv3d(x, mix_w, zb, opt));
  const auto gw = values(conv3d(x, v, zb, opt));
  for (std::size_t i = 0; i < lhs_w.size(); ++i) EXPECT_NEAR(lhs_w[i], a * fx[i] + b * gw[i], 1e-10);
}

TEST(PoolTest, Means) {
  const Tensor c = Tensor::full({2, 3, 2, 2, 2}, 4.5);
  for (double v : values(global_avg_pool(c))) EXPECT_DOUBLE_EQ(v, 4.5);

  const Tensor cell({1, 1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(global_avg_pool(cell).item(), 2.5);

  const Tensor single({2, 3, 1, 1, 1}, {1, 2, 3, 4, 5, 6});
  const Tensor pooled = global_avg_pool(single);
  EXPECT_EQ(pooled.shape(), (Shape{2, 3}));
  EXPECT_EQ(values(pooled), values(single));
}

TEST(LinearTest, Examples) {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({3, 2}, rng);
  EXPECT_EQ(values(linear(x, Tensor({2, 2}, {1, 0, 0, 1}), Tensor::zeros({2}))), values(x));

  const Tensor out = linear(Tensor({1, 2}, {1, 2}), Tensor({2, 2}, {3, 4, 0, 1}), Tensor({2}, {1, 0}));
  EXPECT_EQ(values(out), (std::vector<double>{12, 2}));

  const Tensor rows = linear(x, Tensor::zeros({2, 2}), Tensor({2}, {0.5, -2}));
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(rows.at(2 * r), 0.5);
    EXPECT_EQ(rows.at(2 * r + 1), -2.0);
  }
  EXPECT_THROW(linear(x, Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
}

TEST(CrossEntropyTest, Examples) {
  const std::vector<std::size_t> t0{0};
  EXPECT_NEAR(softmax_cross_entropy(Tensor::zeros({1, 4}), t0).item(), std::log(4.0), 1e-15);
  EXPECT_NEAR(softmax_cross_entropy(Tensor({1, 2}, {1000, 0}), t0).item(), 0.0, 1e-12);
  const std::vector<std::size_t> t2{2};
  // log(e + e^2 + e^3) - 3 evaluated with 30-digit arithmetic.
  EXPECT_NEAR(softmax_cross_entropy(Tensor({1, 3}, {1, 2, 3}), t2).item(), 0.407605964444380304, 1e-14);
  const std::vector<std::size_t> bad{3};
  EXPECT_THROW(softmax_cross_entropy(Tensor::zeros({1, 3}), bad), IndexError);
}

TEST(CrossEntropyTest, SoftmaxRowsSumToOneAndLossNonNegative) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor z = random_tensor({4, 7}, rng, -30.0, 30.0);
    const auto p = softmax_rows(z);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) s += p[r * 7 + j];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    std::vector<std::size_t> t{rng() % 7, rng() % 7, rng() % 7, rng() % 7};
    EXPECT_GE(softmax_cross_entropy(z, t).item(), 0.0);
  }
}

TEST(ElementwiseTest, Examples) {
  EXPECT_EQ(values(relu(Tensor({3}, {-1, 0, 2}))), (std::vector<double>{0, 0, 2}));
  const Tensor x({2}, {1, 2});
  EXPECT_EQ(values(add(x, Tensor::zeros({2}))), values(x));
  EXPECT_EQ(values(add(x, Tensor({2}, {3, 4}))), (std::vector<double>{4, 6}));
  EXPECT_THROW(add(x, Tensor::zeros({3})), ShapeError);
}

TEST(BatchNormTest, Examples) {
  std::mt19937_64 rng(7);
  // Zero-mean, unit-variance channel stays put (up to eps).
  const Tensor std_batch({4, 1}, {-1, 1, -1, 1});
  BatchNormStats st{{0.0}, {1.0}};
  const auto out = values(batch_norm(std_batch, Tensor::full({1}, 1.0), Tensor::zeros({1}), st, Mode::kTrain));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out[i], std_batch.at(i), 1e-5);

  const Tensor x = random_tensor({3, 2, 4}, rng);
  BatchNormStats st2{{0, 0}, {1, 1}};
  const Tensor beta({2}, {0.25, -3});
  const Tensor y = batch_norm(x, Tensor::zeros({2}), beta, st2, Mode::kTrain);
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(y.at((s * 2 + c) * 4 + k), beta.at(c));
    }
  }

  BatchNormStats st3{{0.0}, {1.0}};
  const Tensor pair({2, 1}, {0, 2});
  const auto std_pair = values(
      batch_norm(pair, Tensor::full({1}, 1.0), Tensor::zeros({1}), st3, Mode::kTrain, kBatchNormMomentum, 0.0));
  EXPECT_DOUBLE_EQ(std_pair[0], -1.0);
  EXPECT_DOUBLE_EQ(std_pair[1], 1.0);
  // Running stats: mean 0.9*0 + 0.1*1, unbiased var 2 -> 0.9*1 + 0.1*2.
  EXPECT_DOUBLE_EQ(st3.running_mean[0], 0.1);
  EXPECT_DOUBLE_EQ(st3.running_var[0], 1.1);
}

TEST(BatchNormTest, EvalUsesRunningStats) {
  BatchNormStats st{{1.0}, {4.0}};
  const Tensor y = batch_norm(Tensor({2, 1}, {1, 3}), Tensor::full({1}, 1.0), Tensor::zeros({1}), st, Mode::kEval,
                              kBatchNormMomentum, 0.0);
  EXPECT_DOUBLE_EQ(y.at(0), 0.0);
  EXPECT_DOUBLE_EQ(y.at(1), 1.0);
  EXPECT_DOUBLE_EQ(st.running_mean[0], 1.0);
}

TEST(BatchNormTest, TrainModeNeedsTwoValues) {
  BatchNormStats st{{0.0}, {1.0}};
  EXPECT_THROW(batch_norm(Tensor({1, 1}, {3}), Tensor::full({1}, 1.0), Tensor::zeros({1}), st, Mode::kTrain),
               ShapeError);
}

TEST(BackwardTest, SumAndSquare) {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({3, 4}, rng);
  x.set_requires_grad(true);
  {
    GradTape tape;
    backward(sum(x));
  }
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  x.zero_grad();
  {
    GradTape tape;
    backward(sum(mul(x, x)));
  }
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x.at(i));
}

TEST(BackwardTest, UsageErrors) {
  Tensor x = Tensor::full({2}, 1.0, true);
  {
    GradTape tape;
    Tensor y = scale(x, 2.0);
    EXPECT_THROW(backward(y), UsageError);  // not scalar
  }
  Tensor unrecorded = sum(x);
  EXPECT_THROW(backward(unrecorded), UsageError);
  EXPECT_THROW(backward(Tensor::scalar(1.0)), UsageError);
}

TEST(BackwardTest, ReplaysInReverseOrderAndFillsLeaves) {
  std::mt19937_64 rng(9);
  Tensor a = random_tensor({2, 3}, rng);
  Tensor w = random_tensor({4, 3}, rng);
  Tensor b = random_tensor({4}, rng);
  a.set_requires_grad(true);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  GradTape tape;
  const Tensor h = relu(linear(a, w, b));
  const std::vector<std::size_t> t{1, 3};
  const Tensor loss = softmax_cross_entropy(h, t);
  EXPECT_EQ(tape.op_names(), (std::vector<std::string>{"linear", "relu", "softmax_cross_entropy"}));
  backward(loss);
  EXPECT_TRUE(a.has_grad());
  EXPECT_TRUE(w.has_grad());
  EXPECT_TRUE(b.has_grad());
  EXPECT_FALSE(h.has_grad());  // intermediate released
}

TEST(BackwardTest, RepeatedEvaluationIsBitIdentical) {
  std::mt19937_64 rng(10);
  Tensor x = random_tensor({2, 2, 3, 4, 4}, rng);
  Tensor w = random_tensor({3, 2, 3, 3, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  w.set_requires_grad(true);
  auto run = [&] {
    w.zero_grad();
    GradTape tape;
    backward(sum(relu(conv3d(x, w, b, {{1, 1, 1}, {1, 1, 1}}))));
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(BackwardTest, RetainedIntermediateGrad) {
  Tensor x({3}, {1, -2, 3}, true);
  GradTape tape;
  Tensor h = scale(x, 3.0);
  h.retain_grad();
  backward(sum(mul(h, h)));
  ASSERT_TRUE(h.has_grad());
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(h.grad()[i], 2.0 * h.at(i));
}

// Finite-difference checks on randomized small shapes for every primitive.
class PrimitiveGradTest : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradTest, MatchesCentralDifferences) {
  const auto report = oracle::primitive_gradcheck(GetParam());
  ASSERT_EQ(report.entries.size(), 8u);
  for (const auto& e : report.entries) {
    EXPECT_TRUE(e.passed) << e.tensor << " rel err " << e.max_relative_error;
  }
}

INSTANTIATE_TEST_SUITE_P(Randomized, PrimitiveGradTest, ::testing::Range(0, 6));

TEST(GradCheckTest, LinearAndConvPass) {
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({3, 4}, rng), w = random_tensor({2, 4}, rng), b = random_tensor({2}, rng);
  const auto lin = check_gradients([&] { return sum(mul(linear(x, w, b), linear(x, w, b))); }, {x, w, b});
  EXPECT_TRUE(lin.passed());

  Tensor v = random_tensor({1, 2, 3, 4, 4}, rng), k = random_tensor({2, 2, 2, 3, 3}, rng),
         kb = random_tensor({2}, rng);
  const auto conv = check_gradients(
      [&] {
        const Tensor y = conv3d(v, k, kb, {{1, 1, 1}, {1, 1, 1}});
        return sum(mul(y, y));
      },
      {v, k, kb});
  EXPECT_TRUE(conv.passed());
}

TEST(GradCheckTest, CorruptedAdjointIsNamed) {
  std::mt19937_64 rng(12);
  Tensor good = random_tensor({4}, rng).set_name("good");
  Tensor bad = random_tensor({4}, rng).set_name("bad");
  // Squares its input but reports half the true adjoint.
  auto broken_square = [](const Tensor& t) {
    std::vector<double> out(t.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = t.at(i) * t.at(i);
    return record_op("broken_square", t.shape(), std::move(out), {t},
                     [t](std::span<const double> gy, std::span<const std::span<double>> gin) {
                       for (std::size_t i = 0; i < gy.size(); ++i) gin[0][i] += gy[i] * t.at(i);
                     });
  };
  const auto report = check_gradients([&] { return add(sum(mul(good, good)), sum(broken_square(bad))); }, {good, bad});
  EXPECT_FALSE(report.passed());
  EXPECT_EQ(report.failures(), std::vector<std::string>{"bad"});
}

TEST(GradCheckTest, NonDeterministicFunctionDiagnosed) {
  Tensor x({2}, {1, 2});
  int calls = 0;
  auto fn = [&] { return scale(sum(x), 1.0 + 0.1 * (calls++)); };
  EXPECT_THROW(check_gradients(fn, {x}), DiagnosticError);
}

}  // namespace
}  // namespace hact
