#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hact/error.hpp"
#include "hact/gradcheck.hpp"
#include "hact/model.hpp"
#include "oracles.hpp"

namespace hact {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> d(shape_numel(shape));
  for (auto& v : d) v = n(rng);
  return Tensor(std::move(shape), std::move(d));
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

StackConfig small_config() {
  StackConfig cfg;
  cfg.head_classes = {2, 2, 2, 4};
  return cfg;
}

TEST(ModelTest, ForwardShapeContract) {
  Model model = Model::build(small_config(), 1);
  std::mt19937_64 rng(1);
  const auto logits = forward_heads(model, random_tensor({2, 1, 4, 16, 16}, rng), Mode::kTrain);
  EXPECT_EQ(logits[0].shape(), (Shape{2, 2}));
  EXPECT_EQ(logits[1].shape(), (Shape{2, 2}));
  EXPECT_EQ(logits[2].shape(), (Shape{2, 2}));
  EXPECT_EQ(logits[3].shape(), (Shape{2, 4}));
}

TEST(ModelTest, StemIsTwoDimensionalAndStacksAreInflated) {
  Model model = Model::build(small_config(), 1);
  EXPECT_EQ(model.stem().weight.dim(2), 1u);
  bool saw_temporal = false;
  for (const ConvBn* layer : model.prunable_layers()) {
    EXPECT_GE(layer->weight.dim(2), 1u);
    saw_temporal |= layer->weight.dim(2) == 3;
  }
  EXPECT_TRUE(saw_temporal);
}

TEST(ModelTest, SameSeedSameParameters) {
  Model a = Model::build(small_config(), 42);
  Model b = Model::build(small_config(), 42);
  Model c = Model::build(small_config(), 43);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(values(pa[i]), values(pb[i]));
    any_diff |= values(pa[i]) != values(pc[i]);
  }
  EXPECT_TRUE(any_diff);
}

TEST(ModelTest, RejectsInvalidConfig) {
  StackConfig dec = small_config();
  dec.head_classes = {4, 2, 2, 4};
  EXPECT_THROW(Model::build(dec, 1), ConfigError);
  StackConfig empty = small_config();
  empty.blocks_per_stack = {1, 0, 1, 1};
  EXPECT_THROW(Model::build(empty, 1), ConfigError);
}

TEST(InflateTest, Rules) {
  std::mt19937_64 rng(2);
  const Tensor w2 = random_tensor({3, 2, 3, 3}, rng);
  const Tensor same = inflate_kernel(w2, 1);
  EXPECT_EQ(same.shape(), (Shape{3, 2, 1, 3, 3}));
  EXPECT_EQ(values(same), values(w2));

  const Tensor thirds = inflate_kernel(Tensor::full({1, 1, 2, 2}, 1.0), 3);
  EXPECT_EQ(thirds.shape(), (Shape{1, 1, 3, 2, 2}));
  for (double v : thirds.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);

  EXPECT_THROW(inflate_kernel(w2, 0), ConfigError);
}

// Temporally constant input with edge-replicated temporal padding: the
// inflated layer reproduces the 2D convolution frame by frame.
TEST(InflateTest, ReproducesTwoDimensionalConvolutionOnStaticInput) {
  std::mt19937_64 rng(3);
  Model model = Model::build(small_config(), 5);
  const ConvBn& layer = model.stacks()[0][0].path[1];
  ASSERT_EQ(layer.weight.dim(2), 3u);
  const std::size_t cout = layer.weight.dim(0), cin = layer.weight.dim(1);
  // Recover the 2D source kernel: inflation splits it evenly over time.
  std::vector<double> w2(cout * cin * 9, 0.0);
  for (std::size_t f = 0; f < cout * cin; ++f) {
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t k = 0; k < 9; ++k) w2[f * 9 + k] += layer.weight.at((f * 3 + t) * 9 + k);
    }
  }
  const Tensor kernel2d({cout, cin, 1, 3, 3}, w2);

  const Tensor frame = random_tensor({2, cin, 1, 6, 5}, rng);
  std::vector<double> clip;
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t c = 0; c < cin; ++c) {
      for (int t = 0; t < 4; ++t) {
        const auto* base = frame.data().data() + (s * cin + c) * 30;
        clip.insert(clip.end(), base, base + 30);
      }
    }
  }
  const Tensor video({2, cin, 4, 6, 5}, clip);
  Conv3dOptions opt{{1, 1, 1}, {1, 1, 1}, TemporalPadding::kReplicate};
  const Tensor out3d = conv3d(video, layer.weight, layer.bias, opt);
  const Tensor out2d = conv3d(frame, kernel2d, layer.bias, {{1, 1, 1}, {0, 1, 1}});
  const std::size_t plane = 30;
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t c = 0; c < cout; ++c) {
      for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t k = 0; k < plane; ++k) {
          EXPECT_NEAR(out3d.at(((s * cout + c) * 4 + t) * plane + k), out2d.at((s * cout + c) * plane + k), 1e-10);
        }
      }
    }
  }
}

TEST(ModelTest, ZeroHeadsGiveUniformSoftmax) {
  Model model = Model::build(small_config(), 7);
  for (auto& head : model.heads()) {
    for (auto& v : head.weight.mutable_data()) v = 0.0;
  }
  std::mt19937_64 rng(4);
  const auto logits = forward_heads(model, random_tensor({2, 1, 4, 16, 16}, rng), Mode::kTrain);
  for (const auto& l : logits) {
    for (double v : l.data()) EXPECT_EQ(v, 0.0);
    const auto p = softmax_rows(l);
    for (double v : p) EXPECT_DOUBLE_EQ(v, 1.0 / static_cast<double>(l.dim(1)));
  }
}

TEST(ModelTest, EvalModeIsBatchIndependent) {
  Model model = Model::build(small_config(), 8);
  std::mt19937_64 rng(5);
  const Tensor one = random_tensor({1, 1, 4, 16, 16}, rng);
  std::vector<double> twice(one.data().begin(), one.data().end());
  twice.insert(twice.end(), one.data().begin(), one.data().end());
  const auto logits = forward_heads(model, Tensor({2, 1, 4, 16, 16}, twice), Mode::kEval);
  for (const auto& l : logits) {
    const std::size_t k = l.dim(1);
    for (std::size_t j = 0; j < k; ++j) EXPECT_EQ(l.at(j), l.at(k + j));
  }
}

TEST(ModelTest, HeadDependsOnlyOnEarlierStacks) {
  std::mt19937_64 rng(6);
  const Tensor batch = random_tensor({2, 1, 4, 16, 16}, rng);
  for (std::size_t head = 0; head + 1 < kNumStacks; ++head) {
    Model model = Model::build(small_config(), 9);
    const auto before = forward_heads(model, batch, Mode::kEval);
    for (auto& block : model.stacks()[head + 1]) {
      for (auto& layer : block.path) {
        for (auto& v : layer.weight.mutable_data()) v += 0.5;
      }
    }
    const auto after = forward_heads(model, batch, Mode::kEval);
    for (std::size_t l = 0; l <= head; ++l) EXPECT_EQ(values(before[l]), values(after[l]));
    EXPECT_NE(values(before[head + 1]), values(after[head + 1]));
  }
}

TEST(ModelTest, CloneIsDeep) {
  Model a = Model::build(small_config(), 10);
  Model b = a.clone();
  b.heads()[0].weight.mutable_data()[0] += 1.0;
  b.stem().stats.running_mean[0] = 5.0;
  EXPECT_NE(a.heads()[0].weight.at(0), b.heads()[0].weight.at(0));
  EXPECT_NE(a.stem().stats.running_mean[0], 5.0);
}

TEST(AttributionTest, ZeroedDownstreamGivesZeroMap) {
  Model model = Model::build(small_config(), 11);
  for (auto& v : model.heads()[3].weight.mutable_data()) v = 0.0;
  std::mt19937_64 rng(7);
  const std::vector<std::size_t> targets{0, 3};
  const Tensor map = gradient_attribution(model, random_tensor({2, 1, 4, 16, 16}, rng), targets, 4);
  for (double v : map.data()) EXPECT_EQ(v, 0.0);
}

TEST(AttributionTest, MapIsNormalized) {
  Model model = Model::build(small_config(), 12);
  std::mt19937_64 rng(8);
  const Tensor batch = random_tensor({2, 1, 4, 16, 16}, rng);
  for (std::size_t head = 1; head <= 4; ++head) {
    const std::vector<std::size_t> targets{1, 0};
    const Tensor map = gradient_attribution(model, batch, targets, head);
    EXPECT_EQ(map.ndim(), 4u);  // [C,T,H,W]
    double mx = 0.0;
    for (double v : map.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      mx = std::max(mx, v);
    }
    EXPECT_EQ(mx, 1.0);
  }
  const std::vector<std::size_t> targets{0, 0};
  EXPECT_THROW(gradient_attribution(model, batch, targets, 0), UsageError);
  EXPECT_THROW(gradient_attribution(model, batch, targets, 5), UsageError);
}

TEST(ModelGradTest, TwoBlockToyModelMatchesFiniteDifferences) {
  const auto report = oracle::two_block_gradcheck();
  for (const auto& e : report.entries) EXPECT_TRUE(e.passed) << e.tensor << " " << e.max_relative_error;
}

}  // namespace
}  // namespace hact
