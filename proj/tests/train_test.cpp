#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "hact/error.hpp"
#include "hact/pruning.hpp"
#include "hact/train.hpp"

namespace hact {
namespace {

// Class 0 lights the top half of every frame, class 1 the bottom half; both
// survive horizontal flips and crops.
Dataset stripes(std::size_t per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.1);
  Dataset d;
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t k = 0; k < per_class; ++k) {
      std::vector<double> v(8 * 12 * 12);
      for (std::size_t t = 0; t < 8; ++t) {
        for (std::size_t y = 0; y < 12; ++y) {
          for (std::size_t x = 0; x < 12; ++x) {
            const bool lit = (y < 6) == (c == 0);
            v[(t * 12 + y) * 12 + x] = (lit ? 1.0 : 0.0) + noise(rng);
          }
        }
      }
      d.push_back({Tensor({8, 1, 12, 12}, std::move(v)), c});
    }
  }
  return d;
}

StackConfig tiny_config() {
  StackConfig cfg;
  cfg.base_channels = 2;
  cfg.head_classes = {2, 2, 2, 2};
  return cfg;
}

TrainConfig tiny_train() {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 4;
  cfg.crop_size = 8;
  cfg.frames_per_clip = 4;
  cfg.seed = 11;
  return cfg;
}

TEST(SplitTest, TenPercent) {
  const auto s = split_indices(100, 0.10, 1);
  EXPECT_EQ(s.validation.size(), 10u);
  EXPECT_EQ(s.rest.size(), 90u);
  std::set<std::size_t> all(s.validation.begin(), s.validation.end());
  all.insert(s.rest.begin(), s.rest.end());
  EXPECT_EQ(all.size(), 100u);
}

TEST(SplitTest, SeededAndDisjoint) {
  EXPECT_EQ(split_indices(50, 0.2, 3).validation, split_indices(50, 0.2, 3).validation);
  EXPECT_NE(split_indices(50, 0.2, 3).validation, split_indices(50, 0.2, 4).validation);
  const Dataset d = stripes(5, 1);
  const auto [val, rest] = split_validation(d, 0.10, 2);
  EXPECT_EQ(val.size(), 1u);
  EXPECT_EQ(rest.size(), 9u);
  for (const auto& v : val) {
    for (const auto& r : rest) EXPECT_FALSE(v.frames.same_as(r.frames));
  }
}

TEST(SplitTest, EmptySetIsDataError) {
  EXPECT_THROW(split_validation({}, 0.1, 1), DataError);
  EXPECT_THROW(split_indices(10, 1.0, 1), ConfigError);
}

TEST(SplitTest, StratifiedCoversEveryClass) {
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < 8; ++c) {
    for (std::size_t k = 0; k < 20; ++k) labels.push_back(c);
  }
  const auto s = split_indices_stratified(labels, 0.10, 5);
  EXPECT_EQ(s.validation.size(), 16u);
  EXPECT_EQ(s.rest.size(), 144u);
  std::vector<std::size_t> per_class(8, 0);
  for (auto i : s.validation) ++per_class[labels[i]];
  for (auto n : per_class) EXPECT_EQ(n, 2u);
  EXPECT_EQ(s.validation, split_indices_stratified(labels, 0.10, 5).validation);
}

TEST(SplitTest, StratifiedKeepsAtLeastOnePerClass) {
  const std::vector<std::size_t> labels{0, 0, 0, 1, 1, 1, 2};
  const auto s = split_indices_stratified(labels, 0.10, 1);
  std::set<std::size_t> classes;
  for (auto i : s.validation) classes.insert(labels[i]);
  EXPECT_EQ(classes, (std::set<std::size_t>{0, 1}));
  EXPECT_EQ(s.validation.size() + s.rest.size(), labels.size());
}

TEST(LrScheduleTest, SteadyImprovementKeepsRate) {
  const std::vector<double> l{1.0, 0.9, 0.8};
  EXPECT_EQ(lr_schedule(l, 1e-4), 1e-4);
}

TEST(LrScheduleTest, TwoStaleEpochsDivideByTen) {
  const std::vector<double> two{1.0, 1.1};
  const std::vector<double> three{1.0, 1.1, 1.2};
  EXPECT_EQ(lr_schedule(two, 1e-4), 1e-4);
  EXPECT_EQ(lr_schedule(three, 1e-4), 1e-4 / 10.0);
}

TEST(LrScheduleTest, ImprovementInterruptsStreak) {
  const std::vector<double> l{1.0, 1.1, 0.9};
  EXPECT_EQ(lr_schedule(l, 1e-4), 1e-4);
}

TEST(LrScheduleTest, CounterResetsAfterDecayAndTiesAreStale) {
  PlateauSchedule s(1.0);
  EXPECT_EQ(s.step(1.0), 1.0);
  EXPECT_EQ(s.step(1.0), 1.0);
  EXPECT_EQ(s.step(1.0), 0.1);
  EXPECT_EQ(s.step(1.0), 0.1);
  EXPECT_DOUBLE_EQ(s.step(1.0), 0.01);
}

TEST(AdamTest, ZeroGradientLeavesParameters) {
  Tensor p({3}, {1.0, -2.0, 3.0}, true);
  p.mutable_grad();
  std::vector<Tensor> ps{p};
  AdamState st;
  for (int i = 0; i < 5; ++i) adam_step(ps, st, 0.1);
  EXPECT_EQ(p.at({0}), 1.0);
  EXPECT_EQ(p.at({1}), -2.0);
  EXPECT_EQ(p.at({2}), 3.0);
}

TEST(AdamTest, FirstStepMatchesFormula) {
  Tensor p({2}, {0.5, -0.5}, true);
  auto g = p.mutable_grad();
  g[0] = 0.3;
  g[1] = -2.0;
  std::vector<Tensor> ps{p};
  AdamState st;
  adam_step(ps, st, 0.01);
  // m_hat = g, v_hat = g^2 after bias correction.
  const double m0 = 0.1 * 0.3 / 0.1, v0 = 0.001 * 0.09 / 0.001;
  EXPECT_NEAR(p.at({0}), 0.5 - 0.01 * m0 / (std::sqrt(v0) + 1e-8), 1e-15);
  EXPECT_NEAR(p.at({1}), -0.5 - 0.01 * (-2.0) / (2.0 + 1e-8), 1e-15);
}

TEST(AdamTest, ConstantGradientStepApproachesRate) {
  Tensor p({1}, {0.0}, true);
  std::vector<Tensor> ps{p};
  AdamState st;
  double prev = 0.0;
  for (int i = 0; i < 200; ++i) {
    p.mutable_grad()[0] = -0.37;
    adam_step(ps, st, 1e-3);
    const double step = p.at({0}) - prev;
    prev = p.at({0});
    if (i == 199) EXPECT_NEAR(step, 1e-3, 1e-9);
  }
}

TEST(AdamTest, NonFiniteGradientIsTrainingError) {
  Tensor p({1}, {0.0}, true);
  p.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  std::vector<Tensor> ps{p};
  AdamState st;
  EXPECT_THROW(adam_step(ps, st, 1e-3), TrainingError);
}

TEST(ModelInputTest, ReordersToChannelsFirst) {
  std::vector<double> v(2 * 3 * 1 * 1);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const std::vector<Tensor> clips{Tensor({2, 3, 1, 1}, v)};
  const Tensor x = to_model_input(clips);
  EXPECT_EQ(x.shape(), (Shape{1, 3, 2, 1, 1}));
  EXPECT_EQ(x.at(2), 1.0);
  EXPECT_EQ(x.at(3), 4.0);
}

TEST(EvaluateTest, OneHotTruthScoresOne) {
  const Dataset d = stripes(3, 2);
  TrainConfig cfg = tiny_train();
  // Class 0 lights the top rows of the crop.
  Classifier oracle = [](const Tensor& batch) {
    std::vector<double> p;
    const std::size_t per = batch.numel() / batch.dim(0);
    for (std::size_t n = 0; n < batch.dim(0); ++n) {
      const double top = batch.data()[n * per];
      p.push_back(top > 0.5 ? 1.0 : 0.0);
      p.push_back(top > 0.5 ? 0.0 : 1.0);
    }
    return p;
  };
  const auto r = evaluate(oracle, d, 2, cfg);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.confusion.at(0, 0) + r.confusion.at(1, 1), 6.0);
}

TEST(EvaluateTest, UniformOutputIsChance) {
  const Dataset d = stripes(4, 3);
  Classifier uniform = [](const Tensor& batch) { return std::vector<double>(batch.dim(0) * 2, 0.5); };
  const auto r = evaluate(uniform, d, 2, tiny_train());
  EXPECT_EQ(r.accuracy, 0.5);
  for (double p : r.probabilities) EXPECT_EQ(p, 0.5);
}

TEST(EvaluateTest, LeavesModelUntouched) {
  Model m = Model::build(tiny_config(), 1);
  Model before = m.clone();
  evaluate(m, stripes(2, 4), tiny_train());
  const auto a = m.arrays(), b = before.arrays();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(std::equal(a[i].values.begin(), a[i].values.end(), b[i].values.begin())) << a[i].name;
  }
}

TEST(EvaluateTest, TemperatureFlattensButKeepsArgmax) {
  Model model = Model::build(tiny_config(), 3);
  const Dataset d = stripes(2, 4);
  const TrainConfig cfg = tiny_train();
  const auto sharp = evaluate(model_classifier(model), d, 2, cfg);
  const auto soft = evaluate(model_classifier(model, 4.0), d, 2, cfg);
  EXPECT_EQ(sharp.accuracy, soft.accuracy);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double a = std::abs(sharp.probabilities[2 * i] - 0.5);
    const double b = std::abs(soft.probabilities[2 * i] - 0.5);
    EXPECT_LE(b, a + 1e-15);
  }
  EXPECT_THROW(model_classifier(model, 0.0), ConfigError);
}

TEST(TrainTest, FirstPassLearnsSeparableClips) {
  const Dataset train = stripes(8, 5), val = stripes(2, 6);
  const auto r = train_first_pass(Model::build(tiny_config(), 2), train, val, tiny_train());
  ASSERT_EQ(r.metrics.epochs.size(), 3u);
  EXPECT_LT(r.metrics.epochs.back().train_loss, std::log(2.0));
  EXPECT_EQ(r.model.trained_epochs, 3u);
  EXPECT_EQ(r.metrics.val_confusion.row_sum(0), 2.0);
  EXPECT_EQ(r.metrics.val_confusion.row_sum(1), 2.0);
  for (std::size_t e = 1; e < r.metrics.epochs.size(); ++e) {
    EXPECT_LE(r.metrics.epochs[e].lr, r.metrics.epochs[e - 1].lr);
  }
}

TEST(TrainTest, SeededRunsAreIdentical) {
  const Dataset train = stripes(4, 5), val = stripes(1, 6);
  TrainConfig cfg = tiny_train();
  cfg.epochs = 2;
  std::ostringstream a, b;
  write_metrics_csv(a, train_first_pass(Model::build(tiny_config(), 2), train, val, cfg).metrics);
  write_metrics_csv(b, train_first_pass(Model::build(tiny_config(), 2), train, val, cfg).metrics);
  EXPECT_EQ(a.str(), b.str());
}

TEST(TrainTest, FinalHeadWeightsReproduceFirstPass) {
  const Dataset train = stripes(4, 5), val = stripes(1, 6);
  TrainConfig cfg = tiny_train();
  cfg.epochs = 2;
  const auto first = train_first_pass(Model::build(tiny_config(), 2), train, val, cfg);
  cfg.loss_weights = {0, 0, 0, 1};
  const auto second = train_hierarchical(Model::build(tiny_config(), 2), train, val,
                                         placeholder_hierarchy(tiny_config()), cfg);
  ASSERT_EQ(first.metrics.epochs.size(), second.metrics.epochs.size());
  for (std::size_t e = 0; e < first.metrics.epochs.size(); ++e) {
    EXPECT_EQ(first.metrics.epochs[e].train_loss, second.metrics.epochs[e].train_loss);
    EXPECT_EQ(first.metrics.epochs[e].val_loss, second.metrics.epochs[e].val_loss);
  }
}

TEST(TrainTest, TotalIsWeightedSumOfHeadLosses) {
  const Dataset train = stripes(4, 5), val = stripes(1, 6);
  TrainConfig cfg = tiny_train();
  cfg.epochs = 2;
  const auto r = train_hierarchical(Model::build(tiny_config(), 2), train, val,
                                    Hierarchy::identity(2, kNumStacks), cfg);
  for (const auto& e : r.metrics.epochs) {
    double s = 0.0;
    for (std::size_t l = 0; l < kNumStacks; ++l) s += cfg.loss_weights[l] * e.head_losses[l];
    EXPECT_NEAR(e.train_loss, s, 1e-10);
  }
}

TEST(TrainTest, HierarchyWidthMismatchIsShapeError) {
  const Dataset d = stripes(2, 5);
  EXPECT_THROW(train_hierarchical(Model::build(tiny_config(), 2), d, d, Hierarchy::identity(4, kNumStacks),
                                  tiny_train()),
               ShapeError);
}

TEST(TrainTest, DivergenceIsTrainingErrorWithEpoch) {
  Model m = Model::build(tiny_config(), 2);
  m.heads()[3].bias.mutable_data()[0] = std::numeric_limits<double>::infinity();
  const Dataset d = stripes(2, 5);
  try {
    train_first_pass(std::move(m), d, d, tiny_train());
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
  }
}

TEST(TrainTest, PrunedFiltersStayDead) {
  Model m = Model::build(tiny_config(), 2);
  PruneMask mask = current_mask(m);
  for (auto& layer : mask.pruned) layer[0] = true;
  apply_mask(m, mask);
  const Dataset d = stripes(4, 5);
  const auto r = train_first_pass(std::move(m), d, d, tiny_train());
  for (const ConvBn* layer : r.model.prunable_layers()) {
    const std::size_t per = layer->weight.numel() / layer->out_channels();
    for (std::size_t i = 0; i < per; ++i) ASSERT_EQ(layer->weight.data()[i], 0.0) << layer->name;
    EXPECT_EQ(layer->gamma.data()[0], 0.0);
    EXPECT_EQ(layer->beta.data()[0], 0.0);
    EXPECT_EQ(layer->bias.data()[0], 0.0);
  }
}

TEST(TrainConfigTest, RejectsBadFields) {
  TrainConfig cfg;
  cfg.validate();
  cfg.loss_weights = {1, 1, 1, 0};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace hact
