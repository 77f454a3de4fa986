#include "hact/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>

#include "hact/error.hpp"
#include "hact/ops.hpp"
#include "hact/preprocess.hpp"

namespace hact {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.lr must be > 0");
  if (!(lr_decay > 1.0)) throw ConfigError("train.lr_decay must be > 1");
  if (patience < 1) throw ConfigError("train.patience must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (crop_size < 1) throw ConfigError("train.crop must be >= 1");
  if (frames_per_clip < 1) throw ConfigError("train.frames must be >= 1");
  if (eval_samplings < 1) throw ConfigError("train.eval_samplings must be >= 1");
  for (double w : loss_weights) {
    if (!(w >= 0.0)) throw ConfigError("train.weights must be >= 0");
  }
  if (!(loss_weights.back() > 0.0)) throw ConfigError("the final-head loss weight must be > 0");
}

SplitIndices split_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (n < 2) throw DataError("cannot split a set of " + std::to_string(n) + " clips");
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("validation fraction must lie in (0,1)");
  const auto want = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  const std::size_t k = std::clamp<std::size_t>(want, 1, n - 1);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  SplitIndices s;
  s.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  s.rest.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.rest.begin(), s.rest.end());
  return s;
}

std::pair<Dataset, Dataset> split_validation(const Dataset& test_set, double fraction, std::uint64_t seed) {
  const auto s = split_indices(test_set.size(), fraction, seed);
  Dataset val, rest;
  for (auto i : s.validation) val.push_back(test_set[i]);
  for (auto i : s.rest) rest.push_back(test_set[i]);
  return {std::move(val), std::move(rest)};
}

SplitIndices split_indices_stratified(std::span<const std::size_t> labels, double fraction, std::uint64_t seed) {
  if (labels.size() < 2) throw DataError("cannot split a set of " + std::to_string(labels.size()) + " clips");
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("validation fraction must lie in (0,1)");
  const std::size_t classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
  std::mt19937_64 rng(seed);
  SplitIndices s;
  for (auto& m : members) {
    if (m.empty()) continue;
    std::shuffle(m.begin(), m.end(), rng);
    const auto want = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(m.size())));
    const std::size_t k = m.size() < 2 ? 0 : std::clamp<std::size_t>(want, 1, m.size() - 1);
    s.validation.insert(s.validation.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(k));
    s.rest.insert(s.rest.end(), m.begin() + static_cast<std::ptrdiff_t>(k), m.end());
  }
  if (s.validation.empty()) throw DataError("no class has enough clips for a validation split");
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.rest.begin(), s.rest.end());
  return s;
}

std::pair<Dataset, Dataset> split_validation_stratified(const Dataset& test_set, double fraction,
                                                        std::uint64_t seed) {
  std::vector<std::size_t> labels;
  for (const auto& c : test_set) labels.push_back(c.label);
  const auto s = split_indices_stratified(labels, fraction, seed);
  Dataset val, rest;
  for (auto i : s.validation) val.push_back(test_set[i]);
  for (auto i : s.rest) rest.push_back(test_set[i]);
  return {std::move(val), std::move(rest)};
}

double PlateauSchedule::step(double val_loss) {
  if (!seen_ || val_loss < best_) {
    best_ = val_loss;
    seen_ = true;
    stale_ = 0;
  } else if (++stale_ >= patience_) {
    lr_ /= decay_;
    stale_ = 0;
  }
  return lr_;
}

double lr_schedule(std::span<const double> val_losses, double initial_lr, double decay, std::size_t patience) {
  PlateauSchedule s(initial_lr, decay, patience);
  for (double l : val_losses) s.step(l);
  return s.lr();
}

void adam_step(std::span<Tensor> params, AdamState& state, double lr, double beta1, double beta2, double eps) {
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("optimizer state does not match the parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k].has_grad()) continue;
    for (double g : params[k].grad()) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in " + params[k].name());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.numel()) throw ShapeError("optimizer state size mismatch for " + p.name());
    const bool has = p.has_grad();
    std::span<const double> g;
    if (has) g = p.grad();
    auto d = p.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
      v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      d[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

Tensor to_model_input(std::span<const Tensor> clips) {
  if (clips.empty()) throw ShapeError("empty batch");
  const Shape s = clips[0].shape();
  if (s.size() != 4) throw ShapeError("clip frames must be [T,C,H,W], got " + shape_str(s));
  const std::size_t t = s[0], c = s[1], plane = s[2] * s[3];
  std::vector<double> out(clips.size() * shape_numel(s));
  for (std::size_t n = 0; n < clips.size(); ++n) {
    if (clips[n].shape() != s) throw ShapeError("clip shapes differ: " + shape_str(clips[n].shape()) + " vs " + shape_str(s));
    const auto src = clips[n].data();
    double* dst = out.data() + n * shape_numel(s);
    for (std::size_t ti = 0; ti < t; ++ti) {
      for (std::size_t ci = 0; ci < c; ++ci) {
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((ti * c + ci) * plane), plane, dst + (ci * t + ti) * plane);
      }
    }
  }
  return Tensor({clips.size(), c, t, s[2], s[3]}, std::move(out));
}

void write_metrics_csv(std::ostream& os, const RunMetrics& metrics) {
  os << "epoch,train_loss,head1_loss,head2_loss,head3_loss,head4_loss,val_loss,val_accuracy,lr\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& e : metrics.epochs) {
    os << e.epoch << ',' << num(e.train_loss);
    for (double h : e.head_losses) os << ',' << num(h);
    os << ',' << num(e.val_loss) << ',' << num(e.val_accuracy) << ',' << num(e.lr) << '\n';
  }
}

namespace {

std::vector<std::size_t> labels_of(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<std::size_t> y;
  for (auto i : idx) y.push_back(data[i].label);
  return y;
}

// Deterministic view of a clip: midpoint frames, center crop.
Tensor eval_view(const Clip& clip, const TrainConfig& cfg, std::span<const std::size_t> frames) {
  std::mt19937_64 unused(0);
  return augment(gather_frames(clip.frames, frames), Mode::kEval, cfg.crop_size, unused);
}

std::vector<std::size_t> midpoint_frames(const Clip& clip, const TrainConfig& cfg) {
  return sample_frames_at(clip.frames.dim(0), cfg.frames_per_clip,
                          0.5 * static_cast<double>(clip.frames.dim(0)) / static_cast<double>(cfg.frames_per_clip));
}

// Mean weighted loss over `data` with one deterministic view per clip.
double validation_loss(Model& model, const Dataset& data, const Hierarchy& h,
                       const std::array<double, kNumStacks>& weights, const TrainConfig& cfg) {
  NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t start = 0; start < data.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(data.size(), start + cfg.batch_size);
    std::vector<Tensor> views;
    std::vector<std::size_t> y;
    for (std::size_t i = start; i < end; ++i) {
      views.push_back(eval_view(data[i], cfg, midpoint_frames(data[i], cfg)));
      y.push_back(data[i].label);
    }
    const auto out = model.forward(to_model_input(views), Mode::kEval);
    total += hierarchical_loss(out.logits, y, h, weights).total.item() * static_cast<double>(end - start);
  }
  return total / static_cast<double>(data.size());
}

}  // namespace

Hierarchy placeholder_hierarchy(const StackConfig& config) {
  const std::size_t n = config.head_classes.back();
  Hierarchy h;
  h.classes = n;
  for (std::size_t l = 0; l < kNumStacks; ++l) {
    const std::size_t k = config.head_classes[l];
    HierarchyLevel level{k, Assignment(n)};
    for (std::size_t i = 0; i < n; ++i) level.assignment[i] = i * k / n;
    h.levels.push_back(std::move(level));
  }
  return h;
}

TrainResult train_model(Model model, const Dataset& train, const Dataset& validation, const Hierarchy& hierarchy,
                        const std::array<double, kNumStacks>& weights, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw DataError("empty training set");
  if (validation.empty()) throw DataError("empty validation set");
  const auto widths = hierarchy.widths();
  for (std::size_t l = 0; l < kNumStacks; ++l) {
    if (l >= widths.size() || widths[l] != model.config().head_classes[l]) {
      throw ShapeError("head " + std::to_string(l + 1) + " has " + std::to_string(model.config().head_classes[l]) +
                       " outputs but the hierarchy level has " +
                       (l < widths.size() ? std::to_string(widths[l]) : std::string("none")));
    }
  }

  std::mt19937_64 rng(cfg.seed);
  PlateauSchedule schedule(cfg.learning_rate, cfg.lr_decay, cfg.patience);
  AdamState adam;
  std::vector<Tensor> params = model.parameters();
  RunMetrics metrics;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = schedule.lr();
    std::shuffle(order.begin(), order.end(), rng);
    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<Tensor> views;
      for (auto i : idx) {
        const auto frames = sample_frames(train[i].frames.dim(0), cfg.frames_per_clip, Mode::kTrain, rng);
        views.push_back(augment(gather_frames(train[i].frames, frames), Mode::kTrain, cfg.crop_size, rng));
      }
      const auto y = labels_of(train, idx);
      model.zero_grad();
      HierarchicalLoss loss;
      {
        GradTape tape;
        const auto out = model.forward(to_model_input(views), Mode::kTrain);
        loss = hierarchical_loss(out.logits, y, hierarchy, weights);
        if (!std::isfinite(loss.total.item())) {
          throw TrainingError("non-finite loss in epoch " + std::to_string(epoch));
        }
        backward(loss.total);
      }
      model.enforce_pruning();
      try {
        adam_step(params, adam, lr);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " in epoch " + std::to_string(epoch));
      }
      model.enforce_pruning();
      const double share = static_cast<double>(idx.size()) / static_cast<double>(train.size());
      em.train_loss += loss.total.item() * share;
      for (std::size_t l = 0; l < kNumStacks; ++l) em.head_losses[l] += loss.head_losses[l] * share;
    }
    ++model.trained_epochs;
    em.val_loss = validation_loss(model, validation, hierarchy, weights, cfg);
    if (!std::isfinite(em.val_loss)) throw TrainingError("non-finite validation loss in epoch " + std::to_string(epoch));
    const auto eval = evaluate(model, validation, cfg);
    em.val_accuracy = eval.accuracy;
    schedule.step(em.val_loss);
    metrics.epochs.push_back(em);
    if (epoch == cfg.epochs) {
      metrics.val_confusion = eval.confusion;
      metrics.val_probabilities = eval.probabilities;
      metrics.final_val_accuracy = eval.accuracy;
    }
  }
  return {std::move(model), std::move(metrics)};
}

TrainResult train_first_pass(Model model, const Dataset& train, const Dataset& validation, const TrainConfig& cfg) {
  const Hierarchy h = placeholder_hierarchy(model.config());
  return train_model(std::move(model), train, validation, h, {0.0, 0.0, 0.0, cfg.loss_weights.back()}, cfg);
}

TrainResult train_hierarchical(Model model, const Dataset& train, const Dataset& validation,
                               const Hierarchy& hierarchy, const TrainConfig& cfg) {
  return train_model(std::move(model), train, validation, hierarchy, cfg.loss_weights, cfg);
}

Classifier model_classifier(Model& model, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("softmax temperature must be positive");
  return [&model, temperature](const Tensor& batch) {
    NoGradGuard no_grad;
    Tensor logits = model.forward(batch, Mode::kEval).logits.back();
    if (temperature == 1.0) return softmax_rows(logits);
    std::vector<double> scaled(logits.data().begin(), logits.data().end());
    for (double& v : scaled) v /= temperature;
    return softmax_rows(Tensor(logits.shape(), std::move(scaled)));
  };
}

EvalResult evaluate(const Classifier& classifier, const Dataset& data, std::size_t classes, const TrainConfig& cfg) {
  EvalResult r;
  r.confusion = ConfusionMatrix(classes);
  if (data.empty()) return r;
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0xE7A1u};
  std::mt19937_64 rng(seq);
  const std::size_t samplings = cfg.eval_samplings;
  std::vector<std::vector<std::size_t>> frames(data.size() * samplings);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t s = 0; s < samplings; ++s) {
      frames[i * samplings + s] = sample_frames(data[i].frames.dim(0), cfg.frames_per_clip, Mode::kTrain, rng);
    }
  }
  r.probabilities.assign(data.size() * classes, 0.0);
  for (std::size_t s = 0; s < samplings; ++s) {
    for (std::size_t start = 0; start < data.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(data.size(), start + cfg.batch_size);
      std::vector<Tensor> views;
      for (std::size_t i = start; i < end; ++i) views.push_back(eval_view(data[i], cfg, frames[i * samplings + s]));
      const auto probs = classifier(to_model_input(views));
      if (probs.size() != (end - start) * classes) throw ShapeError("classifier returned the wrong number of scores");
      for (std::size_t k = 0; k < probs.size(); ++k) r.probabilities[start * classes + k] += probs[k];
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto row = std::span<double>(r.probabilities).subspan(i * classes, classes);
    for (double& p : row) p /= static_cast<double>(samplings);
    const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (data[i].label >= classes) throw IndexError("clip label " + std::to_string(data[i].label) + " out of range");
    r.confusion.at(data[i].label, pred) += 1.0;
    correct += pred == data[i].label;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return r;
}

EvalResult evaluate(Model& model, const Dataset& data, const TrainConfig& cfg) {
  return evaluate(model_classifier(model), data, model.config().head_classes.back(), cfg);
}

}  // namespace hact
