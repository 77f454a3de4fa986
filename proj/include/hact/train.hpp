#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "hact/hierarchy.hpp"
#include "hact/model.hpp"
#include "hact/tensor.hpp"

namespace hact {

// A preprocessed clip: frames [T,C,H,W] and its class.
struct Clip {
  Tensor frames;
  std::size_t label = 0;
};

using Dataset = std::vector<Clip>;

struct TrainConfig {
  std::size_t epochs = 20;
  double learning_rate = 1e-4;
  double lr_decay = 10.0;
  std::size_t patience = 2;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  std::array<double, kNumStacks> loss_weights{0.125, 0.25, 0.5, 1.0};
  std::size_t crop_size = 32;
  std::size_t frames_per_clip = 8;
  std::size_t eval_samplings = 5;
  // Second pass starts from the first-pass weights instead of a fresh model.
  bool warm_start = false;

  /// Throws ConfigError on out-of-range fields.
  void validate() const;
};

struct SplitIndices {
  std::vector<std::size_t> validation;
  std::vector<std::size_t> rest;
};

constexpr double kValidationFraction = 0.10;

// round(fraction * n) indices (at least one, at most n - 1) chosen by a seeded
// shuffle; both lists ascending.
SplitIndices split_indices(std::size_t n, double fraction, std::uint64_t seed);
std::pair<Dataset, Dataset> split_validation(const Dataset& test_set, double fraction, std::uint64_t seed);

// Same rule applied inside each class, so every class with two or more clips
// contributes at least one validation clip.
SplitIndices split_indices_stratified(std::span<const std::size_t> labels, double fraction, std::uint64_t seed);
std::pair<Dataset, Dataset> split_validation_stratified(const Dataset& test_set, double fraction,
                                                        std::uint64_t seed);

// Divides the learning rate by `decay` once the validation loss has failed to
// strictly improve on its best for `patience` consecutive epochs, then starts
// counting again.
class PlateauSchedule {
 public:
  PlateauSchedule(double initial_lr, double decay = 10.0, std::size_t patience = 2)
      : lr_(initial_lr), decay_(decay), patience_(patience) {}

  /// Records one epoch's validation loss; returns the rate for the next epoch.
  double step(double val_loss);
  double lr() const { return lr_; }

 private:
  double lr_;
  double decay_;
  std::size_t patience_;
  double best_ = 0.0;
  bool seen_ = false;
  std::size_t stale_ = 0;
};

// Rate after replaying `val_losses` from `initial_lr`.
double lr_schedule(std::span<const double> val_losses, double initial_lr, double decay = 10.0,
                   std::size_t patience = 2);

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
};

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// One bias-corrected Adam update using each parameter's gradient (missing
// gradients count as zero). Throws TrainingError on a non-finite gradient.
void adam_step(std::span<Tensor> params, AdamState& state, double lr, double beta1 = kAdamBeta1,
               double beta2 = kAdamBeta2, double eps = kAdamEps);

// Stacks per-clip tensors [T,C,H,W] into a model batch [N,C,T,H,W].
Tensor to_model_input(std::span<const Tensor> clips);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::array<double, kNumStacks> head_losses{};
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
};

struct RunMetrics {
  std::vector<EpochMetrics> epochs;
  ConfusionMatrix val_confusion;
  // Averaged final-head probabilities per validation clip, [clips, classes].
  std::vector<double> val_probabilities;
  double final_val_accuracy = 0.0;
};

// epoch,train_loss,head1_loss..head4_loss,val_loss,val_accuracy,lr
void write_metrics_csv(std::ostream& os, const RunMetrics& metrics);

struct TrainResult {
  Model model;
  RunMetrics metrics;
};

// Trains `model` on sum_l w_l * loss_l with the plateau schedule; data is
// shuffled at the start of every epoch. Throws TrainingError with the epoch on
// a non-finite loss.
TrainResult train_model(Model model, const Dataset& train, const Dataset& validation, const Hierarchy& hierarchy,
                        const std::array<double, kNumStacks>& weights, const TrainConfig& cfg);

// Stand-in levels for heads that carry zero weight in the first pass:
// class i goes to superclass i * K_l / N.
Hierarchy placeholder_hierarchy(const StackConfig& config);

// Final-head loss only; metrics carry the validation confusion matrix.
TrainResult train_first_pass(Model model, const Dataset& train, const Dataset& validation, const TrainConfig& cfg);
TrainResult train_hierarchical(Model model, const Dataset& train, const Dataset& validation,
                               const Hierarchy& hierarchy, const TrainConfig& cfg);

// Maps a batch [N,C,T,H,W] to final-head class probabilities [N*K].
using Classifier = std::function<std::vector<double>(const Tensor& batch)>;

struct EvalResult {
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::vector<double> probabilities;  // averaged, [clips, classes]
};

// Per clip, `cfg.eval_samplings` frame samplings with offsets drawn from an
// evaluation stream fixed by cfg.seed, center crop, no flip; probabilities are
// averaged before the argmax.
EvalResult evaluate(const Classifier& classifier, const Dataset& data, std::size_t classes, const TrainConfig& cfg);
EvalResult evaluate(Model& model, const Dataset& data, const TrainConfig& cfg);

// Final-head softmax of logits / temperature in eval mode, without recording.
Classifier model_classifier(Model& model, double temperature = 1.0);

}  // namespace hact
