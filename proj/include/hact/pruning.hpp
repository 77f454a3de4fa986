#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "hact/model.hpp"

namespace hact {

// L2 norm of every output filter of every prunable layer, in forward order.
struct FilterNormTable {
  std::vector<std::string> layers;
  std::vector<std::vector<double>> norms;

  std::size_t total_filters() const;
};

FilterNormTable filter_norms(const Model& model);

// Per prunable layer, true = pruned. Layers are in forward order.
struct PruneMask {
  std::vector<std::string> layers;
  std::vector<std::vector<bool>> pruned;

  std::size_t count() const;
  std::size_t count(std::size_t layer) const;
  /// Adds every channel pruned in `other`; layouts must agree.
  void merge(const PruneMask& other);
  /// Same layout with nothing pruned.
  PruneMask empty_like() const;
};

// Current pruning state of a model.
PruneMask current_mask(const Model& model);

enum class PruneVariant { kGlobal, kPerLayer };
const char* variant_name(PruneVariant v);
PruneVariant parse_variant(const std::string& name);

// floor(p * remaining), guarded against products like 0.1 * 70 landing just
// below an integer.
std::size_t prune_count(double p, std::size_t remaining);

// The floor(p * F_remaining) lowest-norm unpruned filters across all layers;
// ties by (layer, filter).
PruneMask select_global(const FilterNormTable& table, double p, const PruneMask& already_pruned);
// The floor(p * F_layer_remaining) lowest unpruned filters of each layer.
PruneMask select_per_layer(const FilterNormTable& table, double p, const PruneMask& already_pruned);
PruneMask select_filters(const FilterNormTable& table, double p, const PruneMask& already_pruned,
                         PruneVariant variant);

// Marks masked channels pruned (never unmarks) and zeroes their filter, bias,
// scale and shift. Throws ShapeError if the layout does not match the model.
void apply_mask(Model& model, const PruneMask& mask);

// Best score so far (initial score included); signals a stop after two
// consecutive passes strictly below it.
class PruneStopRule {
 public:
  explicit PruneStopRule(double initial_score) : best_(initial_score) {}

  /// Records the score of the next pass; returns true when pruning should stop.
  bool record(double score);
  double best_score() const { return best_; }
  /// 0 when no pass beat the initial score.
  std::size_t best_pass() const { return best_pass_; }
  std::size_t passes() const { return passes_; }

 private:
  double best_;
  std::size_t best_pass_ = 0;
  std::size_t passes_ = 0;
  std::size_t below_ = 0;
};

struct PruneTrainer {
  std::function<double(Model&)> score;    // validation accuracy
  std::function<void(Model&)> retrain;    // retrains in place with masks enforced
};

struct PassMetrics {
  std::size_t pass = 0;
  PruneVariant variant = PruneVariant::kGlobal;
  std::size_t pruned_total = 0;
  double val_accuracy = 0.0;
};

struct PruneResult {
  Model best;
  std::size_t best_pass = 0;
  double initial_score = 0.0;
  double best_score = 0.0;
  std::vector<PassMetrics> passes;
};

constexpr double kPruneFraction = 0.10;

PruneResult pruning_loop(const Model& model, const PruneTrainer& trainer, double p, PruneVariant variant,
                         std::size_t max_passes);

// pass,variant,pruned_total,val_accuracy
void write_prune_csv(std::ostream& os, const std::vector<PassMetrics>& passes);

}  // namespace hact
