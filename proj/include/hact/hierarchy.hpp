#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hact/model.hpp"
#include "hact/tensor.hpp"

namespace hact {

// Square matrix, rows = true class, columns = predicted class. Entries are
// counts, or summed probabilities for a soft confusion matrix.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : n_(classes), v_(classes * classes, 0.0) {}
  ConfusionMatrix(std::size_t classes, std::vector<double> values);

  std::size_t classes() const { return n_; }
  double at(std::size_t truth, std::size_t predicted) const { return v_[truth * n_ + predicted]; }
  double& at(std::size_t truth, std::size_t predicted) { return v_[truth * n_ + predicted]; }
  double row_sum(std::size_t truth) const;
  std::span<const double> values() const { return v_; }

 private:
  std::size_t n_;
  std::vector<double> v_;
};

ConfusionMatrix confusion_from_predictions(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                           std::size_t classes);
// Accumulates each sample's probability row ([samples, classes]) into its true
// class row.
ConfusionMatrix soft_confusion(std::span<const std::size_t> truth, std::span<const double> probabilities,
                               std::size_t classes);

// Symmetric pair costs e_ij = c_ij + c_ji with a zero diagonal.
class EdgeCosts {
 public:
  explicit EdgeCosts(std::size_t classes = 0) : n_(classes), v_(classes * classes, 0.0) {}
  std::size_t classes() const { return n_; }
  double at(std::size_t i, std::size_t j) const { return v_[i * n_ + j]; }
  /// Sets e_ij and e_ji.
  void set(std::size_t i, std::size_t j, double cost);
  double total() const;

 private:
  std::size_t n_;
  std::vector<double> v_;
};

EdgeCosts edge_costs(const ConfusionMatrix& confusion);

// Superclass index (0-based) of every original class.
using Assignment = std::vector<std::size_t>;

/// Number of superclasses; throws DataError unless every superclass holds N/K classes.
std::size_t validate_balanced(const Assignment& assignment);

// Sum of e_ij over unordered pairs in different superclasses.
double partition_cost(const Assignment& assignment, const EdgeCosts& costs);
// Sum of e_ij over unordered pairs sharing a superclass.
double within_cost(const Assignment& assignment, const EdgeCosts& costs);

// Repeatedly applies the pairwise swap that lowers partition_cost the most
// (first lowest (i,j) on ties) until no swap lowers it.
Assignment greedy_descent(const EdgeCosts& costs, Assignment start);

struct PartitionResult {
  Assignment assignment;
  double cost = 0.0;
  std::size_t restart = 0;  // restart that produced the result
};

constexpr std::size_t kPartitionRestarts = 1000;

// Best of `restarts` greedy descents from random balanced starts. Restart r
// draws from its own stream seeded by (seed, r); ties go to the lowest r.
// Superclasses are numbered in order of their lowest member.
PartitionResult greedy_partition(const EdgeCosts& costs, std::size_t superclasses,
                                 std::size_t restarts = kPartitionRestarts, std::uint64_t seed = 0);

struct HierarchyLevel {
  std::size_t superclasses = 0;
  Assignment assignment;
};

// One level per stack; the last level is the identity over the original classes.
struct Hierarchy {
  std::size_t classes = 0;
  std::vector<HierarchyLevel> levels;

  std::size_t depth() const { return levels.size(); }
  std::vector<std::size_t> widths() const;
  void validate() const;

  static Hierarchy identity(std::size_t classes, std::size_t depth);
};

// Partitions each level independently for K_1..K_{L-1} and appends the
// identity level.
Hierarchy build_hierarchy(const EdgeCosts& costs, std::span<const std::size_t> superclass_counts,
                          std::size_t restarts = kPartitionRestarts, std::uint64_t seed = 0);

// Labels at `level` (1-based); the last level returns `labels` unchanged.
std::vector<std::size_t> map_labels(const Hierarchy& hierarchy, std::size_t level,
                                    std::span<const std::size_t> labels);

void write_hierarchy(std::ostream& os, const Hierarchy& hierarchy);
Hierarchy read_hierarchy(std::istream& is);

struct HierarchicalLoss {
  Tensor total;
  std::array<double, kNumStacks> head_losses{};
};

// sum_l w_l * cross_entropy(logits_l, labels mapped to level l). Heads with
// zero weight are reported but kept out of the recorded graph.
HierarchicalLoss hierarchical_loss(const std::array<Tensor, kNumStacks>& logits, std::span<const std::size_t> labels,
                                   const Hierarchy& hierarchy, const std::array<double, kNumStacks>& weights);

}  // namespace hact
