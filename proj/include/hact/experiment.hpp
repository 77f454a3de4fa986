#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hact/config.hpp"
#include "hact/hierarchy.hpp"
#include "hact/io.hpp"
#include "hact/pruning.hpp"
#include "hact/train.hpp"

namespace hact {

// Generated clips with the seeded per-class train/test halves.
StoredDataset synthetic_dataset(const ExperimentConfig& cfg);

// The dataset's own camera when it records one, else the configured one.
ProjectionParams dataset_camera(const DatasetInfo& info, const ExperimentConfig& cfg);

struct PreprocessedClip {
  Tensor frames;  // [T,C,size,size], values k/255
  CropRect rect;
};

// Skeleton crop (or the full frame when cropping is off) resized to a square
// of preprocess.size and requantized to 8-bit levels.
PreprocessedClip preprocess_clip(const RawClip& clip, const ProjectionParams& camera, const PreprocessConfig& cfg);
StoredDataset preprocess_dataset(const StoredDataset& raw, const ExperimentConfig& cfg,
                                 std::vector<CropRect>* rects = nullptr);

struct ExperimentSplits {
  Dataset train;
  Dataset validation;
  Dataset test;  // test clips left after the validation draw
};

/// Throws DataError unless the data is preprocessed and matches the configured class count.
ExperimentSplits experiment_splits(const StoredDataset& data, const ExperimentConfig& cfg);

struct DerivedHierarchy {
  Hierarchy hierarchy;
  ConfusionMatrix counts;  // hard validation confusion
  ConfusionMatrix soft;    // tempered probabilities summed per true class
};

DerivedHierarchy derive_hierarchy(Model& model, const Dataset& validation, const ExperimentConfig& cfg);

struct TwoPassResult {
  TrainResult first;
  DerivedHierarchy derived;
  TrainResult second;
  EvalResult first_test;
  EvalResult second_test;
};

// First pass on the final head, hierarchy from its validation confusion, then
// the weighted hierarchical pass.
TwoPassResult run_two_pass(const ExperimentSplits& splits, const ExperimentConfig& cfg);

// Retraining objective for a model: the weighted hierarchical loss when a
// hierarchy is known, else the final head alone.
PruneTrainer make_prune_trainer(const ExperimentSplits& splits, const Hierarchy* hierarchy,
                                const ExperimentConfig& cfg);
PruneResult run_pruning(const Model& model, const ExperimentSplits& splits, const Hierarchy* hierarchy,
                        const ExperimentConfig& cfg);

// Planted superfamilies whose classes make up exactly one superclass at `level` (1-based).
std::size_t recovered_superfamilies(const Hierarchy& hierarchy, std::size_t level,
                                    std::span<const std::size_t> superfamily_of_class);

// Spatial attribution [H,W]: the map of gradient_attribution averaged over
// channels and time, rescaled to a maximum of 1. Uses the midpoint view of each clip.
Tensor attribution_map(Model& model, const Dataset& clips, const Hierarchy& hierarchy, std::size_t head_index,
                       const TrainConfig& cfg);

}  // namespace hact
