#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hact/model.hpp"
#include "hact/preprocess.hpp"
#include "hact/pruning.hpp"
#include "hact/synthetic.hpp"
#include "hact/train.hpp"

namespace hact {

struct PreprocessConfig {
  bool crop = true;
  double margin = kCropMargin;
  // Side of the square frames written by preprocessing; train.crop_size is cut from it.
  std::size_t size = 36;
  // Project the 3D skeleton for cropping ("3d") or use the 2D annotation ("2d").
  std::string skeleton = "3d";
};

struct HierarchyConfig {
  // K_1..K_3; the last head always classifies the original classes.
  std::vector<std::size_t> k{2, 4, 8};
  std::size_t restarts = kPartitionRestarts;
  // Summed probabilities instead of hard counts.
  bool soft = true;
  // Softmax temperature for the soft confusion matrix.
  double temperature = 4.0;
};

struct PruneConfig {
  double p = kPruneFraction;
  PruneVariant variant = PruneVariant::kPerLayer;
  std::size_t max_passes = 10;
  // 0 = train.epochs.
  std::size_t retrain_epochs = 0;
};

// Every key of the flat text format, with its default, lives in this struct.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  SyntheticSpec synthetic;
  PreprocessConfig preprocess;
  // Used when a dataset does not record its own camera.
  ProjectionParams projection;
  StackConfig model;
  HierarchyConfig hierarchy;
  TrainConfig train;
  double validation_fraction = kValidationFraction;
  bool stratified_validation = true;
  PruneConfig prune;

  // Desk-scale defaults: train.learning_rate 1e-3, per-layer pruning.
  ExperimentConfig();

  /// Recomputes derived fields (head widths, stream seeds) and checks every section.
  /// Throws ConfigError naming the offending key.
  void finalize();

  // Stream seeds derived from `seed`.
  std::uint64_t split_seed() const { return seed + 1; }
  std::uint64_t validation_seed() const { return seed + 2; }
  std::uint64_t model_seed() const { return seed + 3; }
  std::uint64_t train_seed() const { return seed + 4; }
  std::uint64_t hierarchy_seed() const { return seed + 5; }
};

struct ConfigKey {
  std::string key;
  std::string doc;
};

// Keys in file order with one-line descriptions.
std::vector<ConfigKey> config_keys();

// Flat "section.key = value" lines; '#' starts a comment. Unknown or repeated
// keys and malformed values raise ConfigError with "<source>:<line>: field <key>".
ExperimentConfig parse_config(const std::string& text, const std::string& source = "config");
ExperimentConfig load_config(const std::string& path);
// Sets one field; used for command-line overrides.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
// Every key with its current value; parse_config(config_to_text(c)) reproduces c.
std::string config_to_text(const ExperimentConfig& cfg);

}  // namespace hact
