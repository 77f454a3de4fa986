#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hact/preprocess.hpp"
#include "hact/tensor.hpp"

namespace hact {

// Stick-figure action clips. Classes are grouped into superfamilies by the
// body region that moves (hands, feet, head, hips). Inside a superfamily,
// class rank r selects vertical or horizontal motion (r % 2) and r / 2 + 1
// motion cycles per clip.
struct SyntheticSpec {
  std::size_t classes = 8;
  std::size_t superfamilies = 4;
  std::size_t clips_per_class = 40;
  std::size_t width = 96;
  std::size_t height = 72;
  std::size_t clip_len = 24;
  // 0 = plain background; 1 = dense static rectangles, moving distractors, noise.
  double clutter = 0.5;
  // Maximum subject displacement from the frame center, as a fraction of the free room.
  double offset = 0.6;
  std::size_t joints = 6;
  std::uint64_t seed = 0;

  /// Throws ConfigError on an invalid or unbalanced spec.
  void validate() const;
};

constexpr std::size_t kSyntheticFamilies = 4;

struct RawClip {
  std::string id;
  std::size_t label = 0;
  std::size_t superfamily = 0;
  // Grayscale frames [T,1,H,W], values k/255.
  Tensor frames;
  SkeletonSequence skeleton2d;  // pixels
  SkeletonSequence skeleton3d;  // world units
};

struct SyntheticDataset {
  SyntheticSpec spec;
  ProjectionParams projection;
  std::vector<std::size_t> superfamily_of_class;
  std::vector<RawClip> clips;
};

// Focal coefficients scaled to the frame width, principal point at the center.
ProjectionParams synthetic_projection(const SyntheticSpec& spec);

// Clip k of class c is drawn from its own stream seeded by (seed, c, k).
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

// Per class, a seeded half of the clips for training and the rest for testing.
struct TrainTestSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
TrainTestSplit split_train_test(const std::vector<RawClip>& clips, std::size_t classes, std::uint64_t seed);

}  // namespace hact
