#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hact/ops.hpp"
#include "hact/tensor.hpp"

namespace hact {

constexpr std::size_t kNumStacks = 4;

struct StackConfig {
  std::array<std::size_t, kNumStacks> blocks_per_stack{1, 1, 1, 1};
  std::size_t base_channels = 8;
  bool bottleneck = true;
  std::size_t temporal_kernel = 3;
  // K1..K4; the last head classifies the original classes.
  std::array<std::size_t, kNumStacks> head_classes{2, 4, 8, 8};
  std::size_t in_channels = 1;

  /// Throws ConfigError on zero blocks, decreasing head widths, or zero extents.
  void validate() const;
};

// Convolution followed by batch normalization. Output channel c is dead once
// pruned[c] is set: its filter, bias, scale and shift are held at zero.
struct ConvBn {
  std::string name;
  Tensor weight;  // [Cout,Cin,kT,kH,kW]
  Tensor bias;    // [Cout]
  Conv3dOptions options;
  Tensor gamma, beta;
  BatchNormStats stats;
  bool prunable = true;
  std::vector<bool> pruned;

  std::size_t out_channels() const { return weight.dim(0); }
  Tensor forward_conv(const Tensor& x) const;
  Tensor forward(const Tensor& x, Mode mode);
};

struct ResidualBlock {
  // reduce / spatiotemporal / expand for bottleneck blocks, two convs otherwise.
  std::vector<ConvBn> path;
  std::optional<ConvBn> shortcut;

  // relu(path(x) + shortcut(x)). When `last_conv` is given it receives the
  // output of the final path convolution, with retain_grad() set.
  Tensor forward(const Tensor& x, Mode mode, Tensor* last_conv = nullptr);
};

struct Head {
  Tensor weight;  // [K,F]
  Tensor bias;    // [K]
};

// Mutable view of a named array, used for serialization.
struct ArrayRef {
  std::string name;
  Shape shape;
  std::span<double> values;
};

struct ModelOutput {
  std::array<Tensor, kNumStacks> logits;
  // Output of the last convolution of stack 1 (before its normalization),
  // populated when requested; its adjoint is retained.
  Tensor stack1_last_conv;
};

// Scaled-down inflated residual network: a 2D stem, four stacks of residual
// blocks with 3D kernels, and a linear head on the pooled output of each stack.
class Model {
 public:
  static Model build(const StackConfig& config, std::uint64_t seed);

  ModelOutput forward(const Tensor& batch, Mode mode, bool tap_stack1 = false);

  const StackConfig& config() const { return config_; }
  ConvBn& stem() { return stem_; }
  std::array<std::vector<ResidualBlock>, kNumStacks>& stacks() { return stacks_; }
  std::array<Head, kNumStacks>& heads() { return heads_; }

  /// Trainable tensors in a fixed order.
  std::vector<Tensor> parameters();
  /// Every persistent array (parameters and running statistics) by name.
  std::vector<ArrayRef> arrays();
  /// Convolutions inside the stacks, in forward order.
  std::vector<ConvBn*> prunable_layers();
  std::vector<const ConvBn*> prunable_layers() const;

  void zero_grad();
  /// Zeroes weights and gradients of every pruned channel.
  void enforce_pruning();

  /// Deep copy; the copy shares no storage with this model.
  Model clone() const;

  std::size_t trained_epochs = 0;

 private:
  StackConfig config_;
  ConvBn stem_;
  std::array<std::vector<ResidualBlock>, kNumStacks> stacks_;
  std::array<Head, kNumStacks> heads_;
};

// Repeats a 2D kernel [Cout,Cin,kH,kW] kT times along a new temporal axis and
// divides by kT.
Tensor inflate_kernel(const Tensor& weight2d, std::size_t temporal_extent);

std::array<Tensor, kNumStacks> forward_heads(Model& model, const Tensor& batch, Mode mode);

// Mean over the batch of |dLoss_head/dActivation| at the last convolution of
// stack 1, divided by its maximum. `head_index` is 1-based; targets are labels
// at that head's level. Runs the network in eval mode.
Tensor gradient_attribution(Model& model, const Tensor& batch, std::span<const std::size_t> head_targets,
                            std::size_t head_index);

}  // namespace hact
