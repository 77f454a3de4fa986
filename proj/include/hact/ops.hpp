#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "hact/tensor.hpp"

namespace hact {

using Triple = std::array<std::size_t, 3>;  // (time, height, width)

enum class TemporalPadding { kZeros, kReplicate };

struct Conv3dOptions {
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};
  // Spatial padding is always zeros; temporal padding may replicate edge frames.
  TemporalPadding temporal_padding = TemporalPadding::kZeros;
};

// Cross-correlation of input [N,Cin,T,H,W] with weight [Cout,Cin,kT,kH,kW].
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, const Conv3dOptions& options = {});

// [N,C,T,H,W] -> [N,C], mean over T*H*W.
Tensor global_avg_pool(const Tensor& input);

// input [N,F], weight [K,F], bias [K] -> [N,K].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Mean over the batch of -log softmax(logits)[target].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

// Row-wise softmax of [N,K]; not recorded.
std::vector<double> softmax_rows(const Tensor& logits);

Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);

enum class Mode { kTrain, kEval };

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
};

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

// Per-channel normalization of [N,C,...]. Train mode normalizes with biased
// batch statistics and folds the unbiased variance into `stats` with the given
// momentum; eval mode uses `stats`.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, Mode mode,
                  double momentum = kBatchNormMomentum, double eps = kBatchNormEps);

}  // namespace hact
