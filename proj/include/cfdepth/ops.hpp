#pragma once

#include <cstdint>
#include <span>

#include "cfdepth/autodiff.hpp"

CFDEPTH_BEGIN_NAMESPACE

enum class Mode { Train, Eval };

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

/// Per-channel running statistics owned by a batch-norm layer.
struct RunningStats {
  Tensor mean;
  Tensor var;

  explicit RunningStats(std::size_t channels = 0) : mean(Shape{channels}, Real(0)), var(Shape{channels}, Real(1)) {}
};

// Image ops take NCHW tensors. Convolution weights are laid out
// (out_channels, in_channels, k, k). deconv2d uses the same array as the
// conv2d it transposes, i.e. (in_channels, out_channels, k, k) from its own
// point of view, so deconv2d(y, W) is the input-adjoint of conv2d(., W).

Var conv2d(Var input, Var weight, Var bias, int stride, int pad);
Var deconv2d(Var input, Var weight, Var bias, int stride, int pad);

/// Train mode normalizes with batch statistics and updates `stats` in place;
/// eval mode uses `stats` only.
Var batch_norm(Var input, Var scale, Var shift, Mode mode, RunningStats& stats,
               double momentum = kBatchNormMomentum, double eps = kBatchNormEps);

/// Inverted dropout: survivors are scaled by 1/(1-rate) so eval mode is the identity.
Var dropout(Var input, double rate, Mode mode, std::uint64_t seed);

Var relu(Var input);
/// Non-overlapping average pooling; H and W must be multiples of `window`.
Var avg_pool(Var input, int window = 2);
/// Channel concatenation, `a` channels first.
Var concat_channels(Var a, Var b);
/// Keep the top-left (height, width) window of every channel.
Var crop(Var input, std::size_t height, std::size_t width);

Var add(Var a, Var b);
Var mul(Var a, Var b);
Var sum(Var input);

/// Per-pixel sum_k softmax(logits)_k * values[k]; output (N, 1, H, W).
Var softmax_expectation(Var logits, std::span<const double> values);

/// Mean over valid pixels of -log softmax(logits)[target].
Var softmax_cross_entropy(Var logits, const IndexMap& targets);

/// Mean absolute error over valid elements; subgradient at zero residual is 0.
Var l1_loss(Var pred, const Tensor& target, std::span<const std::uint8_t> valid);

/// Per-pixel softmax over the channel axis (no tape).
Tensor softmax_channels(const Tensor& logits);

CFDEPTH_END_NAMESPACE
