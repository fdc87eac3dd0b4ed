#pragma once

#include <vector>

#include "cfdepth/tensor.hpp"

CFDEPTH_BEGIN_NAMESPACE

/// Linear quantization of metric depth on the half-open range [d_min, d_max).
struct DepthBinning {
  int n_bins = 24;
  double d_min = 1.0;
  double d_max = 80.0;

  double width() const noexcept { return (d_max - d_min) / n_bins; }
  double center(int k) const noexcept { return d_min + (k + 0.5) * (d_max - d_min) / n_bins; }
  std::vector<double> centers() const;

  /// Depths outside (0, d_max) or non-finite carry no class.
  bool is_valid(double d) const noexcept;
  /// floor((d - d_min) * n / (d_max - d_min)) clamped to [0, n - 1]; `d` must be valid.
  int bin(double d) const noexcept;
};

/// Encode a depth map (H x W, 1 x H x W or N x 1 x H x W, meters) as class indices.
IndexMap depth_to_bins(const Tensor& depth, const DepthBinning& binning);

/// Decode class indices to bin centers, shape N x 1 x H x W; invalid pixels decode to 0.
Tensor bins_to_depth(const IndexMap& classes, const DepthBinning& binning);

/// Decode per-pixel class posteriors (N x n_bins x H x W) to their expected depth.
/// Posteriors must sum to one per pixel within 1e-5.
Tensor bins_to_depth(const Tensor& posteriors, const DepthBinning& binning);

CFDEPTH_END_NAMESPACE
