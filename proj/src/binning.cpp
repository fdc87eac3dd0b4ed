#include "cfdepth/data/binning.hpp"

#include <algorithm>
#include <cmath>

#include "cfdepth/errors.hpp"

CFDEPTH_BEGIN_NAMESPACE

std::vector<double> DepthBinning::centers() const {
  std::vector<double> c(static_cast<std::size_t>(n_bins));
  for (int k = 0; k < n_bins; ++k) c[static_cast<std::size_t>(k)] = center(k);
  return c;
}

bool DepthBinning::is_valid(double d) const noexcept { return std::isfinite(d) && d > 0.0 && d < d_max; }

int DepthBinning::bin(double d) const noexcept {
  // Multiply before dividing so exact edges such as 40.5 m land on their bin.
  const double scaled = std::floor((d - d_min) * n_bins / (d_max - d_min));
  return static_cast<int>(std::clamp(scaled, 0.0, static_cast<double>(n_bins - 1)));
}

IndexMap depth_to_bins(const Tensor& depth, const DepthBinning& binning) {
  std::size_t n = 1, h = 0, w = 0;
  const auto& s = depth.shape();
  if (s.size() == 2) {
    h = s[0], w = s[1];
  } else if (s.size() == 3 && s[0] == 1) {
    h = s[1], w = s[2];
  } else if (s.size() == 4 && s[1] == 1) {
    n = s[0], h = s[2], w = s[3];
  } else {
    throw DimensionError("depth_to_bins: expected a single-channel depth map, got " + shape_str(s));
  }
  IndexMap out(n, h, w);
  for (std::size_t i = 0; i < depth.numel(); ++i) {
    const double d = depth[i];
    if (!binning.is_valid(d)) continue;
    out.index[i] = binning.bin(d);
    out.valid[i] = 1;
  }
  return out;
}

Tensor bins_to_depth(const IndexMap& classes, const DepthBinning& binning) {
  Tensor out(Shape{classes.n, 1, classes.h, classes.w});
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (!classes.valid[i]) continue;
    const int k = classes.index[i];
    if (k < 0 || k >= binning.n_bins) {
      throw ContractError("bins_to_depth: class " + std::to_string(k) + " outside [0, " +
                          std::to_string(binning.n_bins - 1) + "]");
    }
    out[i] = static_cast<Real>(binning.center(k));
  }
  return out;
}

Tensor bins_to_depth(const Tensor& posteriors, const DepthBinning& binning) {
  require_rank(posteriors, 4, "bins_to_depth posteriors");
  const auto n = posteriors.dim(0), c = posteriors.dim(1), hw = posteriors.dim(2) * posteriors.dim(3);
  if (c != static_cast<std::size_t>(binning.n_bins)) {
    throw DimensionError("bins_to_depth: posteriors have " + std::to_string(c) + " channels, binning has " +
                         std::to_string(binning.n_bins));
  }
  const auto centers = binning.centers();
  Tensor out(Shape{n, 1, posteriors.dim(2), posteriors.dim(3)});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < hw; ++p) {
      double total = 0, expect = 0;
      for (std::size_t k = 0; k < c; ++k) {
        const double q = posteriors[(i * c + k) * hw + p];
        if (!(q >= 0.0)) throw ContractError("bins_to_depth: negative or NaN posterior");
        total += q;
        expect += q * centers[k];
      }
      if (std::abs(total - 1.0) > 1e-5) {
        throw ContractError("bins_to_depth: posterior sums to " + std::to_string(total) + " at pixel " +
                            std::to_string(i * hw + p));
      }
      out[i * hw + p] = static_cast<Real>(expect);
    }
  return out;
}

CFDEPTH_END_NAMESPACE
