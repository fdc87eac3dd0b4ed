#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "cfdepth/data/sample.hpp"

CFDEPTH_BEGIN_NAMESPACE

/// Depth error suite over pixels with ground truth in [1, cap].
struct MetricsReport {
  double cap = 80;
  std::size_t n_pixels = 0;
  double rel = 0;
  double sq_rel = 0;
  double rms = 0;
  double rms_log = 0;
  double log10 = 0;
  double d1 = 0, d2 = 0, d3 = 0;
};

/// Predictions are clamped to [1, cap]. Throws DimensionError on a size
/// mismatch, ParameterError for cap <= 1 and EmptyBatchError when no pixel
/// is valid.
MetricsReport compute_metrics(std::span<const Real> pred, std::span<const Real> gt, double cap);
MetricsReport compute_metrics(const Tensor& pred, const Tensor& gt, double cap);

enum class Aggregation {
  /// Per-pixel terms summed over all reports and divided by the total count.
  PixelPooled,
  /// Unweighted mean of per-image metrics.
  PerImage,
};

/// Throws ContractError for an empty list or mixed caps.
MetricsReport aggregate(const std::vector<MetricsReport>& reports, Aggregation mode = Aggregation::PixelPooled);

/// Columns cap,rel,sq_rel,rms,rms_log,log10,d1,d2,d3,n_pixels; one row per report.
std::string metrics_csv(const std::vector<MetricsReport>& reports);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsReport>& reports);
std::vector<MetricsReport> parse_metrics_csv(std::string_view text);
std::vector<MetricsReport> read_metrics_csv(const std::filesystem::path& path);

/// Metric depth (1 x H x W) for one sample. Called concurrently when
/// evaluate() runs with several threads.
using DepthPredictor = std::function<Tensor(const Sample&)>;

struct EvalResult {
  std::vector<MetricsReport> per_image;  // in sample order; images without valid pixels are skipped
  MetricsReport pooled;
};

/// Throws ContractError if a sample has no depth ground truth and
/// EmptyBatchError if no sample has a valid pixel.
EvalResult evaluate(const DepthPredictor& predictor, const std::vector<Sample>& samples, double cap, unsigned threads = 1);

CFDEPTH_END_NAMESPACE
