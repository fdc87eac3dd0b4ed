#include "cfdepth/eval/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "cfdepth/errors.hpp"
#include "cfdepth/fileio.hpp"
#include "cfdepth/kvconfig.hpp"

CFDEPTH_BEGIN_NAMESPACE

namespace {

constexpr const char* kHeader = "cap,rel,sq_rel,rms,rms_log,log10,d1,d2,d3,n_pixels";

}  // namespace

MetricsReport compute_metrics(std::span<const Real> pred, std::span<const Real> gt, double cap) {
  if (pred.size() != gt.size()) {
    throw DimensionError("compute_metrics: prediction has " + std::to_string(pred.size()) + " pixels, ground truth " +
                         std::to_string(gt.size()));
  }
  if (!(cap > 1)) throw ParameterError("compute_metrics: cap must exceed 1 m");
  double rel = 0, sq_rel = 0, sq = 0, sq_log = 0, l10 = 0;
  std::size_t n = 0, c1 = 0, c2 = 0, c3 = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double g = gt[i];
    if (!(g >= 1.0 && g <= cap)) continue;
    double p = pred[i];
    if (std::isnan(p)) throw NumericError("compute_metrics: prediction contains NaN");
    p = std::clamp(p, 1.0, cap);
    const double diff = p - g;
    rel += std::abs(diff) / g;
    sq_rel += diff * diff / g;
    sq += diff * diff;
    const double dl = std::log(p) - std::log(g);
    sq_log += dl * dl;
    l10 += std::abs(std::log10(p) - std::log10(g));
    const double ratio = std::max(p / g, g / p);
    c1 += ratio < 1.25;
    c2 += ratio < 1.25 * 1.25;
    c3 += ratio < 1.25 * 1.25 * 1.25;
    ++n;
  }
  if (n == 0) throw EmptyBatchError("compute_metrics: no ground-truth pixel within [1, " + std::to_string(cap) + "] m");
  const double dn = static_cast<double>(n);
  MetricsReport r;
  r.cap = cap;
  r.n_pixels = n;
  r.rel = rel / dn;
  r.sq_rel = sq_rel / dn;
  r.rms = std::sqrt(sq / dn);
  r.rms_log = std::sqrt(sq_log / dn);
  r.log10 = l10 / dn;
  r.d1 = static_cast<double>(c1) / dn;
  r.d2 = static_cast<double>(c2) / dn;
  r.d3 = static_cast<double>(c3) / dn;
  return r;
}

MetricsReport compute_metrics(const Tensor& pred, const Tensor& gt, double cap) {
  if (pred.shape() != gt.shape()) {
    throw DimensionError("compute_metrics: shapes " + shape_str(pred.shape()) + " and " + shape_str(gt.shape()) + " differ");
  }
  return compute_metrics(pred.data(), gt.data(), cap);
}

MetricsReport aggregate(const std::vector<MetricsReport>& reports, Aggregation mode) {
  if (reports.empty()) throw ContractError("aggregate: no reports");
  const double cap = reports.front().cap;
  for (const auto& r : reports)
    if (r.cap != cap) throw ContractError("aggregate: mixed caps " + format_double(cap) + " and " + format_double(r.cap));
  MetricsReport out;
  out.cap = cap;
  double total = 0;
  for (const auto& r : reports) {
    const double w = mode == Aggregation::PixelPooled ? static_cast<double>(r.n_pixels) : 1.0;
    out.n_pixels += r.n_pixels;
    total += w;
    out.rel += w * r.rel;
    out.sq_rel += w * r.sq_rel;
    out.rms += w * r.rms * r.rms;
    out.rms_log += w * r.rms_log * r.rms_log;
    out.log10 += w * r.log10;
    out.d1 += w * r.d1;
    out.d2 += w * r.d2;
    out.d3 += w * r.d3;
  }
  if (total == 0) throw EmptyBatchError("aggregate: reports cover no pixels");
  out.rel /= total;
  out.sq_rel /= total;
  out.log10 /= total;
  out.d1 /= total;
  out.d2 /= total;
  out.d3 /= total;
  if (mode == Aggregation::PixelPooled) {
    out.rms = std::sqrt(out.rms / total);
    out.rms_log = std::sqrt(out.rms_log / total);
  } else {
    out.rms = 0;
    out.rms_log = 0;
    for (const auto& r : reports) {
      out.rms += r.rms;
      out.rms_log += r.rms_log;
    }
    out.rms /= total;
    out.rms_log /= total;
  }
  return out;
}

std::string metrics_csv(const std::vector<MetricsReport>& reports) {
  std::string out = std::string(kHeader) + "\n";
  char buf[512];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%zu\n", r.cap, r.rel, r.sq_rel,
                  r.rms, r.rms_log, r.log10, r.d1, r.d2, r.d3, r.n_pixels);
    out += buf;
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsReport>& reports) {
  write_file_atomic(path, metrics_csv(reports));
}

std::vector<MetricsReport> parse_metrics_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw DataError("metrics CSV: unexpected header");
  std::vector<MetricsReport> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 10) throw DataError("metrics CSV line " + std::to_string(lineno) + ": expected 10 fields");
    try {
      MetricsReport r;
      r.cap = std::stod(f[0]);
      r.rel = std::stod(f[1]);
      r.sq_rel = std::stod(f[2]);
      r.rms = std::stod(f[3]);
      r.rms_log = std::stod(f[4]);
      r.log10 = std::stod(f[5]);
      r.d1 = std::stod(f[6]);
      r.d2 = std::stod(f[7]);
      r.d3 = std::stod(f[8]);
      r.n_pixels = std::stoull(f[9]);
      out.push_back(r);
    } catch (const std::logic_error&) {
      throw DataError("metrics CSV line " + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

std::vector<MetricsReport> read_metrics_csv(const std::filesystem::path& path) {
  try {
    return parse_metrics_csv(read_text_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

EvalResult evaluate(const DepthPredictor& predictor, const std::vector<Sample>& samples, double cap, unsigned threads) {
  for (const auto& s : samples)
    if (!s.depth) throw ContractError("evaluate: sample '" + s.id + "' has no depth ground truth");
  std::vector<std::optional<MetricsReport>> slots(samples.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (std::size_t i = next++; i < samples.size(); i = next++) {
      try {
        const Tensor pred = predictor(samples[i]);
        if (pred.numel() != samples[i].depth->numel()) {
          throw DimensionError("evaluate: prediction for '" + samples[i].id + "' has shape " + shape_str(pred.shape()));
        }
        try {
          slots[i] = compute_metrics(pred.data(), samples[i].depth->data(), cap);
        } catch (const EmptyBatchError&) {
          // no pixel within the cap in this image
        }
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = samples.size();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(samples.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  EvalResult result;
  for (auto& s : slots)
    if (s) result.per_image.push_back(*s);
  if (result.per_image.empty()) throw EmptyBatchError("evaluate: no sample has ground truth within the cap");
  result.pooled = aggregate(result.per_image, Aggregation::PixelPooled);
  return result;
}

CFDEPTH_END_NAMESPACE
