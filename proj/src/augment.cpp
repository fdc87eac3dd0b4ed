#include "cfdepth/data/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "cfdepth/errors.hpp"
#include "cfdepth/random.hpp"

CFDEPTH_BEGIN_NAMESPACE

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.rotation_prob = c.flip_prob = c.blur_prob = c.contrast_prob = 0;
  c.salt_pepper_prob = c.gaussian_prob = c.poisson_prob = c.speckle_prob = 0;
  return c;
}

AugmentConfig AugmentConfig::flip_only() {
  AugmentConfig c = none();
  c.flip_prob = 1;
  return c;
}

void validate_augment_config(const AugmentConfig& c) {
  const std::pair<const char*, double> probs[] = {
      {"rotation_prob", c.rotation_prob}, {"flip_prob", c.flip_prob},           {"blur_prob", c.blur_prob},
      {"contrast_prob", c.contrast_prob}, {"salt_pepper_prob", c.salt_pepper_prob}, {"gaussian_prob", c.gaussian_prob},
      {"poisson_prob", c.poisson_prob},   {"speckle_prob", c.speckle_prob}};
  for (auto [name, p] : probs)
    if (!(p >= 0 && p <= 1)) throw ConfigError(std::string("augment.") + name + " must lie in [0, 1]");
  if (!(c.rotation_max_deg >= 0)) throw ConfigError("augment.rotation_max_deg must be >= 0");
  if (!(c.blur_sigma_min > 0 && c.blur_sigma_max >= c.blur_sigma_min)) throw ConfigError("augment.blur_sigma range is invalid");
  if (!(c.contrast_min > 0 && c.contrast_max >= c.contrast_min)) throw ConfigError("augment.contrast range is invalid");
  if (!(c.salt_pepper_amount >= 0 && c.salt_pepper_amount <= 1)) throw ConfigError("augment.salt_pepper_amount must lie in [0, 1]");
  if (!(c.gaussian_sigma >= 0 && c.speckle_sigma >= 0)) throw ConfigError("augment noise sigmas must be >= 0");
  if (!(c.poisson_peak > 0)) throw ConfigError("augment.poisson_peak must be > 0");
}

namespace {

void clamp01(Tensor& t) {
  for (auto& v : t.data()) v = std::clamp(v, Real(0), Real(1));
}

void gaussian_blur(Tensor& rgb, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  const std::size_t C = rgb.dim(0), H = rgb.dim(1), W = rgb.dim(2);
  std::vector<double> tmp(H * W);
  const auto clampi = [](long i, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(i, 0, static_cast<long>(n) - 1)); };
  for (std::size_t c = 0; c < C; ++c) {
    Real* p = rgb.ptr() + c * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * p[y * W + clampi(static_cast<long>(x) + i, W)];
        tmp[y * W + x] = acc;
      }
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp[clampi(static_cast<long>(y) + i, H) * W + x];
        p[y * W + x] = static_cast<Real>(acc);
      }
  }
}

void contrast(Tensor& rgb, double factor) {
  const std::size_t C = rgb.dim(0), N = rgb.dim(1) * rgb.dim(2);
  for (std::size_t c = 0; c < C; ++c) {
    Real* p = rgb.ptr() + c * N;
    double mean = 0;
    for (std::size_t i = 0; i < N; ++i) mean += p[i];
    mean /= static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) p[i] = static_cast<Real>(mean + factor * (p[i] - mean));
  }
  clamp01(rgb);
}

void salt_pepper(Tensor& rgb, double amount, Rng& rng) {
  const std::size_t C = rgb.dim(0), N = rgb.dim(1) * rgb.dim(2);
  for (std::size_t i = 0; i < N; ++i) {
    if (rng.uniform() >= amount) continue;
    const Real v = rng.uniform() < 0.5 ? Real(0) : Real(1);
    for (std::size_t c = 0; c < C; ++c) rgb[c * N + i] = v;
  }
}

void gaussian_noise(Tensor& rgb, double sigma, Rng& rng) {
  for (auto& v : rgb.data()) v = static_cast<Real>(v + sigma * rng.normal());
  clamp01(rgb);
}

void poisson_noise(Tensor& rgb, double peak, Rng& rng) {
  for (auto& v : rgb.data()) {
    const double lam = std::max(0.0, static_cast<double>(v)) * peak;
    if (lam <= 0) continue;
    std::poisson_distribution<long> dist(lam);
    v = static_cast<Real>(static_cast<double>(dist(rng)) / peak);
  }
  clamp01(rgb);
}

void speckle_noise(Tensor& rgb, double sigma, Rng& rng) {
  for (auto& v : rgb.data()) v = static_cast<Real>(v + v * sigma * rng.normal());
  clamp01(rgb);
}

}  // namespace

Sample flip_horizontal(const Sample& sample) {
  Sample out = sample;
  const std::size_t H = sample.height(), W = sample.width();
  auto flip_planes = [&](Tensor& t) {
    const std::size_t planes = t.numel() / (H * W);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < H; ++y) {
        Real* row = t.ptr() + (p * H + y) * W;
        std::reverse(row, row + W);
      }
  };
  flip_planes(out.rgb);
  if (out.depth) flip_planes(*out.depth);
  if (out.labels)
    for (std::size_t y = 0; y < H; ++y) std::reverse(out.labels->ids.begin() + static_cast<long>(y * W),
                                                     out.labels->ids.begin() + static_cast<long>((y + 1) * W));
  return out;
}

Sample rotate(const Sample& sample, double degrees) {
  Sample out = sample;
  const std::size_t H = sample.height(), W = sample.width();
  const double th = degrees * std::numbers::pi / 180.0, cs = std::cos(th), sn = std::sin(th);
  const double cy = 0.5 * static_cast<double>(H), cx = 0.5 * static_cast<double>(W);
  // Inverse map from output pixel center to source coordinates.
  auto source = [&](std::size_t y, std::size_t x) {
    const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
    return std::make_pair(cy + sn * dx + cs * dy - 0.5, cx + cs * dx - sn * dy - 0.5);
  };
  const std::size_t N = H * W;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const auto [sy, sx] = source(y, x);
      const double fy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
      const double fx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
      const auto y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
      const std::size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
      const double ay = fy - static_cast<double>(y0), ax = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const Real* p = sample.rgb.ptr() + c * N;
        const double top = (1 - ax) * p[y0 * W + x0] + ax * p[y0 * W + x1];
        const double bot = (1 - ax) * p[y1 * W + x0] + ax * p[y1 * W + x1];
        out.rgb[c * N + y * W + x] = static_cast<Real>((1 - ay) * top + ay * bot);
      }
      const long ny = std::lround(sy), nx = std::lround(sx);
      const bool inside = ny >= 0 && nx >= 0 && ny < static_cast<long>(H) && nx < static_cast<long>(W);
      const std::size_t src = inside ? static_cast<std::size_t>(ny) * W + static_cast<std::size_t>(nx) : 0;
      if (out.depth) (*out.depth)[y * W + x] = inside ? (*sample.depth)[src] : Real(0);
      if (out.labels) out.labels->ids[y * W + x] = inside ? sample.labels->ids[src] : LabelImage::kVoid;
    }
  }
  return out;
}

Sample augment(const Sample& sample, const AugmentConfig& c, std::uint64_t seed) {
  validate_augment_config(c);
  Rng rng(seed);
  // Every draw is consumed unconditionally so the random stream layout does
  // not depend on which families fire.
  const bool do_rot = rng.uniform() < c.rotation_prob;
  const double angle = rng.uniform(-c.rotation_max_deg, c.rotation_max_deg);
  const bool do_flip = rng.uniform() < c.flip_prob;
  const bool do_blur = rng.uniform() < c.blur_prob;
  const double sigma = rng.uniform(c.blur_sigma_min, c.blur_sigma_max);
  const bool do_contrast = rng.uniform() < c.contrast_prob;
  const double factor = rng.uniform(c.contrast_min, c.contrast_max);
  const bool do_sp = rng.uniform() < c.salt_pepper_prob;
  const bool do_gauss = rng.uniform() < c.gaussian_prob;
  const bool do_poisson = rng.uniform() < c.poisson_prob;
  const bool do_speckle = rng.uniform() < c.speckle_prob;
  Rng noise(rng());

  Sample out = do_rot && angle != 0 ? rotate(sample, angle) : sample;
  if (do_flip) out = flip_horizontal(out);
  if (do_blur) gaussian_blur(out.rgb, sigma);
  if (do_contrast) contrast(out.rgb, factor);
  if (do_sp) salt_pepper(out.rgb, c.salt_pepper_amount, noise);
  if (do_gauss) gaussian_noise(out.rgb, c.gaussian_sigma, noise);
  if (do_poisson) poisson_noise(out.rgb, c.poisson_peak, noise);
  if (do_speckle) speckle_noise(out.rgb, c.speckle_sigma, noise);
  return out;
}

CFDEPTH_END_NAMESPACE
