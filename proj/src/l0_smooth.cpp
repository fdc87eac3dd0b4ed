#include "cfdepth/data/l0_smooth.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "cfdepth/errors.hpp"

CFDEPTH_BEGIN_NAMESPACE

namespace {

// FFTW's planner is not thread-safe; execution of distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct PlanDeleter {
  void operator()(fftw_plan_s* p) const {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(p);
  }
};
using Plan = std::unique_ptr<fftw_plan_s, PlanDeleter>;

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

template <class T>
std::unique_ptr<T[], FftwFree> fftw_buffer(std::size_t n) {
  auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * n));
  if (!p) throw std::bad_alloc();
  return std::unique_ptr<T[], FftwFree>(p);
}

}  // namespace

Tensor l0_smooth(const Tensor& rgb, const L0Params& params) {
  if (!(params.kappa > 1.0)) throw ParameterError("l0_smooth: kappa must be > 1");
  if (!(params.lambda >= 0.0)) throw ParameterError("l0_smooth: lambda must be >= 0");
  if (rgb.rank() != 3) throw DimensionError("l0_smooth: expected C x H x W, got " + shape_str(rgb.shape()));
  if (!rgb.all_finite()) throw DataError("l0_smooth: input contains non-finite pixels");
  if (params.lambda == 0.0) return rgb;

  const std::size_t C = rgb.dim(0), H = rgb.dim(1), W = rgb.dim(2), N = H * W;
  if (N == 0) return rgb;
  bool constant = true;
  for (std::size_t c = 0; c < C && constant; ++c)
    for (std::size_t i = 1; i < N; ++i)
      if (rgb[c * N + i] != rgb[c * N]) {
        constant = false;
        break;
      }
  if (constant) return rgb;

  const std::size_t Wc = W / 2 + 1, Nc = H * Wc;
  auto real = fftw_buffer<double>(N);
  auto spec = fftw_buffer<fftw_complex>(Nc);
  Plan forward, inverse;
  {
    std::lock_guard lock(planner_mutex());
    forward.reset(fftw_plan_dft_r2c_2d(static_cast<int>(H), static_cast<int>(W), real.get(), spec.get(), FFTW_ESTIMATE));
    inverse.reset(fftw_plan_dft_c2r_2d(static_cast<int>(H), static_cast<int>(W), spec.get(), real.get(), FFTW_ESTIMATE));
  }

  // Eigenvalues of the periodic forward-difference Laplacians.
  std::vector<double> denorm(Nc);
  for (std::size_t u = 0; u < H; ++u) {
    const double ey = 2.0 - 2.0 * std::cos(2.0 * std::numbers::pi * static_cast<double>(u) / static_cast<double>(H));
    for (std::size_t v = 0; v < Wc; ++v) {
      const double ex = 2.0 - 2.0 * std::cos(2.0 * std::numbers::pi * static_cast<double>(v) / static_cast<double>(W));
      denorm[u * Wc + v] = ex + ey;
    }
  }

  std::vector<double> S(rgb.data().begin(), rgb.data().end());
  std::vector<std::complex<double>> fimage(C * Nc);
  for (std::size_t c = 0; c < C; ++c) {
    std::copy_n(S.data() + c * N, N, real.get());
    fftw_execute(forward.get());
    for (std::size_t i = 0; i < Nc; ++i) fimage[c * Nc + i] = {spec[i][0], spec[i][1]};
  }

  std::vector<double> gx(C * N), gy(C * N);
  const double lambda = params.lambda;
  for (double beta = 2.0 * lambda; beta <= params.beta_max; beta *= params.kappa) {
    // Auxiliary gradients: keep (h, v) where the pooled squared magnitude beats lambda / beta.
    for (std::size_t c = 0; c < C; ++c) {
      const double* s = S.data() + c * N;
      for (std::size_t y = 0; y < H; ++y) {
        const std::size_t yn = (y + 1) % H;
        for (std::size_t x = 0; x < W; ++x) {
          const std::size_t xn = (x + 1) % W;
          gx[c * N + y * W + x] = s[y * W + xn] - s[y * W + x];
          gy[c * N + y * W + x] = s[yn * W + x] - s[y * W + x];
        }
      }
    }
    const double threshold = lambda / beta;
    for (std::size_t i = 0; i < N; ++i) {
      double mag = 0;
      for (std::size_t c = 0; c < C; ++c) mag += gx[c * N + i] * gx[c * N + i] + gy[c * N + i] * gy[c * N + i];
      if (mag < threshold) {
        for (std::size_t c = 0; c < C; ++c) gx[c * N + i] = gy[c * N + i] = 0;
      }
    }
    // Image update: (1 + beta D^T D) S = I + beta D^T g, diagonal in Fourier space.
    for (std::size_t c = 0; c < C; ++c) {
      const double* hx = gx.data() + c * N;
      const double* hy = gy.data() + c * N;
      for (std::size_t y = 0; y < H; ++y) {
        const std::size_t yp = (y + H - 1) % H;
        for (std::size_t x = 0; x < W; ++x) {
          const std::size_t xp = (x + W - 1) % W;
          real[y * W + x] = (hx[y * W + xp] - hx[y * W + x]) + (hy[yp * W + x] - hy[y * W + x]);
        }
      }
      fftw_execute(forward.get());
      for (std::size_t i = 0; i < Nc; ++i) {
        const std::complex<double> num = fimage[c * Nc + i] + beta * std::complex<double>(spec[i][0], spec[i][1]);
        const std::complex<double> val = num / (1.0 + beta * denorm[i]);
        spec[i][0] = val.real();
        spec[i][1] = val.imag();
      }
      fftw_execute(inverse.get());
      const double scale = 1.0 / static_cast<double>(N);
      for (std::size_t i = 0; i < N; ++i) S[c * N + i] = real[i] * scale;
    }
  }

  Tensor out(rgb.shape());
  for (std::size_t i = 0; i < S.size(); ++i) out[i] = static_cast<Real>(S[i]);
  return out;
}

CFDEPTH_END_NAMESPACE
