#include "cfdepth/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "cfdepth/errors.hpp"
#include "cfdepth/random.hpp"

CFDEPTH_BEGIN_NAMESPACE

namespace {

using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Matrix>;
using ConstMatMap = Eigen::Map<const Matrix>;

struct ConvGeometry {
  std::size_t channels, height, width;  // image side
  std::size_t kernel, stride, pad;
  std::size_t out_h, out_w;             // patch grid

  std::size_t rows() const { return channels * kernel * kernel; }
  std::size_t cols() const { return out_h * out_w; }
};

// Unfold image patches into a (C*K*K, out_h*out_w) matrix.
void im2col(const Real* img, const ConvGeometry& g, Real* col) {
  const auto k = g.kernel;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        Real* row = col + ((c * k + ki) * k + kj) * g.cols();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.pad);
          Real* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, Real(0));
            continue;
          }
          const Real* src = img + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.pad);
            dst[ow] = (iw < 0 || iw >= static_cast<long>(g.width)) ? Real(0) : src[iw];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add patch columns back into the image.
void col2im(const Real* col, const ConvGeometry& g, Real* img) {
  const auto k = g.kernel;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const Real* row = col + ((c * k + ki) * k + kj) * g.cols();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.pad);
          if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
          Real* dst = img + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          const Real* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.pad);
            if (iw >= 0 && iw < static_cast<long>(g.width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

void check_same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape) throw ContractError(std::string(op) + ": operands recorded on different tapes");
}

void check_stride_pad(int stride, int pad, const char* op) {
  if (stride < 1) throw DimensionError(std::string(op) + ": stride must be >= 1");
  if (pad < 0) throw DimensionError(std::string(op) + ": padding must be >= 0");
}

}  // namespace

Var conv2d(Var input, Var weight, Var bias, int stride, int pad) {
  check_same_tape(input, weight, "conv2d");
  check_same_tape(input, bias, "conv2d");
  check_stride_pad(stride, pad, "conv2d");
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto o = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c || w.dim(3) != k) {
    throw DimensionError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
  }
  if (bias.value().numel() != o) {
    throw DimensionError("conv2d: bias has " + std::to_string(bias.value().numel()) + " elements, expected " +
                         std::to_string(o));
  }
  const auto s = static_cast<std::size_t>(stride), p = static_cast<std::size_t>(pad);
  if (h + 2 * p < k || wd + 2 * p < k) {
    throw DimensionError("conv2d: kernel " + std::to_string(k) + " does not fit padded input " + shape_str(x.shape()));
  }
  const ConvGeometry g{c, h, wd, k, s, p, (h + 2 * p - k) / s + 1, (wd + 2 * p - k) / s + 1};

  Tensor out(Shape{n, o, g.out_h, g.out_w});
  std::vector<Real> col(is_pointwise(g) ? 0 : g.rows() * g.cols());
  const ConstMatMap wm(w.ptr(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(g.rows()));
  const Real* b = bias.value().ptr();
  for (std::size_t i = 0; i < n; ++i) {
    const Real* xi = x.ptr() + i * c * h * wd;
    const Real* cm = xi;
    if (!is_pointwise(g)) {
      im2col(xi, g, col.data());
      cm = col.data();
    }
    MatMap om(out.ptr() + i * o * g.cols(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(g.cols()));
    om.noalias() = wm * ConstMatMap(cm, static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
    for (std::size_t oc = 0; oc < o; ++oc) om.row(static_cast<Eigen::Index>(oc)).array() += b[oc];
  }

  Tape* tape = input.tape;
  const int xid = input.id, wid = weight.id, bid = bias.id;
  return tape->record(std::move(out), {xid, wid, bid}, [=](Tape& t, const Tensor& gout) {
    const Tensor& xv = t.value(xid);
    const Tensor& wv = t.value(wid);
    const bool need_x = t.requires_grad(xid), need_w = t.requires_grad(wid), need_b = t.requires_grad(bid);
    Tensor gx(xv.shape()), gw(wv.shape()), gb(Shape{o});
    const auto rows = static_cast<Eigen::Index>(g.rows()), cols = static_cast<Eigen::Index>(g.cols());
    const auto oi = static_cast<Eigen::Index>(o);
    const ConstMatMap wmat(wv.ptr(), oi, rows);
    MatMap gwm(gw.ptr(), oi, rows);
    std::vector<Real> colbuf(g.rows() * g.cols());
    for (std::size_t i = 0; i < n; ++i) {
      const ConstMatMap go(gout.ptr() + i * o * g.cols(), oi, cols);
      if (need_w) {
        const Real* xi = xv.ptr() + i * c * h * wd;
        const Real* cm = xi;
        if (!is_pointwise(g)) {
          im2col(xi, g, colbuf.data());
          cm = colbuf.data();
        }
        gwm.noalias() += go * ConstMatMap(cm, rows, cols).transpose();
      }
      if (need_x) {
        if (is_pointwise(g)) {
          MatMap(gx.ptr() + i * c * h * wd, rows, cols).noalias() = wmat.transpose() * go;
        } else {
          MatMap cb(colbuf.data(), rows, cols);
          cb.noalias() = wmat.transpose() * go;
          col2im(colbuf.data(), g, gx.ptr() + i * c * h * wd);
        }
      }
      if (need_b) {
        for (std::size_t oc = 0; oc < o; ++oc) gb[oc] += go.row(static_cast<Eigen::Index>(oc)).sum();
      }
    }
    if (need_x) t.accumulate(xid, gx);
    if (need_w) t.accumulate(wid, gw);
    if (need_b) t.accumulate(bid, gb.reshaped(t.value(bid).shape()));
  });
}

Var deconv2d(Var input, Var weight, Var bias, int stride, int pad) {
  check_same_tape(input, weight, "deconv2d");
  check_same_tape(input, bias, "deconv2d");
  check_stride_pad(stride, pad, "deconv2d");
  const Tensor& y = input.value();
  const Tensor& w = weight.value();
  require_rank(y, 4, "deconv2d input");
  require_rank(w, 4, "deconv2d weight");
  const auto n = y.dim(0), ci = y.dim(1), hi = y.dim(2), wi = y.dim(3);
  const auto co = w.dim(1), k = w.dim(2);
  if (w.dim(0) != ci || w.dim(3) != k) {
    throw DimensionError("deconv2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                         shape_str(y.shape()));
  }
  if (bias.value().numel() != co) {
    throw DimensionError("deconv2d: bias has " + std::to_string(bias.value().numel()) + " elements, expected " +
                         std::to_string(co));
  }
  const auto s = static_cast<std::size_t>(stride), p = static_cast<std::size_t>(pad);
  if (hi == 0 || wi == 0 || (hi - 1) * s + k < 2 * p + 1 || (wi - 1) * s + k < 2 * p + 1) {
    throw DimensionError("deconv2d: padding " + std::to_string(pad) + " leaves no output for input " +
                         shape_str(y.shape()));
  }
  const auto ho = (hi - 1) * s + k - 2 * p, wo = (wi - 1) * s + k - 2 * p;
  const ConvGeometry g{co, ho, wo, k, s, p, hi, wi};

  Tensor out(Shape{n, co, ho, wo});
  std::vector<Real> col(g.rows() * g.cols());
  const auto rows = static_cast<Eigen::Index>(g.rows()), cols = static_cast<Eigen::Index>(g.cols());
  const auto cii = static_cast<Eigen::Index>(ci);
  const ConstMatMap wm(w.ptr(), cii, rows);
  const Real* b = bias.value().ptr();
  for (std::size_t i = 0; i < n; ++i) {
    MatMap(col.data(), rows, cols).noalias() = wm.transpose() * ConstMatMap(y.ptr() + i * ci * hi * wi, cii, cols);
    Real* oi = out.ptr() + i * co * ho * wo;
    col2im(col.data(), g, oi);
    for (std::size_t oc = 0; oc < co; ++oc) {
      Real* plane = oi + oc * ho * wo;
      for (std::size_t j = 0; j < ho * wo; ++j) plane[j] += b[oc];
    }
  }

  Tape* tape = input.tape;
  const int yid = input.id, wid = weight.id, bid = bias.id;
  return tape->record(std::move(out), {yid, wid, bid}, [=](Tape& t, const Tensor& gout) {
    const Tensor& yv = t.value(yid);
    const Tensor& wv = t.value(wid);
    const bool need_y = t.requires_grad(yid), need_w = t.requires_grad(wid), need_b = t.requires_grad(bid);
    Tensor gy(yv.shape()), gw(wv.shape()), gb(Shape{co});
    const ConstMatMap wmat(wv.ptr(), cii, rows);
    MatMap gwm(gw.ptr(), cii, rows);
    std::vector<Real> colbuf(g.rows() * g.cols());
    for (std::size_t i = 0; i < n; ++i) {
      const Real* goi = gout.ptr() + i * co * ho * wo;
      if (need_y || need_w) im2col(goi, g, colbuf.data());
      const ConstMatMap cb(colbuf.data(), rows, cols);
      if (need_y) MatMap(gy.ptr() + i * ci * hi * wi, cii, cols).noalias() = wmat * cb;
      if (need_w) gwm.noalias() += ConstMatMap(yv.ptr() + i * ci * hi * wi, cii, cols) * cb.transpose();
      if (need_b) {
        for (std::size_t oc = 0; oc < co; ++oc) {
          const Real* plane = goi + oc * ho * wo;
          Real acc = 0;
          for (std::size_t j = 0; j < ho * wo; ++j) acc += plane[j];
          gb[oc] += acc;
        }
      }
    }
    if (need_y) t.accumulate(yid, gy);
    if (need_w) t.accumulate(wid, gw);
    if (need_b) t.accumulate(bid, gb.reshaped(t.value(bid).shape()));
  });
}

Var batch_norm(Var input, Var scale, Var shift, Mode mode, RunningStats& stats, double momentum, double eps) {
  check_same_tape(input, scale, "batch_norm");
  check_same_tape(input, shift, "batch_norm");
  const Tensor& x = input.value();
  require_rank(x, 4, "batch_norm input");
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (scale.value().numel() != c || shift.value().numel() != c || stats.mean.numel() != c || stats.var.numel() != c) {
    throw DimensionError("batch_norm: per-channel tensors do not match " + std::to_string(c) + " channels");
  }
  const std::size_t count = n * hw;
  if (mode == Mode::Train && count < 2) {
    throw DimensionError("batch_norm: train mode needs at least 2 values per channel, got " + std::to_string(count));
  }

  const Real* gamma = scale.value().ptr();
  const Real* beta = shift.value().ptr();
  Tensor out(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0, var = 0;
    if (mode == Mode::Train) {
      for (std::size_t i = 0; i < n; ++i) {
        const Real* src = x.ptr() + (i * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) mean += src[j];
      }
      mean /= static_cast<double>(count);
      for (std::size_t i = 0; i < n; ++i) {
        const Real* src = x.ptr() + (i * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          const double d = src[j] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
      stats.mean[ch] = static_cast<Real>((1 - momentum) * stats.mean[ch] + momentum * mean);
      stats.var[ch] = static_cast<Real>((1 - momentum) * stats.var[ch] + momentum * unbiased);
    } else {
      mean = stats.mean[ch];
      var = stats.var[ch];
    }
    inv_std[ch] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        const double xh = (x[off + j] - mean) * inv_std[ch];
        xhat[off + j] = static_cast<Real>(xh);
        out[off + j] = static_cast<Real>(gamma[ch] * xh + beta[ch]);
      }
    }
  }

  Tape* tape = input.tape;
  const int xid = input.id, gid = scale.id, bid = shift.id;
  return tape->record(std::move(out), {xid, gid, bid},
                      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& gout) {
                        const Real* gam = t.value(gid).ptr();
                        Tensor gx(xhat.shape()), gg(t.value(gid).shape()), gb(t.value(bid).shape());
                        for (std::size_t ch = 0; ch < c; ++ch) {
                          double sum_g = 0, sum_gx = 0;
                          for (std::size_t i = 0; i < n; ++i) {
                            const std::size_t off = (i * c + ch) * hw;
                            for (std::size_t j = 0; j < hw; ++j) {
                              sum_g += gout[off + j];
                              sum_gx += static_cast<double>(gout[off + j]) * xhat[off + j];
                            }
                          }
                          gg[ch] = static_cast<Real>(sum_gx);
                          gb[ch] = static_cast<Real>(sum_g);
                          const double k = gam[ch] * inv_std[ch];
                          for (std::size_t i = 0; i < n; ++i) {
                            const std::size_t off = (i * c + ch) * hw;
                            if (mode == Mode::Train) {
                              const double inv_count = 1.0 / static_cast<double>(count);
                              for (std::size_t j = 0; j < hw; ++j) {
                                gx[off + j] = static_cast<Real>(
                                    k * (gout[off + j] - inv_count * sum_g - inv_count * xhat[off + j] * sum_gx));
                              }
                            } else {
                              for (std::size_t j = 0; j < hw; ++j) gx[off + j] = static_cast<Real>(k * gout[off + j]);
                            }
                          }
                        }
                        t.accumulate(xid, gx);
                        t.accumulate(gid, gg);
                        t.accumulate(bid, gb);
                      });
}

Var dropout(Var input, double rate, Mode mode, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::Eval || rate == 0.0) {
    const int xid = input.id;
    return input.tape->record(input.value(), {xid}, [xid](Tape& t, const Tensor& g) { t.accumulate(xid, g); });
  }
  const Tensor& x = input.value();
  const auto keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
  Tensor mask(x.shape());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    mask[i] = uniform01(seed, i) < rate ? Real(0) : keep_scale;
    out[i] = x[i] * mask[i];
  }
  const int xid = input.id;
  return input.tape->record(std::move(out), {xid}, [xid, mask = std::move(mask)](Tape& t, const Tensor& g) {
    Tensor gx(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] = g[i] * mask[i];
    t.accumulate(xid, gx);
  });
}

Var relu(Var input) {
  const Tensor& x = input.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > Real(0) ? x[i] : Real(0);
  const int xid = input.id;
  return input.tape->record(std::move(out), {xid}, [xid](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(xid);
    Tensor gx(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] = xv[i] > Real(0) ? g[i] : Real(0);
    t.accumulate(xid, gx);
  });
}

Var avg_pool(Var input, int window) {
  const Tensor& x = input.value();
  require_rank(x, 4, "avg_pool input");
  if (window < 1) throw DimensionError("avg_pool: window must be >= 1");
  const auto k = static_cast<std::size_t>(window);
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % k != 0 || w % k != 0) {
    throw DimensionError("avg_pool: spatial extent " + shape_str(x.shape()) + " is not a multiple of window " +
                         std::to_string(window));
  }
  const auto ho = h / k, wo = w / k;
  const Real inv = Real(1) / static_cast<Real>(k * k);
  Tensor out(Shape{n, c, ho, wo});
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const Real* src = x.ptr() + plane * h * w;
    Real* dst = out.ptr() + plane * ho * wo;
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        Real acc = 0;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) acc += src[(i * k + a) * w + j * k + b];
        dst[i * wo + j] = acc * inv;
      }
  }
  const int xid = input.id;
  return input.tape->record(std::move(out), {xid}, [=](Tape& t, const Tensor& g) {
    Tensor gx(Shape{n, c, h, w});
    for (std::size_t plane = 0; plane < n * c; ++plane) {
      const Real* src = g.ptr() + plane * ho * wo;
      Real* dst = gx.ptr() + plane * h * w;
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) dst[i * w + j] = src[(i / k) * wo + j / k] * inv;
    }
    t.accumulate(xid, gx);
  });
}

Var concat_channels(Var a, Var b) {
  check_same_tape(a, b, "concat_channels");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_rank(x, 4, "concat_channels lhs");
  require_rank(y, 4, "concat_channels rhs");
  if (x.dim(0) != y.dim(0) || x.dim(2) != y.dim(2) || x.dim(3) != y.dim(3)) {
    throw DimensionError("concat_channels: " + shape_str(x.shape()) + " and " + shape_str(y.shape()) +
                         " differ outside the channel axis");
  }
  const auto n = x.dim(0), ca = x.dim(1), cb = y.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out(Shape{n, ca + cb, x.dim(2), x.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(x.ptr() + i * ca * hw, ca * hw, out.ptr() + i * (ca + cb) * hw);
    std::copy_n(y.ptr() + i * cb * hw, cb * hw, out.ptr() + (i * (ca + cb) + ca) * hw);
  }
  const int aid = a.id, bid = b.id;
  const Shape sa = x.shape(), sb = y.shape();
  return a.tape->record(std::move(out), {aid, bid}, [=](Tape& t, const Tensor& g) {
    Tensor ga(sa), gb(sb);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(g.ptr() + i * (ca + cb) * hw, ca * hw, ga.ptr() + i * ca * hw);
      std::copy_n(g.ptr() + (i * (ca + cb) + ca) * hw, cb * hw, gb.ptr() + i * cb * hw);
    }
    t.accumulate(aid, ga);
    t.accumulate(bid, gb);
  });
}

Var crop(Var input, std::size_t height, std::size_t width) {
  const Tensor& x = input.value();
  require_rank(x, 4, "crop input");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (height > h || width > w) {
    throw DimensionError("crop: window " + std::to_string(height) + "x" + std::to_string(width) +
                         " exceeds input " + shape_str(x.shape()));
  }
  const int xid = input.id;
  if (height == h && width == w) {
    return input.tape->record(x, {xid}, [xid](Tape& t, const Tensor& g) { t.accumulate(xid, g); });
  }
  Tensor out(Shape{n, c, height, width});
  for (std::size_t plane = 0; plane < n * c; ++plane)
    for (std::size_t i = 0; i < height; ++i)
      std::copy_n(x.ptr() + (plane * h + i) * w, width, out.ptr() + (plane * height + i) * width);
  return input.tape->record(std::move(out), {xid}, [=](Tape& t, const Tensor& g) {
    Tensor gx(Shape{n, c, h, w});
    for (std::size_t plane = 0; plane < n * c; ++plane)
      for (std::size_t i = 0; i < height; ++i)
        std::copy_n(g.ptr() + (plane * height + i) * width, width, gx.ptr() + (plane * h + i) * w);
    t.accumulate(xid, gx);
  });
}

Var add(Var a, Var b) {
  check_same_tape(a, b, "add");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() != y.shape()) {
    throw DimensionError("add: shapes " + shape_str(x.shape()) + " and " + shape_str(y.shape()) + " differ");
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] + y[i];
  const int aid = a.id, bid = b.id;
  return a.tape->record(std::move(out), {aid, bid}, [=](Tape& t, const Tensor& g) {
    t.accumulate(aid, g);
    t.accumulate(bid, g);
  });
}

Var mul(Var a, Var b) {
  check_same_tape(a, b, "mul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() != y.shape()) {
    throw DimensionError("mul: shapes " + shape_str(x.shape()) + " and " + shape_str(y.shape()) + " differ");
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * y[i];
  const int aid = a.id, bid = b.id;
  return a.tape->record(std::move(out), {aid, bid}, [=](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(aid);
    const Tensor& yv = t.value(bid);
    Tensor ga(g.shape()), gb(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga[i] = g[i] * yv[i];
      gb[i] = g[i] * xv[i];
    }
    t.accumulate(aid, ga);
    t.accumulate(bid, gb);
  });
}

Var sum(Var input) {
  const Tensor& x = input.value();
  double acc = 0;
  for (Real v : x.data()) acc += v;
  const int xid = input.id;
  const Shape shape = x.shape();
  return input.tape->record(Tensor(Shape{1}, static_cast<Real>(acc)), {xid},
                            [xid, shape](Tape& t, const Tensor& g) { t.accumulate(xid, Tensor(shape, g[0])); });
}

Tensor softmax_channels(const Tensor& logits) {
  require_rank(logits, 4, "softmax logits");
  const auto n = logits.dim(0), c = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  Tensor out(logits.shape());
  std::vector<double> e(c);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* src = logits.ptr() + i * c * hw;
    Real* dst = out.ptr() + i * c * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, static_cast<double>(src[k * hw + p]));
      double z = 0;
      for (std::size_t k = 0; k < c; ++k) z += (e[k] = std::exp(src[k * hw + p] - mx));
      for (std::size_t k = 0; k < c; ++k) dst[k * hw + p] = static_cast<Real>(e[k] / z);
    }
  }
  return out;
}

Var softmax_expectation(Var logits, std::span<const double> values) {
  const Tensor& x = logits.value();
  require_rank(x, 4, "softmax_expectation logits");
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (values.size() != c) {
    throw DimensionError("softmax_expectation: " + std::to_string(values.size()) + " values for " +
                         std::to_string(c) + " classes");
  }
  Tensor prob = softmax_channels(x);
  Tensor out(Shape{n, 1, x.dim(2), x.dim(3)});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < hw; ++p) {
      double acc = 0;
      for (std::size_t k = 0; k < c; ++k) acc += prob[(i * c + k) * hw + p] * values[k];
      out[i * hw + p] = static_cast<Real>(acc);
    }
  std::vector<double> vals(values.begin(), values.end());
  const int xid = logits.id;
  Tensor expect = out;
  return logits.tape->record(
      std::move(out), {xid},
      [=, prob = std::move(prob), vals = std::move(vals), expect = std::move(expect)](Tape& t, const Tensor& g) {
        Tensor gx(prob.shape());
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < hw; ++p) {
            const double e = expect[i * hw + p], go = g[i * hw + p];
            for (std::size_t k = 0; k < c; ++k) {
              const std::size_t idx = (i * c + k) * hw + p;
              gx[idx] = static_cast<Real>(go * prob[idx] * (vals[k] - e));
            }
          }
        t.accumulate(xid, gx);
      });
}

Var softmax_cross_entropy(Var logits, const IndexMap& targets) {
  const Tensor& x = logits.value();
  require_rank(x, 4, "softmax_cross_entropy logits");
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (targets.n != n || targets.h != x.dim(2) || targets.w != x.dim(3)) {
    throw DimensionError("softmax_cross_entropy: targets (" + std::to_string(targets.n) + "x" +
                         std::to_string(targets.h) + "x" + std::to_string(targets.w) + ") do not match logits " +
                         shape_str(x.shape()));
  }
  const std::size_t n_valid = targets.count_valid();
  if (n_valid == 0) throw EmptyBatchError("softmax_cross_entropy: no valid pixels in batch");

  Tensor prob = softmax_channels(x);
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t q = i * hw + p;
      if (!targets.valid[q]) continue;
      const auto cls = targets.index[q];
      if (cls < 0 || static_cast<std::size_t>(cls) >= c) {
        throw ContractError("softmax_cross_entropy: target " + std::to_string(cls) + " outside [0, " +
                            std::to_string(c - 1) + "]");
      }
      // log-softmax directly from logits keeps tiny probabilities accurate.
      const Real* src = x.ptr() + i * c * hw + p;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, static_cast<double>(src[k * hw]));
      double z = 0;
      for (std::size_t k = 0; k < c; ++k) z += std::exp(src[k * hw] - mx);
      loss += mx + std::log(z) - src[static_cast<std::size_t>(cls) * hw];
    }
  loss /= static_cast<double>(n_valid);

  const int xid = logits.id;
  return logits.tape->record(
      Tensor(Shape{1}, static_cast<Real>(loss)), {xid},
      [=, prob = std::move(prob), targets = targets](Tape& t, const Tensor& g) {
        Tensor gx(prob.shape());
        const double scale = g[0] / static_cast<double>(n_valid);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < hw; ++p) {
            const std::size_t q = i * hw + p;
            if (!targets.valid[q]) continue;
            const auto cls = static_cast<std::size_t>(targets.index[q]);
            for (std::size_t k = 0; k < c; ++k) {
              const std::size_t idx = (i * c + k) * hw + p;
              gx[idx] = static_cast<Real>(scale * (prob[idx] - (k == cls ? 1.0 : 0.0)));
            }
          }
        t.accumulate(xid, gx);
      });
}

Var l1_loss(Var pred, const Tensor& target, std::span<const std::uint8_t> valid) {
  const Tensor& x = pred.value();
  if (x.shape() != target.shape()) {
    throw DimensionError("l1_loss: prediction " + shape_str(x.shape()) + " vs target " + shape_str(target.shape()));
  }
  if (valid.size() != x.numel()) {
    throw DimensionError("l1_loss: mask has " + std::to_string(valid.size()) + " entries for " +
                         std::to_string(x.numel()) + " elements");
  }
  std::size_t n_valid = 0;
  double loss = 0;
  Tensor sign(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (!valid[i]) continue;
    ++n_valid;
    const double r = static_cast<double>(x[i]) - target[i];
    loss += std::abs(r);
    sign[i] = r > 0 ? Real(1) : (r < 0 ? Real(-1) : Real(0));
  }
  if (n_valid == 0) throw EmptyBatchError("l1_loss: no valid pixels in batch");
  loss /= static_cast<double>(n_valid);
  const int xid = pred.id;
  return pred.tape->record(Tensor(Shape{1}, static_cast<Real>(loss)), {xid},
                           [=, sign = std::move(sign)](Tape& t, const Tensor& g) {
                             Tensor gx(sign.shape());
                             const double scale = g[0] / static_cast<double>(n_valid);
                             for (std::size_t i = 0; i < sign.numel(); ++i) gx[i] = static_cast<Real>(scale * sign[i]);
                             t.accumulate(xid, gx);
                           });
}

CFDEPTH_END_NAMESPACE
