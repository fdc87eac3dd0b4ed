#pragma once

// Central finite-difference gradient checks for every differentiable op.
// Must be compiled with CFDEPTH_DOUBLE.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cfdepth/ops.hpp"
#include "cfdepth/random.hpp"

#if !defined(CFDEPTH_DOUBLE)
#error "gradcheck.hpp requires the double-precision build"
#endif

namespace cfdepth::testing {

struct GradCase {
  std::vector<Tensor> inputs;
  std::vector<bool> differentiable;
  std::function<Var(Tape&, const std::vector<Var>&)> build;
};

struct OpReport {
  std::string op;
  int shapes = 0;
  double max_rel_error = 0;
  bool passed(double tol) const { return shapes >= 5 && max_rel_error < tol; }
};

constexpr double kFdStep = 1e-5;
constexpr double kFdTolerance = 1e-4;
constexpr int kProbe = 8;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero so kinks (relu, |.|) are never crossed by the FD step.
inline Tensor random_nonzero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) {
    const double mag = rng.uniform(0.05, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

inline double eval_loss(const GradCase& gc, const std::vector<Tensor>& inputs, const Tensor& proj) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  const Var out = gc.build(tape, vars);
  double acc = 0;
  for (std::size_t i = 0; i < out.value().numel(); ++i) acc += out.value()[i] * proj[i];
  return acc;
}

/// Max relative error over a random probe of every differentiable input.
inline double check_case(const GradCase& gc, Rng& rng) {
  Tape tape;
  std::vector<Var> vars;
  for (std::size_t i = 0; i < gc.inputs.size(); ++i)
    vars.push_back(gc.differentiable[i] ? tape.variable(gc.inputs[i]) : tape.constant(gc.inputs[i]));
  const Var out = gc.build(tape, vars);
  const Tensor proj = random_tensor(out.shape(), rng, 0.5, 1.5);
  const Var loss = sum(mul(out, tape.constant(proj)));
  tape.backward(loss);

  double worst = 0;
  for (std::size_t i = 0; i < gc.inputs.size(); ++i) {
    if (!gc.differentiable[i]) continue;
    const Tensor analytic = tape.grad(vars[i]);
    for (int k = 0; k < kProbe; ++k) {
      const auto idx = static_cast<std::size_t>(rng.integer(0, static_cast<long long>(gc.inputs[i].numel()) - 1));
      auto plus = gc.inputs;
      auto minus = gc.inputs;
      plus[i][idx] += kFdStep;
      minus[i][idx] -= kFdStep;
      const double fd = (eval_loss(gc, plus, proj) - eval_loss(gc, minus, proj)) / (2 * kFdStep);
      const double a = analytic[idx];
      worst = std::max(worst, std::abs(a - fd) / (std::abs(a) + 1e-8));
    }
  }
  return worst;
}

inline std::size_t pick(Rng& rng, int lo, int hi) { return static_cast<std::size_t>(rng.integer(lo, hi)); }

inline std::vector<std::pair<std::string, std::function<GradCase(Rng&)>>> gradient_suite() {
  std::vector<std::pair<std::string, std::function<GradCase(Rng&)>>> suite;

  suite.emplace_back("conv2d", [](Rng& rng) {
    const auto n = pick(rng, 1, 2), c = pick(rng, 1, 3), o = pick(rng, 1, 3), k = pick(rng, 1, 3);
    const int stride = static_cast<int>(pick(rng, 1, 2)), pad = static_cast<int>(pick(rng, 0, 1));
    const auto h = pick(rng, 3, 6), w = pick(rng, 3, 6);
    return GradCase{{random_tensor({n, c, h, w}, rng), random_tensor({o, c, k, k}, rng), random_tensor({o}, rng)},
                    {true, true, true},
                    [=](Tape&, const std::vector<Var>& v) { return conv2d(v[0], v[1], v[2], stride, pad); }};
  });
  suite.emplace_back("deconv2d", [](Rng& rng) {
    const auto n = pick(rng, 1, 2), ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
    const auto k = pick(rng, 2, 4);
    const int stride = static_cast<int>(pick(rng, 1, 2)), pad = static_cast<int>(pick(rng, 0, 1));
    const auto h = pick(rng, 2, 4), w = pick(rng, 2, 4);
    return GradCase{{random_tensor({n, ci, h, w}, rng), random_tensor({ci, co, k, k}, rng), random_tensor({co}, rng)},
                    {true, true, true},
                    [=](Tape&, const std::vector<Var>& v) { return deconv2d(v[0], v[1], v[2], stride, pad); }};
  });
  suite.emplace_back("batch_norm/train", [](Rng& rng) {
    const auto n = pick(rng, 1, 3), c = pick(rng, 1, 3), h = pick(rng, 2, 4), w = pick(rng, 2, 4);
    return GradCase{{random_tensor({n, c, h, w}, rng, -2, 2), random_tensor({c}, rng, 0.5, 1.5), random_tensor({c}, rng)},
                    {true, true, true},
                    [=](Tape&, const std::vector<Var>& v) {
                      RunningStats stats(c);
                      return batch_norm(v[0], v[1], v[2], Mode::Train, stats);
                    }};
  });
  suite.emplace_back("batch_norm/eval", [](Rng& rng) {
    const auto n = pick(rng, 1, 3), c = pick(rng, 1, 3), h = pick(rng, 1, 4), w = pick(rng, 1, 4);
    RunningStats stats(c);
    for (std::size_t i = 0; i < c; ++i) {
      stats.mean[i] = rng.uniform(-0.5, 0.5);
      stats.var[i] = rng.uniform(0.5, 2.0);
    }
    return GradCase{{random_tensor({n, c, h, w}, rng), random_tensor({c}, rng, 0.5, 1.5), random_tensor({c}, rng)},
                    {true, true, true},
                    [=](Tape&, const std::vector<Var>& v) mutable {
                      return batch_norm(v[0], v[1], v[2], Mode::Eval, stats);
                    }};
  });
  suite.emplace_back("dropout", [](Rng& rng) {
    const auto shape = Shape{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 5), pick(rng, 2, 5)};
    const double rate = rng.uniform(0.1, 0.6);
    const std::uint64_t seed = rng();
    return GradCase{{random_tensor(shape, rng)}, {true}, [=](Tape&, const std::vector<Var>& v) {
                      return dropout(v[0], rate, Mode::Train, seed);
                    }};
  });
  suite.emplace_back("relu", [](Rng& rng) {
    const auto shape = Shape{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 5), pick(rng, 2, 5)};
    return GradCase{{random_nonzero(shape, rng)}, {true}, [](Tape&, const std::vector<Var>& v) { return relu(v[0]); }};
  });
  suite.emplace_back("avg_pool", [](Rng& rng) {
    const auto shape = Shape{pick(rng, 1, 2), pick(rng, 1, 3), 2 * pick(rng, 1, 3), 2 * pick(rng, 1, 3)};
    return GradCase{{random_tensor(shape, rng)}, {true}, [](Tape&, const std::vector<Var>& v) { return avg_pool(v[0]); }};
  });
  suite.emplace_back("concat_channels", [](Rng& rng) {
    const auto n = pick(rng, 1, 2), h = pick(rng, 1, 4), w = pick(rng, 1, 4);
    return GradCase{{random_tensor({n, pick(rng, 1, 3), h, w}, rng), random_tensor({n, pick(rng, 1, 3), h, w}, rng)},
                    {true, true},
                    [](Tape&, const std::vector<Var>& v) { return concat_channels(v[0], v[1]); }};
  });
  suite.emplace_back("crop", [](Rng& rng) {
    const auto h = pick(rng, 2, 5), w = pick(rng, 2, 5);
    const auto ch = pick(rng, 1, static_cast<int>(h)), cw = pick(rng, 1, static_cast<int>(w));
    return GradCase{{random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), h, w}, rng)}, {true},
                    [=](Tape&, const std::vector<Var>& v) { return crop(v[0], ch, cw); }};
  });
  suite.emplace_back("add", [](Rng& rng) {
    const auto shape = Shape{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)};
    return GradCase{{random_tensor(shape, rng), random_tensor(shape, rng)}, {true, true},
                    [](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); }};
  });
  suite.emplace_back("mul", [](Rng& rng) {
    const auto shape = Shape{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)};
    return GradCase{{random_tensor(shape, rng), random_tensor(shape, rng)}, {true, true},
                    [](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); }};
  });
  suite.emplace_back("sum", [](Rng& rng) {
    const auto shape = Shape{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)};
    return GradCase{{random_tensor(shape, rng)}, {true}, [](Tape&, const std::vector<Var>& v) { return sum(v[0]); }};
  });
  suite.emplace_back("softmax_expectation", [](Rng& rng) {
    const auto c = pick(rng, 2, 6);
    std::vector<double> values(c);
    for (auto& x : values) x = rng.uniform(1, 80);
    return GradCase{{random_tensor({pick(rng, 1, 2), c, pick(rng, 1, 4), pick(rng, 1, 4)}, rng, -2, 2)}, {true},
                    [=](Tape&, const std::vector<Var>& v) { return softmax_expectation(v[0], values); }};
  });
  suite.emplace_back("softmax_cross_entropy", [](Rng& rng) {
    const auto n = pick(rng, 1, 2), c = pick(rng, 2, 6), h = pick(rng, 1, 4), w = pick(rng, 1, 4);
    IndexMap targets(n, h, w);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      targets.index[i] = static_cast<std::int32_t>(rng.integer(0, static_cast<long long>(c) - 1));
      targets.valid[i] = (i == 0 || rng.uniform() < 0.7) ? 1 : 0;
    }
    return GradCase{{random_tensor({n, c, h, w}, rng, -3, 3)}, {true},
                    [=](Tape&, const std::vector<Var>& v) { return softmax_cross_entropy(v[0], targets); }};
  });
  suite.emplace_back("l1_loss", [](Rng& rng) {
    const auto shape = Shape{pick(rng, 1, 2), 1, pick(rng, 1, 4), pick(rng, 1, 4)};
    const Tensor target = random_tensor(shape, rng);
    Tensor pred = target;
    for (auto& v : pred.data()) v += rng.uniform() < 0.5 ? -rng.uniform(0.05, 1) : rng.uniform(0.05, 1);
    std::vector<std::uint8_t> valid(target.numel());
    for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = (i == 0 || rng.uniform() < 0.7) ? 1 : 0;
    return GradCase{{pred}, {true},
                    [=](Tape&, const std::vector<Var>& v) { return l1_loss(v[0], target, valid); }};
  });
  return suite;
}

/// Runs every op on `shapes_per_op` random shapes.
inline std::vector<OpReport> run_gradient_suite(std::uint64_t seed, int shapes_per_op = 5) {
  std::vector<OpReport> reports;
  Rng rng(seed);
  for (auto& [name, make] : gradient_suite()) {
    OpReport report{name, 0, 0.0};
    for (int s = 0; s < shapes_per_op; ++s) {
      const GradCase gc = make(rng);
      report.max_rel_error = std::max(report.max_rel_error, check_case(gc, rng));
      ++report.shapes;
    }
    reports.push_back(report);
  }
  return reports;
}

}  // namespace cfdepth::testing
