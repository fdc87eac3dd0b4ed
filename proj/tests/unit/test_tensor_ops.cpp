#include <gtest/gtest.h>

#include <cmath>

#include "cfdepth/errors.hpp"
#include "cfdepth/ops.hpp"
#include "cfdepth/random.hpp"

using namespace cfdepth;

namespace {

Tensor t4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::vector<Real> v) {
  return Tensor({n, c, h, w}, std::move(v));
}

Tensor iota(Shape shape, Real start = 1) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = start + static_cast<Real>(i);
  return t;
}

}  // namespace

TEST(Tensor, ShapeMustMatchElementCount) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<Real>{1, 2, 3}), DimensionError);
  const Tensor t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_THROW(t.reshaped({5, 5}), DimensionError);
}

TEST(Conv2d, IdentityKernelReproducesInput) {
  Tape tape;
  const Tensor x = iota({1, 1, 3, 3});
  const Var out = conv2d(tape.constant(x), tape.constant(Tensor({1, 1, 1, 1}, Real(1))), tape.constant(Tensor({1})), 1, 0);
  EXPECT_EQ(out.value(), x);
}

TEST(Conv2d, ZeroWeightsGiveZeroOutput) {
  Tape tape;
  const Var out = conv2d(tape.constant(iota({2, 3, 5, 4})), tape.constant(Tensor({4, 3, 3, 3})),
                         tape.constant(Tensor({4})), 1, 1);
  EXPECT_EQ(out.shape(), (Shape{2, 4, 5, 4}));
  for (Real v : out.value().data()) EXPECT_EQ(v, 0);
}

TEST(Conv2d, AllOnesKernelSumsWindow) {
  Tape tape;
  const Var out = conv2d(tape.constant(t4(1, 1, 3, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9})),
                         tape.constant(Tensor({1, 1, 3, 3}, Real(1))), tape.constant(Tensor({1})), 1, 0);
  ASSERT_EQ(out.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(out.value()[0], 45);
}

TEST(Conv2d, OutputExtentFollowsStrideAndPadding) {
  Tape tape;
  const Var out = conv2d(tape.constant(Tensor({1, 2, 7, 9})), tape.constant(Tensor({3, 2, 3, 3})),
                         tape.constant(Tensor({3})), 2, 1);
  EXPECT_EQ(out.shape(), (Shape{1, 3, 4, 5}));
}

TEST(Conv2d, ShapeMismatchIsReported) {
  Tape tape;
  EXPECT_THROW(conv2d(tape.constant(Tensor({1, 2, 4, 4})), tape.constant(Tensor({3, 1, 3, 3})),
                      tape.constant(Tensor({3})), 1, 1),
               DimensionError);
  EXPECT_THROW(conv2d(tape.constant(Tensor({1, 1, 2, 2})), tape.constant(Tensor({1, 1, 3, 3})),
                      tape.constant(Tensor({1})), 1, 0),
               DimensionError);
  EXPECT_THROW(conv2d(tape.constant(Tensor({1, 1, 4, 4})), tape.constant(Tensor({1, 1, 3, 3})),
                      tape.constant(Tensor({1})), 0, 0),
               DimensionError);
}

TEST(Deconv2d, ScatterAccumulate) {
  Tape tape;
  const Var out = deconv2d(tape.constant(t4(1, 1, 1, 1, {2})), tape.constant(Tensor({1, 1, 2, 2}, Real(1))),
                           tape.constant(Tensor({1})), 2, 0);
  ASSERT_EQ(out.shape(), (Shape{1, 1, 2, 2}));
  for (Real v : out.value().data()) EXPECT_EQ(v, 2);
}

TEST(Deconv2d, ZeroInputGivesZeroOutput) {
  Tape tape;
  Rng rng(3);
  Tensor w({2, 3, 4, 4});
  for (auto& v : w.data()) v = static_cast<Real>(rng.normal());
  const Var out = deconv2d(tape.constant(Tensor({1, 2, 3, 5})), tape.constant(w), tape.constant(Tensor({3})), 2, 1);
  EXPECT_EQ(out.shape(), (Shape{1, 3, 6, 10}));
  for (Real v : out.value().data()) EXPECT_EQ(v, 0);
}

TEST(BatchNorm, ConstantChannelMapsToShift) {
  Tape tape;
  RunningStats stats(1);
  const Var out = batch_norm(tape.constant(Tensor({2, 1, 3, 3}, Real(4.5))), tape.constant(Tensor({1}, Real(1))),
                             tape.constant(Tensor({1})), Mode::Train, stats);
  for (Real v : out.value().data()) EXPECT_EQ(v, 0);
}

TEST(BatchNorm, ClosedFormTwoValueChannel) {
  Tape tape;
  RunningStats stats(1);
  const Var out = batch_norm(tape.constant(t4(1, 1, 1, 2, {-1, 1})), tape.constant(Tensor({1}, Real(1))),
                             tape.constant(Tensor({1})), Mode::Train, stats);
  const double expected = 1.0 / std::sqrt(1.0 + kBatchNormEps);
  EXPECT_NEAR(out.value()[0], -expected, 1e-6);
  EXPECT_NEAR(out.value()[1], expected, 1e-6);
  // Running statistics move by the momentum toward the batch (unbiased variance 2).
  EXPECT_NEAR(stats.mean[0], 0.0, 1e-7);
  EXPECT_NEAR(stats.var[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-6);
}

TEST(BatchNorm, TrainOutputHasShiftMeanAndScaleVariance) {
  Rng rng(5);
  Tensor x({4, 2, 5, 5});
  for (auto& v : x.data()) v = static_cast<Real>(rng.uniform(-3, 7));
  Tape tape;
  RunningStats stats(2);
  const Var out = batch_norm(tape.constant(x), tape.constant(Tensor({2}, std::vector<Real>{2.0f, 0.5f})),
                             tape.constant(Tensor({2}, std::vector<Real>{-1.0f, 3.0f})), Mode::Train, stats);
  const double scale[] = {2.0, 0.5}, shift[] = {-1.0, 3.0};
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0, var = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) mean += out.value()[(n * 2 + c) * 25 + i];
    mean /= 100;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) var += std::pow(out.value()[(n * 2 + c) * 25 + i] - mean, 2);
    var /= 100;
    EXPECT_NEAR(mean, shift[c], 1e-4);
    EXPECT_NEAR(var, scale[c] * scale[c], 1e-3);
  }
}

TEST(BatchNorm, EvalIsDeterministic) {
  Rng rng(9);
  Tensor x({2, 3, 4, 4});
  for (auto& v : x.data()) v = static_cast<Real>(rng.normal());
  RunningStats stats(3);
  auto run = [&] {
    Tape tape;
    return batch_norm(tape.constant(x), tape.constant(Tensor({3}, Real(1.5))), tape.constant(Tensor({3}, Real(0.2))),
                      Mode::Eval, stats)
        .value();
  };
  const Tensor first = run();
  EXPECT_EQ(first, run());
  EXPECT_EQ(stats.mean, Tensor({3}));
}

TEST(BatchNorm, TrainNeedsTwoValuesPerChannel) {
  Tape tape;
  RunningStats stats(1);
  EXPECT_THROW(batch_norm(tape.constant(Tensor({1, 1, 1, 1})), tape.constant(Tensor({1}, Real(1))),
                          tape.constant(Tensor({1})), Mode::Train, stats),
               DimensionError);
}

TEST(Dropout, IdentityCases) {
  const Tensor x = iota({1, 2, 3, 3});
  Tape tape;
  EXPECT_EQ(dropout(tape.constant(x), 0.0, Mode::Train, 1).value(), x);
  EXPECT_EQ(dropout(tape.constant(x), 0.7, Mode::Eval, 1).value(), x);
}

TEST(Dropout, RateAtLeastOneIsRejected) {
  Tape tape;
  EXPECT_THROW(dropout(tape.constant(Tensor({4})), 1.0, Mode::Train, 1), ParameterError);
  EXPECT_THROW(dropout(tape.constant(Tensor({4})), -0.1, Mode::Train, 1), ParameterError);
}

TEST(Dropout, InvertedScalingAndBinomialBound) {
  const std::size_t count = 20000;
  Tape tape;
  const Var out = dropout(tape.constant(Tensor({1, 1, 100, 200}, Real(2))), 0.5, Mode::Train, 12345);
  std::size_t zeros = 0;
  for (Real v : out.value().data()) {
    if (v == 0) {
      ++zeros;
    } else {
      EXPECT_EQ(v, 4);
    }
  }
  const double sigma = std::sqrt(count * 0.25);
  EXPECT_LE(std::abs(static_cast<double>(zeros) - 0.5 * count), 3 * sigma);

  Tape again;
  EXPECT_EQ(dropout(again.constant(Tensor({1, 1, 100, 200}, Real(2))), 0.5, Mode::Train, 12345).value(), out.value());
}

TEST(Relu, ClampsNegatives) {
  Tape tape;
  const Var out = relu(tape.constant(Tensor({3}, std::vector<Real>{-1, 0, 2})));
  EXPECT_EQ(out.value(), Tensor({3}, std::vector<Real>{0, 0, 2}));
}

TEST(AvgPool, ArithmeticMean) {
  Tape tape;
  const Var out = avg_pool(tape.constant(t4(1, 1, 2, 2, {1, 2, 3, 4})));
  ASSERT_EQ(out.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(out.value()[0], Real(2.5));
}

TEST(AvgPool, PreservesGlobalMeanAndRejectsOddExtent) {
  Tape tape;
  const Tensor x = iota({2, 3, 4, 6});
  const Var out = avg_pool(tape.constant(x));
  double in_sum = 0, out_sum = 0;
  for (Real v : x.data()) in_sum += v;
  for (Real v : out.value().data()) out_sum += v;
  EXPECT_NEAR(in_sum / x.numel(), out_sum / out.value().numel(), 1e-9);
  EXPECT_THROW(avg_pool(tape.constant(Tensor({1, 1, 3, 4}))), DimensionError);
}

TEST(Concat, ChannelOrder) {
  Tape tape;
  const Tensor a = iota({2, 3, 2, 2});
  const Tensor b = iota({2, 2, 2, 2}, 100);
  const Var out = concat_channels(tape.constant(a), tape.constant(b));
  ASSERT_EQ(out.shape(), (Shape{2, 5, 2, 2}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(out.value().at(n, c, i, j), a.at(n, c, i, j));
  EXPECT_THROW(concat_channels(tape.constant(a), tape.constant(Tensor({2, 2, 3, 2}))), DimensionError);
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
  Tape tape;
  IndexMap targets(1, 2, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    targets.index[i] = static_cast<int>(i * 5);
    targets.valid[i] = 1;
  }
  const Var loss = softmax_cross_entropy(tape.constant(Tensor({1, 24, 2, 2}, Real(0.3))), targets);
  EXPECT_NEAR(loss.value()[0], std::log(24.0), 1e-5);
}

TEST(SoftmaxCrossEntropy, ConfidentCorrectPrediction) {
  Tape tape;
  IndexMap targets(1, 1, 1);
  targets.valid[0] = 1;
  const Var loss = softmax_cross_entropy(tape.constant(t4(1, 2, 1, 1, {10, -10})), targets);
  EXPECT_NEAR(loss.value()[0], 2.06e-9, 1e-10);
}

TEST(SoftmaxCrossEntropy, GradientSumsToZeroAndMaskedPixelsAreSilent) {
  Rng rng(1);
  Tensor logits({1, 5, 3, 3});
  for (auto& v : logits.data()) v = static_cast<Real>(rng.normal());
  IndexMap targets(1, 3, 3);
  for (std::size_t i = 0; i < 9; ++i) {
    targets.index[i] = static_cast<int>(i % 5);
    targets.valid[i] = i % 3 != 0;
  }
  Tape tape;
  const Var x = tape.variable(logits);
  tape.backward(softmax_cross_entropy(x, targets));
  const Tensor g = tape.grad(x);
  for (std::size_t p = 0; p < 9; ++p) {
    double total = 0;
    for (std::size_t k = 0; k < 5; ++k) {
      total += g[k * 9 + p];
      if (!targets.valid[p]) EXPECT_EQ(g[k * 9 + p], 0);
    }
    EXPECT_NEAR(total, 0, 1e-7);
  }
  // Changing logits at masked pixels leaves the loss unchanged.
  Tensor perturbed = logits;
  perturbed[0] += 5;
  Tape t2;
  const Tensor base = softmax_cross_entropy(t2.constant(logits), targets).value();
  EXPECT_EQ(softmax_cross_entropy(t2.constant(perturbed), targets).value(), base);
}

TEST(SoftmaxCrossEntropy, EmptyMaskAndBadTarget) {
  Tape tape;
  IndexMap none(1, 1, 2);
  EXPECT_THROW(softmax_cross_entropy(tape.constant(Tensor({1, 3, 1, 2})), none), EmptyBatchError);
  IndexMap bad(1, 1, 1);
  bad.index[0] = 3;
  bad.valid[0] = 1;
  EXPECT_THROW(softmax_cross_entropy(tape.constant(Tensor({1, 3, 1, 1})), bad), ContractError);
}

TEST(L1Loss, HandArithmetic) {
  Tape tape;
  const Tensor pred({2}, std::vector<Real>{1, 3});
  const Tensor target({2}, std::vector<Real>{2, 5});
  EXPECT_EQ(l1_loss(tape.constant(pred), pred, std::vector<std::uint8_t>{1, 1}).value()[0], 0);
  EXPECT_EQ(l1_loss(tape.constant(pred), target, std::vector<std::uint8_t>{1, 1}).value()[0], Real(1.5));
  EXPECT_EQ(l1_loss(tape.constant(pred), target, std::vector<std::uint8_t>{1, 0}).value()[0], Real(1.0));
  EXPECT_THROW(l1_loss(tape.constant(pred), target, std::vector<std::uint8_t>{0, 0}), EmptyBatchError);
}

TEST(L1Loss, SubgradientAtZeroIsZero) {
  Tape tape;
  const Tensor pred({3}, std::vector<Real>{1, 2, 3});
  const Tensor target({3}, std::vector<Real>{1, 1, 4});
  const Var x = tape.variable(pred);
  tape.backward(l1_loss(x, target, std::vector<std::uint8_t>{1, 1, 1}));
  const Tensor g = tape.grad(x);
  EXPECT_EQ(g[0], 0);
  EXPECT_FLOAT_EQ(g[1], 1.0f / 3);
  EXPECT_FLOAT_EQ(g[2], -1.0f / 3);
}

TEST(Backward, LinearMapGradientIsInput) {
  Tape tape;
  Parameter w("w", Tensor({4}, std::vector<Real>{0.5, -1, 2, 3}), Branch::DSC);
  Parameter unused("unused", Tensor({2}, Real(1)), Branch::SC);
  const Tensor x({4}, std::vector<Real>{1, 2, 3, 4});
  const Var wv = tape.parameter(w);
  tape.parameter(unused);
  tape.backward(sum(mul(wv, tape.constant(x))));
  EXPECT_EQ(w.grad(), x);
  EXPECT_EQ(unused.grad(), Tensor({2}));

  // A second backward without zeroing accumulates.
  Tape again;
  again.backward(sum(mul(again.parameter(w), again.constant(x))));
  EXPECT_EQ(w.grad(), Tensor({4}, std::vector<Real>{2, 4, 6, 8}));
  w.zero_grad();
  EXPECT_EQ(w.grad(), Tensor({4}));
}

TEST(Backward, NonScalarLossIsRejected) {
  Tape tape;
  const Var x = tape.variable(Tensor({2}));
  EXPECT_THROW(tape.backward(relu(x)), ContractError);
}

TEST(Backward, VisitsNodesInReverseRecordingOrder) {
  Tape tape;
  const Var x = tape.variable(Tensor({1, 1, 2, 2}, Real(1)));
  const Var a = relu(x);
  const Var b = avg_pool(a);
  const Var c = sum(b);
  tape.backward(c);
  EXPECT_EQ(tape.last_backward_order(), (std::vector<int>{c.id, b.id, a.id}));
}

TEST(Backward, DeterministicAcrossRuns) {
  auto run = [] {
    Rng rng(77);
    Tensor x({2, 3, 8, 8}), w({4, 3, 3, 3});
    for (auto& v : x.data()) v = static_cast<Real>(rng.normal());
    for (auto& v : w.data()) v = static_cast<Real>(rng.normal());
    Parameter p("w", w, Branch::DSC);
    Tape tape;
    RunningStats stats(4);
    const Var y = dropout(batch_norm(conv2d(tape.constant(x), tape.parameter(p), tape.constant(Tensor({4})), 1, 1),
                                     tape.constant(Tensor({4}, Real(1))), tape.constant(Tensor({4})), Mode::Train,
                                     stats),
                          0.3, Mode::Train, 99);
    tape.backward(sum(relu(y)));
    return std::make_pair(y.value(), p.grad());
  };
  const auto first = run();
  const auto second = run();
  EXPECT_EQ(first.first, second.first);
  EXPECT_EQ(first.second, second.second);
}
