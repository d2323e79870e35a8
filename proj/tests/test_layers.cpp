#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ctm/layers.hpp"
#include "ctm/tensor.hpp"

using namespace ctm;

namespace {

double relErr(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0}); }

double sumSquares(const TensorD& t) {
  double s = 0;
  for (Index i = 0; i < t.size(); ++i) s += t[i] * t[i];
  return s;
}

// Central-difference derivative of sum(forward()^2) w.r.t. one scalar slot.
template <typename Fwd>
double fdLossDerivative(double& slot, Fwd&& forward, double step = 1e-5) {
  const double saved = slot;
  slot = saved + step;
  const double lp = sumSquares(forward());
  slot = saved - step;
  const double lm = sumSquares(forward());
  slot = saved;
  return (lp - lm) / (2 * step);
}

}  // namespace

// ===================== 1x1 convolution =====================

TEST_CASE("conv1x1 identity weights pass the input through") {
  Rng rng(21);
  TensorD x = randn<double>({2, 3, 4, 2, 2}, rng);
  auto layer = Conv1x1<double>::identity(4);
  CHECK(maxAbsDiff(conv1x1Forward(x, layer), x) == 0.0);
}

TEST_CASE("conv1x1 hand example: summing two channels") {
  TensorD x({1, 1, 2, 1, 1});
  x[0] = 3;
  x[1] = 4;
  Conv1x1<double> layer;
  layer.weights = TensorD::constant({1, 2}, 1.0);
  TensorD o = conv1x1Forward(x, layer);
  REQUIRE(o.shape() == Shape{1, 1, 1, 1, 1});
  CHECK(o[0] == doctest::Approx(7).epsilon(1e-15));
}

TEST_CASE("conv1x1 matches a loop-based oracle") {
  Rng rng(22);
  TensorD x = randn<double>({2, 3, 5, 3, 4}, rng);
  auto layer = Conv1x1<double>::init(7, 5, rng, /*withBias=*/true);
  randn<double>({7}, rng);  // burn, then fill bias with fresh values
  for (Index i = 0; i < 7; ++i) layer.bias[i] = rng.normal();

  TensorD fast = conv1x1Forward(x, layer);
  TensorD slow({2, 3, 7, 3, 4});
  for (Index n = 0; n < 2; ++n)
    for (Index t = 0; t < 3; ++t)
      for (Index co = 0; co < 7; ++co)
        for (Index h = 0; h < 3; ++h)
          for (Index w = 0; w < 4; ++w) {
            double acc = layer.bias[co];
            for (Index ci = 0; ci < 5; ++ci) acc += layer.weights(co, ci) * x(n, t, ci, h, w);
            slow(n, t, co, h, w) = acc;
          }
  CHECK(maxAbsDiff(fast, slow) < 1e-12);
}

TEST_CASE("conv1x1 commutes with spatial permutation") {
  Rng rng(23);
  TensorD x = randn<double>({1, 2, 3, 4, 2}, rng);
  auto layer = Conv1x1<double>::init(5, 3, rng);
  // Reversing H before the conv equals reversing H after it.
  TensorD xr(x.shape());
  for (Index n = 0; n < 1; ++n)
    for (Index t = 0; t < 2; ++t)
      for (Index c = 0; c < 3; ++c)
        for (Index h = 0; h < 4; ++h)
          for (Index w = 0; w < 2; ++w) xr(n, t, c, h, w) = x(n, t, c, Index{3} - h, w);
  TensorD a = conv1x1Forward(xr, layer);
  TensorD b = conv1x1Forward(x, layer);
  for (Index t = 0; t < 2; ++t)
    for (Index c = 0; c < 5; ++c)
      for (Index h = 0; h < 4; ++h)
        for (Index w = 0; w < 2; ++w)
          CHECK(a(Index{0}, t, c, h, w) == b(Index{0}, t, c, Index{3} - h, w));
}

TEST_CASE("conv1x1 gradients match finite differences") {
  Rng rng(24);
  TensorD x = randn<double>({1, 2, 3, 2, 2}, rng);
  auto layer = Conv1x1<double>::init(4, 3, rng, /*withBias=*/true);
  for (Index i = 0; i < 4; ++i) layer.bias[i] = rng.normal();

  TensorD out = conv1x1Forward(x, layer);
  auto g = conv1x1Backward(x, layer, scale(out, 2.0));
  for (Index i = 0; i < x.size(); ++i)
    CHECK(relErr(g.dInput[i], fdLossDerivative(x.data()[i], [&] { return conv1x1Forward(x, layer); })) < 1e-6);
  for (Index i = 0; i < layer.weights.size(); ++i)
    CHECK(relErr(g.dWeights[i],
                 fdLossDerivative(layer.weights.data()[i], [&] { return conv1x1Forward(x, layer); })) < 1e-6);
  for (Index i = 0; i < layer.bias.size(); ++i)
    CHECK(relErr(g.dBias[i], fdLossDerivative(layer.bias.data()[i], [&] { return conv1x1Forward(x, layer); })) <
          1e-6);
}

TEST_CASE("conv1x1 rejects channel mismatch") {
  Rng rng(25);
  auto layer = Conv1x1<double>::init(4, 3, rng);
  CHECK_THROWS_AS(conv1x1Forward(randn<double>({1, 2, 5, 2, 2}, rng), layer), std::invalid_argument);
  CHECK_THROWS_AS(conv1x1Forward(randn<double>({1, 2, 3, 2}, rng), layer), std::invalid_argument);
}

// ===================== batch normalization =====================

TEST_CASE("batchnorm with zero gamma produces zeros in both modes") {
  Rng rng(26);
  TensorD x = randn<double>({2, 3, 4, 2, 2}, rng);
  auto layer = BatchNorm<double>::init(4, /*zeroGamma=*/true);
  CHECK(maxAbs(batchnormForward(x, layer, Mode::Training)) == 0.0);
  CHECK(maxAbs(batchnormForward(x, layer, Mode::Inference)) == 0.0);
}

TEST_CASE("batchnorm training output is normalized per channel") {
  Rng rng(27);
  TensorD x = randn<double>({4, 2, 3, 5, 5}, rng);
  // Non-trivial stats; per-channel variance ~16 so that eps (1e-5) perturbs
  // the normalized variance by well under the 1e-6 tolerance.
  for (Index i = 0; i < x.size(); ++i) x[i] = x[i] * 4.0 + 1.0;
  auto layer = BatchNorm<double>::init(3);
  TensorD o = batchnormForward(x, layer, Mode::Training);

  const Index m = 4 * 2 * 5 * 5;
  for (Index c = 0; c < 3; ++c) {
    double sum = 0, sumSq = 0;
    for (Index n = 0; n < 4; ++n)
      for (Index t = 0; t < 2; ++t)
        for (Index h = 0; h < 5; ++h)
          for (Index w = 0; w < 5; ++w) {
            const double v = o(n, t, c, h, w);
            sum += v;
            sumSq += v * v;
          }
    const double mean = sum / m;
    const double var = sumSq / m - mean * mean;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(var - 1.0) < 1e-6);
  }
}

TEST_CASE("batchnorm running statistics follow the momentum rule") {
  // Single channel, x = {0, 2}: batch mean 1, biased var 1, unbiased var 2.
  TensorD x({2, 1, 1, 1, 1});
  x[0] = 0;
  x[1] = 2;
  auto layer = BatchNorm<double>::init(1);
  batchnormForward(x, layer, Mode::Training);
  CHECK(layer.runningMean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 1.0).epsilon(1e-12));
  CHECK(layer.runningVar[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 2.0).epsilon(1e-12));

  // Inference mode must not touch them.
  const double rm = layer.runningMean[0], rv = layer.runningVar[0];
  batchnormForward(x, layer, Mode::Inference);
  CHECK(layer.runningMean[0] == rm);
  CHECK(layer.runningVar[0] == rv);
}

TEST_CASE("batchnorm inference applies the affine running-stat formula") {
  auto layer = BatchNorm<double>::init(2);
  layer.runningMean[0] = 1.0;
  layer.runningVar[0] = 4.0;
  layer.gamma[0] = 3.0;
  layer.beta[0] = -2.0;
  TensorD x({1, 1, 2, 1, 1});
  x[0] = 5.0;  // channel 0
  x[1] = 0.5;  // channel 1 (default stats: mean 0, var 1)
  TensorD o = batchnormForward(x, layer, Mode::Inference);
  CHECK(o[0] == doctest::Approx(3.0 * (5.0 - 1.0) / std::sqrt(4.0 + 1e-5) - 2.0).epsilon(1e-12));
  CHECK(o[1] == doctest::Approx(0.5 / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
}

TEST_CASE("batchnorm backward matches finite differences (training)") {
  Rng rng(28);
  TensorD x = randn<double>({2, 2, 3, 2, 2}, rng);
  auto layer = BatchNorm<double>::init(3);
  for (Index i = 0; i < 3; ++i) {
    layer.gamma[i] = 1.0 + 0.3 * rng.normal();
    layer.beta[i] = 0.2 * rng.normal();
  }
  auto freshLayer = layer;  // forward mutates running stats; FD reruns need the original

  auto run = [&] {
    auto tmp = freshLayer;
    return batchnormForward(x, tmp, Mode::Training);
  };
  BnTrace<double> trace;
  auto tmp = freshLayer;
  TensorD out = batchnormForward(x, tmp, Mode::Training, &trace);
  auto g = batchnormBackward(freshLayer, trace, scale(out, 2.0));

  for (Index i = 0; i < x.size(); ++i)
    CHECK(relErr(g.dInput[i], fdLossDerivative(x.data()[i], run)) < 1e-6);
  for (Index i = 0; i < 3; ++i) {
    CHECK(relErr(g.dGamma[i], fdLossDerivative(freshLayer.gamma.data()[i], run)) < 1e-6);
    CHECK(relErr(g.dBeta[i], fdLossDerivative(freshLayer.beta.data()[i], run)) < 1e-6);
  }
}

TEST_CASE("batchnorm backward matches finite differences (inference)") {
  Rng rng(29);
  TensorD x = randn<double>({1, 2, 2, 2, 2}, rng);
  auto layer = BatchNorm<double>::init(2);
  layer.runningMean[0] = 0.3;
  layer.runningVar[0] = 2.0;
  layer.runningVar[1] = 0.5;
  layer.gamma[0] = 1.4;
  layer.beta[1] = -0.6;

  auto run = [&] {
    auto tmp = layer;
    return batchnormForward(x, tmp, Mode::Inference);
  };
  BnTrace<double> trace;
  auto tmp = layer;
  TensorD out = batchnormForward(x, tmp, Mode::Inference, &trace);
  auto g = batchnormBackward(layer, trace, scale(out, 2.0));
  for (Index i = 0; i < x.size(); ++i)
    CHECK(relErr(g.dInput[i], fdLossDerivative(x.data()[i], run)) < 1e-6);
  for (Index i = 0; i < 2; ++i) {
    CHECK(relErr(g.dGamma[i], fdLossDerivative(layer.gamma.data()[i], run)) < 1e-6);
    CHECK(relErr(g.dBeta[i], fdLossDerivative(layer.beta.data()[i], run)) < 1e-6);
  }
}

TEST_CASE("batchnorm rejects single-sample training batches and bad channels") {
  Rng rng(30);
  auto layer = BatchNorm<double>::init(3);
  CHECK_THROWS_AS(batchnormForward(randn<double>({1, 1, 3, 1, 1}, rng), layer, Mode::Training),
                  std::invalid_argument);
  // Same shape is fine in inference mode.
  CHECK_NOTHROW(batchnormForward(randn<double>({1, 1, 3, 1, 1}, rng), layer, Mode::Inference));
  CHECK_THROWS_AS(batchnormForward(randn<double>({2, 2, 4, 2, 2}, rng), layer, Mode::Training),
                  std::invalid_argument);
}

// ===================== temporal 3-tap convolution =====================

TEST_CASE("temporalConv3 delta kernel is the identity") {
  Rng rng(31);
  TensorD x = randn<double>({2, 3, 4, 2, 2}, rng);  // (N,C,T,H,W)
  auto layer = TemporalConv3<double>::identity(3);
  CHECK(maxAbsDiff(temporalConv3Forward(x, layer), x) == 0.0);
}

TEST_CASE("temporalConv3 hand example: ones kernel over [1,2,3]") {
  TensorD x({1, 1, 3, 1, 1});
  x[0] = 1;
  x[1] = 2;
  x[2] = 3;
  TemporalConv3<double> layer;
  layer.weights = TensorD::constant({1, 1, 3}, 1.0);
  TensorD o = temporalConv3Forward(x, layer);
  REQUIRE(o.shape() == Shape{1, 1, 3, 1, 1});
  CHECK(o[0] == doctest::Approx(3).epsilon(1e-15));
  CHECK(o[1] == doctest::Approx(6).epsilon(1e-15));
  CHECK(o[2] == doctest::Approx(5).epsilon(1e-15));
}

TEST_CASE("temporalConv3 is equivariant to spatial permutation") {
  Rng rng(32);
  TensorD x = randn<double>({1, 2, 3, 4, 2}, rng);  // (N,C,T,H,W)
  auto layer = TemporalConv3<double>::init(3, 2, rng);
  TensorD xr(x.shape());
  for (Index c = 0; c < 2; ++c)
    for (Index t = 0; t < 3; ++t)
      for (Index h = 0; h < 4; ++h)
        for (Index w = 0; w < 2; ++w) xr(Index{0}, c, t, h, w) = x(Index{0}, c, t, Index{3} - h, w);
  TensorD a = temporalConv3Forward(xr, layer);
  TensorD b = temporalConv3Forward(x, layer);
  for (Index c = 0; c < 3; ++c)
    for (Index t = 0; t < 3; ++t)
      for (Index h = 0; h < 4; ++h)
        for (Index w = 0; w < 2; ++w)
          CHECK(a(Index{0}, c, t, h, w) == b(Index{0}, c, t, Index{3} - h, w));
}

TEST_CASE("temporalConv3 output site depends only on its own spatial site") {
  Rng rng(33);
  TensorD x = randn<double>({1, 2, 4, 2, 3}, rng);
  auto layer = TemporalConv3<double>::init(2, 2, rng);
  TensorD base = temporalConv3Forward(x, layer);
  TensorD x2 = x;
  x2(Index{0}, Index{1}, Index{2}, Index{1}, Index{0}) += 5.0;
  TensorD poked = temporalConv3Forward(x2, layer);
  for (Index c = 0; c < 2; ++c)
    for (Index t = 0; t < 4; ++t)
      for (Index h = 0; h < 2; ++h)
        for (Index w = 0; w < 3; ++w)
          if (!(h == 1 && w == 0)) CHECK(poked(Index{0}, c, t, h, w) == base(Index{0}, c, t, h, w));
}

TEST_CASE("temporalConv3 gradients match finite differences") {
  Rng rng(34);
  TensorD x = randn<double>({1, 3, 4, 2, 2}, rng);
  auto layer = TemporalConv3<double>::init(2, 3, rng);
  TensorD out = temporalConv3Forward(x, layer);
  auto g = temporalConv3Backward(x, layer, scale(out, 2.0));
  for (Index i = 0; i < x.size(); ++i)
    CHECK(relErr(g.dInput[i],
                 fdLossDerivative(x.data()[i], [&] { return temporalConv3Forward(x, layer); })) < 1e-6);
  for (Index i = 0; i < layer.weights.size(); ++i)
    CHECK(relErr(g.dWeights[i],
                 fdLossDerivative(layer.weights.data()[i], [&] { return temporalConv3Forward(x, layer); })) <
          1e-6);
}

TEST_CASE("temporalConv3 rejects mismatched shapes") {
  Rng rng(35);
  auto layer = TemporalConv3<double>::init(2, 3, rng);
  CHECK_THROWS_AS(temporalConv3Forward(randn<double>({1, 4, 4, 2, 2}, rng), layer), std::invalid_argument);
  CHECK_THROWS_AS(temporalConv3Forward(randn<double>({1, 3, 4, 2}, rng), layer), std::invalid_argument);
  CHECK_THROWS_AS(temporalConv3Forward(randn<double>({1, 3, 1, 2, 2}, rng), layer, /*padT=*/0),
                  std::invalid_argument);
  TensorD x = randn<double>({1, 3, 4, 2, 2}, rng);
  CHECK_THROWS_AS(temporalConv3Backward(x, layer, TensorD({1, 2, 5, 2, 2})), std::invalid_argument);
}

// ===================== ReLU =====================

TEST_CASE("relu forward and backward on the worked values") {
  TensorD x({3});
  x[0] = -1;
  x[1] = 0;
  x[2] = 2;
  TensorD o = reluForward(x);
  CHECK(o[0] == 0.0);
  CHECK(o[1] == 0.0);
  CHECK(o[2] == 2.0);

  TensorD x2({2});
  x2[0] = -1;
  x2[1] = 2;
  TensorD d({2});
  d[0] = 5;
  d[1] = 7;
  TensorD g = reluBackward(x2, d);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 7.0);
}

TEST_CASE("relu is the identity on positive input") {
  Rng rng(36);
  TensorD x = randn<double>({2, 3, 4}, rng);
  for (Index i = 0; i < x.size(); ++i) x[i] = std::abs(x[i]) + 0.1;
  CHECK(bitIdentical(reluForward(x), x));
  CHECK_THROWS_AS(reluBackward(x, TensorD({2, 3, 5})), std::invalid_argument);
}
