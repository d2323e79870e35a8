// Acceptance gate: nine end-to-end checks covering operator equivalence,
// gradient correctness, identity-at-init, parameter accounting, the desk-scale
// temporal-order experiment, the per-position-vs-shared separation, the fast
// path's speed, and serialization. Prints exactly one [PASS]/[FAIL] line per
// check on stdout (training progress goes to stderr) and exits with the
// number of failures.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ctm/checkpoint.hpp"
#include "ctm/ctm_block.hpp"
#include "ctm/data.hpp"
#include "ctm/network.hpp"
#include "ctm/tcc.hpp"
#include "ctm/train.hpp"

namespace {

using namespace ctm;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;  // appended to the one-line report
};

double seconds(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double relErr(double a, double f) { return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1.0}); }

double sumSquares(const TensorD& t) {
  double s = 0;
  for (Index i = 0; i < t.size(); ++i) s += t[i] * t[i];
  return s;
}

void randomizeTrainables(auto& holder, Rng& rng, auto&&... visitArgs) {
  visitTensors(holder, visitArgs..., [&](const std::string&, TensorD& t, ParamRole role) {
    if (!isTrainable(role)) return;
    for (Index i = 0; i < t.size(); ++i) {
      if (role == ParamRole::BnGamma)
        t[i] = 1.0 + 0.3 * rng.normal();
      else if (role == ParamRole::BnBeta)
        t[i] = 0.2 * rng.normal();
      else
        t[i] = 0.5 * rng.normal();
    }
  });
}

// Central difference of loss() with respect to one scalar slot.
template <typename LossFn>
double fdSlot(double& slot, LossFn&& loss) {
  const double step = 1e-5, saved = slot;
  slot = saved + step;
  const double lp = loss();
  slot = saved - step;
  const double lm = loss();
  slot = saved;
  return (lp - lm) / (2 * step);
}

NetworkConfig tinyTwoStageConfig() {
  NetworkConfig cfg;
  cfg.stageChannels = {4, 8};
  cfg.stageDepths = {1, 1};
  cfg.inputSpatial = {4, 4};
  cfg.numClasses = 3;
  cfg.ctmPlan = {{1, 1}};
  return cfg;
}

// --------------------------------------------------------------------------
// 1. Fast path vs direct loops over the full shape grid.
// --------------------------------------------------------------------------
Outcome criterion1() {
  Rng rng(2024);
  double worst = 0;
  Index shapes = 0;
  for (Index n : {1, 2})
    for (Index t : {2, 4, 8})
      for (Index c : {1, 3, 16})
        for (Index h : {1, 2, 7})
          for (Index w : {1, 2, 7}) {
            ++shapes;
            for (int trial = 0; trial < 20; ++trial) {
              TensorD x = randn<double>({n, t, c, h, w}, rng);
              TccKernel<double> k = TccKernel<double>::init(h, w, rng);
              worst = std::max(worst, maxAbsDiff(tccForwardFast(x, k, {}), tccForwardNaive(x, k, {})));
            }
          }
  return {worst < 1e-12,
          "worst |fast-naive| " + fmt(worst) + " over " + std::to_string(shapes) + " shapes x 20 trials (tol 1e-12)"};
}

// --------------------------------------------------------------------------
// 2. Finite-difference gradient checks, isolated ops then composites.
// --------------------------------------------------------------------------
Outcome criterion2() {
  double worstIso = 0, worstComposite = 0;

  {  // temporal-channel convolution: weights and input
    Rng rng(101);
    TensorD x = randn<double>({2, 3, 4, 2, 2}, rng);
    TccKernel<double> k = TccKernel<double>::init(2, 2, rng);
    auto loss = [&] { return sumSquares(tccForwardFast(x, k, {})); };
    auto g = tccBackward(x, k, scale(tccForwardFast(x, k, {}), 2.0), {});
    for (Index i = 0; i < k.weights.size(); ++i)
      worstIso = std::max(worstIso, relErr(g.dWeights[i], fdSlot(k.weights.data()[i], loss)));
    for (Index i = 0; i < x.size(); ++i)
      worstIso = std::max(worstIso, relErr(g.dInput[i], fdSlot(x.data()[i], loss)));
  }
  {  // pointwise channel mix
    Rng rng(102);
    TensorD x = randn<double>({2, 3, 5, 3, 2}, rng);
    Conv1x1<double> layer = Conv1x1<double>::init(4, 5, rng);
    auto loss = [&] { return sumSquares(conv1x1Forward(x, layer)); };
    auto g = conv1x1Backward(x, layer, scale(conv1x1Forward(x, layer), 2.0));
    for (Index i = 0; i < layer.weights.size(); ++i)
      worstIso = std::max(worstIso, relErr(g.dWeights[i], fdSlot(layer.weights.data()[i], loss)));
    for (Index i = 0; i < x.size(); ++i)
      worstIso = std::max(worstIso, relErr(g.dInput[i], fdSlot(x.data()[i], loss)));
  }
  {  // batch normalization in training mode (fresh copies: stats mutate)
    Rng rng(103);
    TensorD x = randn<double>({2, 3, 4, 2, 2}, rng);
    BatchNorm<double> bn = BatchNorm<double>::init(4);
    randomizeTrainables(bn, rng, "bn");
    auto loss = [&] {
      auto fresh = bn;
      return sumSquares(batchnormForward(x, fresh, Mode::Training));
    };
    auto fresh = bn;
    BnTrace<double> tr;
    TensorD out = batchnormForward(x, fresh, Mode::Training, &tr);
    auto g = batchnormBackward(bn, tr, scale(out, 2.0));
    for (Index i = 0; i < bn.gamma.size(); ++i)
      worstIso = std::max(worstIso, relErr(g.dGamma[i], fdSlot(bn.gamma.data()[i], loss)));
    for (Index i = 0; i < bn.beta.size(); ++i)
      worstIso = std::max(worstIso, relErr(g.dBeta[i], fdSlot(bn.beta.data()[i], loss)));
    for (Index i = 0; i < x.size(); ++i)
      worstIso = std::max(worstIso, relErr(g.dInput[i], fdSlot(x.data()[i], loss)));
  }
  {  // shared three-tap temporal convolution, (N,C,T,H,W) layout
    Rng rng(104);
    TensorD x = randn<double>({2, 3, 6, 2, 2}, rng);
    TemporalConv3<double> layer = TemporalConv3<double>::init(4, 3, rng);
    auto loss = [&] { return sumSquares(temporalConv3Forward(x, layer)); };
    auto g = temporalConv3Backward(x, layer, scale(temporalConv3Forward(x, layer), 2.0));
    for (Index i = 0; i < layer.weights.size(); ++i)
      worstIso = std::max(worstIso, relErr(g.dWeights[i], fdSlot(layer.weights.data()[i], loss)));
    for (Index i = 0; i < x.size(); ++i)
      worstIso = std::max(worstIso, relErr(g.dInput[i], fdSlot(x.data()[i], loss)));
  }
  {  // full two-path block
    Rng rng(105);
    CtmBlock<double> block = CtmBlock<double>::init(8, 2, 2, 2, rng);
    randomizeTrainables(block, rng, "block");
    TensorD x = randn<double>({1, 3, 8, 2, 2}, rng);
    auto loss = [&] {
      auto fresh = block;
      return sumSquares(ctmForward(x, fresh, Mode::Training));
    };
    auto fresh = block;
    CtmBlockTrace<double> tr;
    TensorD out = ctmForward(x, fresh, Mode::Training, &tr);
    auto g = ctmBackward(block, tr, scale(out, 2.0));
    GradStore<double> gs;
    storeTccmGrads(gs, "path1", std::move(*g.p1));
    storePath2Grads(gs, "path2", std::move(*g.p2));
    visitTensors(block, "", [&](const std::string& name, TensorD& t, ParamRole role) {
      if (!isTrainable(role)) return;
      const TensorD& grad = gs.at(name.substr(1));
      for (Index i = 0; i < t.size(); ++i)
        worstComposite = std::max(worstComposite, relErr(grad[i], fdSlot(t.data()[i], loss)));
    });
    for (Index i = 0; i < x.size(); ++i)
      worstComposite = std::max(worstComposite, relErr(g.dInput[i], fdSlot(x.data()[i], loss)));
  }
  {  // two-stage network end to end
    Rng rng(106);
    auto net = buildNetwork<double>(tinyTwoStageConfig(), rng);
    randomizeTrainables(net, rng);
    TensorD x = randn<double>({2, 3, 3, 4, 4}, rng);
    auto loss = [&] {
      auto fresh = net;
      return sumSquares(networkForward(x, fresh, Mode::Training));
    };
    auto fresh = net;
    NetTrace<double> tr;
    TensorD logits = networkForward(x, fresh, Mode::Training, &tr);
    auto g = networkBackward(fresh, tr, scale(logits, 2.0));
    visitTensors(net, [&](const std::string& name, TensorD& t, ParamRole role) {
      if (!isTrainable(role)) return;
      const TensorD& grad = g.store.at(name);
      for (Index i = 0; i < t.size(); ++i)
        worstComposite = std::max(worstComposite, relErr(grad[i], fdSlot(t.data()[i], loss)));
    });
    for (Index i = 0; i < x.size(); ++i)
      worstComposite = std::max(worstComposite, relErr(g.dInput[i], fdSlot(x.data()[i], loss)));
  }

  return {worstIso < 1e-6 && worstComposite < 1e-5,
          "isolated ops worst rel err " + fmt(worstIso) + " (tol 1e-6), block+network worst " +
              fmt(worstComposite) + " (tol 1e-5)"};
}

// --------------------------------------------------------------------------
// 3. Fresh blocks are exact identities; first-batch loss matches baseline.
// --------------------------------------------------------------------------
Outcome criterion3() {
  Rng rng(77);
  Index exact = 0;
  const Index blocks = 100;
  double worst = 0;
  for (Index i = 0; i < blocks; ++i) {
    const Index c1 = 1 + Index(rng.below(12));
    const Index c2 = 1 + Index(rng.below(4));
    const Index h = 1 + Index(rng.below(3));
    const Index w = 1 + Index(rng.below(3));
    const Index n = 1 + Index(rng.below(2));
    const Index t = 2 + Index(rng.below(4));
    CtmBlock<double> block = CtmBlock<double>::init(c1, c2, h, w, rng);
    TensorD x = randn<double>({n, t, c1, h, w}, rng);
    TensorD out = ctmForward(x, block, Mode::Inference);
    if (bitIdentical(out, x))
      ++exact;
    else
      worst = std::max(worst, maxAbsDiff(out, x));
  }

  SyntheticSpec spec;
  spec.trainClipsPerClass = 8;
  spec.valClipsPerClass = 2;
  Rng dataRng(78);
  auto [trainSet, valSet] = genDataset<double>(spec, dataRng);
  NetworkConfig withPlan;
  withPlan.ctmPlan = {{2, 1}, {2, 3}, {2, 5}};
  NetworkConfig base;
  Rng r1(79), r2(79);
  auto netCtm = buildNetwork<double>(withPlan, r1);
  auto netBase = buildNetwork<double>(base, r2);
  const auto order = detail::identityOrder(trainSet.size());
  TensorD clips = detail::gatherClips(trainSet, order, 0, 16);
  std::vector<Index> labels(16);
  for (Index i = 0; i < 16; ++i) labels[std::size_t(i)] = Index(trainSet.labels[std::size_t(i)]);
  const double lossCtm = softmaxCrossEntropy(networkForward(clips, netCtm, Mode::Training), labels).loss;
  const double lossBase = softmaxCrossEntropy(networkForward(clips, netBase, Mode::Training), labels).loss;
  const double lossDiff = std::abs(lossCtm - lossBase);

  return {exact == blocks && lossDiff < 1e-10,
          std::to_string(exact) + "/" + std::to_string(blocks) +
              " blocks bit-exact identities (worst miss " + fmt(worst) + "), starting-loss diff " +
              fmt(lossDiff) + " (tol 1e-10)"};
}

// --------------------------------------------------------------------------
// 4. Parameter counts reproduce the closed forms exactly.
// --------------------------------------------------------------------------
Outcome criterion4() {
  Rng rng(41);
  Index good = 0;
  const Index cases = 50;
  for (Index i = 0; i < cases; ++i) {
    const Index c1 = 1 + Index(rng.below(64));
    const Index reduction = 1 + Index(rng.below(8));
    const Index h = 1 + Index(rng.below(14));
    const Index w = 1 + Index(rng.below(14));
    const Index c2 = std::max<Index>(1, c1 / reduction);
    CtmBlock<double> block = CtmBlock<double>::init(c1, c2, h, w, rng);
    const Index path1 = c1 * c2 + 2 * c2 + 9 * h * w + c2 * c1 + 2 * c2 + 2 * c1;
    const Index path2 = c1 * c2 + 2 * c2 + 3 * c2 * c2 + c2 * c1 + 2 * c2 + 2 * c1;
    if (block.paramCount() == path1 + path2) ++good;
  }

  // Adding one block to the default backbone changes the total by exactly the
  // block's closed form at that stage's width and spatial extent.
  NetworkConfig base;
  NetworkConfig withBlock = base;
  withBlock.ctmPlan = {{2, 1}};
  Rng r1(42), r2(42);
  auto netWith = buildNetwork<double>(withBlock, r1);
  auto netBase = buildNetwork<double>(base, r2);
  const Index delta = countParams(netWith) - countParams(netBase);
  const Index c1 = base.stageChannels[2];
  const Index c2 = std::max<Index>(1, c1 / base.ctmReduction);
  // 32x32 input: stem keeps 32, the 2x2 pool and the three strided stages
  // leading into stage 2 leave a 2x2 map.
  const Index h = 2, w = 2;
  const Index expect = (c1 * c2 + 2 * c2 + 9 * h * w + c2 * c1 + 2 * c2 + 2 * c1) +
                       (c1 * c2 + 2 * c2 + 3 * c2 * c2 + c2 * c1 + 2 * c2 + 2 * c1);
  return {good == cases && delta == expect,
          std::to_string(good) + "/" + std::to_string(cases) + " closed forms exact; one-block delta " +
              std::to_string(delta) + " vs expected " + std::to_string(expect)};
}

// --------------------------------------------------------------------------
// 5 & 6. The desk-scale temporal-order experiment (shared runs).
// --------------------------------------------------------------------------
struct ExperimentMeans {
  double baseline = 0, path1 = 0, path2 = 0, full = 0;
  double secondsC5 = 0, secondsC6 = 0;
  std::string perSeed;
};

ExperimentMeans runExperiment() {
  SyntheticSpec spec;  // 4 classes, 200/50 clips per class, T=8, 32x32
  Rng dataRng(1234);
  auto [trainSet, valSet] = genDataset<float>(spec, dataRng);

  NetworkConfig netCfg;
  netCfg.ctmPlan = {{2, 1}, {2, 3}, {2, 5}};
  TrainConfig trainCfg;  // 30 epochs, batch 16, lr 0.02 with decays at 15/25
  const std::vector<std::uint64_t> seeds{1, 2, 3};

  auto mean = [](const std::vector<AblationRow>& rows, const std::string& variant) {
    double sum = 0;
    Index n = 0;
    for (const auto& r : rows)
      if (r.variant == variant) {
        sum += r.bestValTop1;
        ++n;
      }
    return sum / double(n);
  };

  ExperimentMeans m;
  auto t0 = Clock::now();
  auto rows5 = runAblation(netCfg, trainCfg, trainSet, valSet, {"baseline", "full"}, seeds, &std::cerr);
  m.secondsC5 = seconds(t0);
  t0 = Clock::now();
  auto rows6 = runAblation(netCfg, trainCfg, trainSet, valSet, {"path1", "path2"}, seeds, &std::cerr);
  m.secondsC6 = seconds(t0);

  m.baseline = mean(rows5, "baseline");
  m.full = mean(rows5, "full");
  m.path1 = mean(rows6, "path1");
  m.path2 = mean(rows6, "path2");
  std::ostringstream per;
  per << "per-seed best:";
  for (const auto& r : rows5) per << " " << r.variant << "/" << r.seed << "=" << r.bestValTop1;
  for (const auto& r : rows6) per << " " << r.variant << "/" << r.seed << "=" << r.bestValTop1;
  m.perSeed = per.str();
  return m;
}

// --------------------------------------------------------------------------
// 7. Per-position kernels fit what a shared kernel provably cannot.
// --------------------------------------------------------------------------
Outcome criterion7() {
  const Index n = 4, t = 8, c = 3, h = 2, w = 2;
  Rng rng(7001);
  TensorD x = randn<double>({n, t, c, h, w}, rng);

  // Target: corner (0,0) applies the temporal kernel [1,0,-1] per channel,
  // corner (h-1,w-1) applies [-1,0,+1]; the other positions map to zero.
  TccKernel<double> target(h, w, TensorD({h * w, 1, 3, 3}));
  target.weights(Index{0}, Index{0}, Index{0}, Index{1}) = 1.0;
  target.weights(Index{0}, Index{0}, Index{2}, Index{1}) = -1.0;
  const Index gLast = h * w - 1;
  target.weights(gLast, Index{0}, Index{0}, Index{1}) = -1.0;
  target.weights(gLast, Index{0}, Index{2}, Index{1}) = 1.0;
  TensorD y = tccForwardNaive(x, target, {});
  const double numel = double(y.size());

  // Gradient descent with momentum from a zero kernel bank.
  TccKernel<double> k(h, w, TensorD({h * w, 1, 3, 3}));
  TensorD vel({h * w, 1, 3, 3});
  double mse = 0;
  Index iters = 0;
  const double lr = 0.05, momentum = 0.9;
  for (iters = 0; iters < 5000; ++iters) {
    TensorD out = tccForwardFast(x, k, {});
    TensorD diff = add(out, scale(y, -1.0));
    mse = sumSquares(diff) / numel;
    if (mse < 1e-8) break;
    auto g = tccBackward(x, k, scale(diff, 2.0 / numel), {});
    for (Index i = 0; i < vel.size(); ++i) {
      vel[i] = momentum * vel[i] + g.dWeights[i];
      k.weights[i] -= lr * vel[i];
    }
  }

  // Independent oracle: the best shared three-tap kernel, by least squares.
  // For each output channel, out[n,to,co,h,w] = sum_{ci,d} W[co,ci,d] *
  // x[n,to+d-1,ci,h,w]; the design matrix is shared across output channels.
  const Index rows = n * t * h * w, cols = c * 3;
  Eigen::MatrixXd A(rows, cols);
  Eigen::MatrixXd Y(rows, c);
  Index row = 0;
  for (Index ni = 0; ni < n; ++ni)
    for (Index to = 0; to < t; ++to)
      for (Index hi = 0; hi < h; ++hi)
        for (Index wi = 0; wi < w; ++wi) {
          for (Index ci = 0; ci < c; ++ci)
            for (Index d = 0; d < 3; ++d) {
              const Index ti = to + d - 1;
              A(row, ci * 3 + d) =
                  (ti < 0 || ti >= t) ? 0.0 : x[(((ni * t + ti) * c + ci) * h + hi) * w + wi];
            }
          for (Index co = 0; co < c; ++co)
            Y(row, co) = y[(((ni * t + to) * c + co) * h + hi) * w + wi];
          ++row;
        }
  Eigen::MatrixXd coef = A.colPivHouseholderQr().solve(Y);
  const double sharedMse = (A * coef - Y).squaredNorm() / numel;

  return {mse < 1e-6 && sharedMse > 0.1,
          "per-position fit MSE " + fmt(mse) + " after " + std::to_string(iters) +
              " steps (tol 1e-6); best shared-kernel MSE " + fmt(sharedMse) + " (must exceed 0.1)"};
}

// --------------------------------------------------------------------------
// 8. Fast path beats the direct loops on the reference shape.
// --------------------------------------------------------------------------
Outcome criterion8() {
  Rng rng(31337);
  TensorD x = randn<double>({1, 8, 64, 14, 14}, rng);
  TccKernel<double> k = TccKernel<double>::init(14, 14, rng);
  auto median = [&](auto&& fn) {
    std::vector<double> ms;
    for (int r = 0; r < 9; ++r) {
      const auto t0 = Clock::now();
      TensorD out = fn();
      ms.push_back(seconds(t0) * 1e3 + 0 * out[0]);
    }
    std::sort(ms.begin(), ms.end());
    return ms[ms.size() / 2];
  };
  const double naiveMs = median([&] { return tccForwardNaive(x, k, {}); });
  const double fastMs = median([&] { return tccForwardFast(x, k, {}); });
  const double ratio = naiveMs / fastMs;
  return {fastMs < naiveMs, "median fast " + fmt(fastMs) + " ms vs naive " + fmt(naiveMs) +
                                " ms on (8,64,14,14); ratio " + fmt(ratio) +
                                "x (2x is informational, report-only)"};
}

// --------------------------------------------------------------------------
// 9. Save -> load -> forward is bit-identical.
// --------------------------------------------------------------------------
Outcome criterion9() {
  Rng rng(91);
  const std::string path =
      (std::filesystem::temp_directory_path() / "ctm_acceptance_roundtrip.ckpt").string();
  Index good = 0;
  const Index cases = 20;
  for (Index i = 0; i < cases; ++i) {
    NetworkConfig cfg;
    const Index stages = 1 + Index(rng.below(2));
    cfg.stageChannels.clear();
    cfg.stageDepths.clear();
    for (Index s = 0; s < stages; ++s) {
      cfg.stageChannels.push_back(2 * (1 + Index(rng.below(4))));
      cfg.stageDepths.push_back(1 + Index(rng.below(2)));
    }
    cfg.inputSpatial = {4, 4};
    cfg.numClasses = 2 + Index(rng.below(4));
    cfg.ctmPlan.clear();
    if (rng.below(2) == 1) {
      const Index s = Index(rng.below(std::uint64_t(stages)));
      const Index p = Index(rng.below(std::uint64_t(cfg.stageDepths[std::size_t(s)] + 1)));
      cfg.ctmPlan.push_back({s, p});
    }
    Rng buildRng(1000 + std::uint64_t(i));
    auto net = buildNetwork<double>(cfg, buildRng);
    const Index t = 2 + Index(rng.below(3));
    TensorD warm = randn<double>({2, t, 3, 4, 4}, rng);
    networkForward(warm, net, Mode::Training);  // move the running statistics
    saveCheckpoint(net, path);
    auto loaded = loadCheckpoint<double>(path);
    TensorD probe = randn<double>({2, t, 3, 4, 4}, rng);
    TensorD a = networkForward(probe, net, Mode::Inference);
    TensorD b = networkForward(probe, loaded, Mode::Inference);
    if (bitIdentical(a, b)) ++good;
  }
  std::filesystem::remove(path);
  return {good == cases,
          std::to_string(good) + "/" + std::to_string(cases) + " round-trips forward bit-identically"};
}

void report(int num, const std::string& name, const Outcome& o, double secs, double limitSecs,
            int& failures) {
  const bool withinLimit = limitSecs <= 0 || secs < limitSecs;
  const bool pass = o.pass && withinLimit;
  if (!pass) ++failures;
  std::ostringstream line;
  line << (pass ? "[PASS] " : "[FAIL] ") << num << ". " << name << ": " << o.detail << " [" << fmt(secs)
       << "s";
  if (limitSecs > 0) line << ", limit " << fmt(limitSecs) << "s";
  if (!withinLimit) line << " EXCEEDED";
  line << "]";
  std::cout << line.str() << std::endl;
}

}  // namespace

int main() {
  int failures = 0;
  auto run = [&](int num, const std::string& name, auto&& fn, double limitSecs) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    report(num, name, o, seconds(t0), limitSecs, failures);
  };

  run(1, "fast path matches the direct loops", criterion1, 60);
  run(2, "analytic gradients match finite differences", criterion2, 300);
  run(3, "fresh blocks are exact identities", criterion3, 60);
  run(4, "parameter counts match the closed forms", criterion4, 60);

  // Criteria 5 and 6 share the experiment; training progress goes to stderr.
  ExperimentMeans m;
  std::string experimentError;
  try {
    m = runExperiment();
  } catch (const std::exception& e) {
    experimentError = e.what();
  }
  if (!experimentError.empty()) {
    report(5, "temporal-order experiment", {false, "exception: " + experimentError}, 0, 1800, failures);
    report(6, "ablation ordering", {false, "exception: " + experimentError}, 0, 0, failures);
  } else {
    std::cerr << m.perSeed << "\n";
    report(5, "temporal-order experiment",
           {m.baseline <= 0.35 && m.full >= 0.90,
            "mean val top-1: baseline " + fmt(m.baseline) + " (must stay <= 0.35), full " + fmt(m.full) +
                " (must reach >= 0.90), 3 seeds x 30 epochs"},
           m.secondsC5, 1800, failures);
    report(6, "ablation ordering",
           {m.full >= std::max(m.path1, m.path2) - 0.02 && m.path1 >= m.baseline + 0.20 &&
                m.path2 >= m.baseline + 0.20,
            "means: full " + fmt(m.full) + " >= max(path1 " + fmt(m.path1) + ", path2 " + fmt(m.path2) +
                ") - 0.02, and both single paths >= baseline " + fmt(m.baseline) + " + 0.20"},
           m.secondsC6, 0, failures);
  }

  run(7, "per-position kernels beat any shared kernel", criterion7, 120);
  run(8, "fast path is faster than the direct loops", criterion8, 0);
  run(9, "checkpoints round-trip bit-exactly", criterion9, 60);

  if (failures == 0)
    std::cout << "all 9 acceptance checks passed" << std::endl;
  else
    std::cout << failures << " acceptance check(s) FAILED" << std::endl;
  return failures;
}
