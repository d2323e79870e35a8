#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "ctm/layers.hpp"
#include "ctm/tcc.hpp"
#include "ctm/tensor.hpp"

namespace ctm {

// ---------------------------------------------------------------------------
// Path 1: reduce -> BN -> ReLU -> temporal-channel conv -> BN -> ReLU ->
// restore -> BN(zero-gamma at init). Shape-preserving on (N,T,C1,H,W).
// ---------------------------------------------------------------------------

template <typename Scalar>
struct Tccm {
  Conv1x1<Scalar> reduce;   // C1 -> C2
  BatchNorm<Scalar> bn1;    // C2
  TccKernel<Scalar> tcc;    // per-site 3x3 over the (T,C2) plane
  BatchNorm<Scalar> bn2;    // C2
  Conv1x1<Scalar> restore;  // C2 -> C1
  BatchNorm<Scalar> bn3;    // C1, gamma starts at zero

  static Tccm init(Index c1, Index c2, Index h, Index w, Rng& rng) {
    Tccm p;
    p.reduce = Conv1x1<Scalar>::init(c2, c1, rng);
    p.bn1 = BatchNorm<Scalar>::init(c2);
    p.tcc = TccKernel<Scalar>::init(h, w, rng);
    p.bn2 = BatchNorm<Scalar>::init(c2);
    p.restore = Conv1x1<Scalar>::init(c1, c2, rng);
    p.bn3 = BatchNorm<Scalar>::init(c1, /*zeroGamma=*/true);
    return p;
  }

  Index paramCount() const {
    return reduce.weights.size() + 2 * bn1.channels() + tcc.paramCount() + 2 * bn2.channels() +
           restore.weights.size() + 2 * bn3.channels();
  }
};

// ---------------------------------------------------------------------------
// Path 2: same sandwich with the spatially-shared 3-tap temporal convolution
// in the middle, applied in the permuted (N,C2,T,H,W) layout.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct Path2 {
  Conv1x1<Scalar> reduce;
  BatchNorm<Scalar> bn1;
  TemporalConv3<Scalar> tconv;  // C2 -> C2
  BatchNorm<Scalar> bn2;
  Conv1x1<Scalar> restore;
  BatchNorm<Scalar> bn3;  // gamma starts at zero

  static Path2 init(Index c1, Index c2, Rng& rng) {
    Path2 p;
    p.reduce = Conv1x1<Scalar>::init(c2, c1, rng);
    p.bn1 = BatchNorm<Scalar>::init(c2);
    p.tconv = TemporalConv3<Scalar>::init(c2, c2, rng);
    p.bn2 = BatchNorm<Scalar>::init(c2);
    p.restore = Conv1x1<Scalar>::init(c1, c2, rng);
    p.bn3 = BatchNorm<Scalar>::init(c1, /*zeroGamma=*/true);
    return p;
  }

  Index paramCount() const {
    return reduce.weights.size() + 2 * bn1.channels() + tconv.weights.size() + 2 * bn2.channels() +
           restore.weights.size() + 2 * bn3.channels();
  }
};

template <typename Scalar, typename Fn>
void visitTensors(Tccm<Scalar>& p, const std::string& prefix, Fn&& fn) {
  visitTensors(p.reduce, prefix + ".reduce", fn);
  visitTensors(p.bn1, prefix + ".bn1", fn);
  fn(prefix + ".tcc.weights", p.tcc.weights, ParamRole::Weight);
  visitTensors(p.bn2, prefix + ".bn2", fn);
  visitTensors(p.restore, prefix + ".restore", fn);
  visitTensors(p.bn3, prefix + ".bn3", fn);
}

template <typename Scalar, typename Fn>
void visitTensors(Path2<Scalar>& p, const std::string& prefix, Fn&& fn) {
  visitTensors(p.reduce, prefix + ".reduce", fn);
  visitTensors(p.bn1, prefix + ".bn1", fn);
  visitTensors(p.tconv, prefix + ".tconv", fn);
  visitTensors(p.bn2, prefix + ".bn2", fn);
  visitTensors(p.restore, prefix + ".restore", fn);
  visitTensors(p.bn3, prefix + ".bn3", fn);
}

// Everything a path's backward pass needs from its forward pass.
template <typename Scalar>
struct PathTrace {
  Tensor<Scalar> input;     // path input x
  Tensor<Scalar> preRelu1;  // bn1 output
  Tensor<Scalar> act1;      // relu1 output = temporal-op input
  Tensor<Scalar> preRelu2;  // bn2 output
  Tensor<Scalar> act2;      // relu2 output = restore input
  BnTrace<Scalar> bn1, bn2, bn3;
};

template <typename Scalar>
Tensor<Scalar> tccmForward(const Tensor<Scalar>& x, Tccm<Scalar>& path, Mode mode,
                           PathTrace<Scalar>* trace = nullptr) {
  Tensor<Scalar> a1 = conv1x1Forward(x, path.reduce);
  Tensor<Scalar> a2 = batchnormForward(a1, path.bn1, mode, trace ? &trace->bn1 : nullptr);
  Tensor<Scalar> a3 = reluForward(a2);
  Tensor<Scalar> a4 = tccForwardFast(a3, path.tcc);
  Tensor<Scalar> a5 = batchnormForward(a4, path.bn2, mode, trace ? &trace->bn2 : nullptr);
  Tensor<Scalar> a6 = reluForward(a5);
  Tensor<Scalar> a7 = conv1x1Forward(a6, path.restore);
  Tensor<Scalar> a8 = batchnormForward(a7, path.bn3, mode, trace ? &trace->bn3 : nullptr);
  if (trace) {
    trace->input = x;
    trace->preRelu1 = std::move(a2);
    trace->act1 = std::move(a3);
    trace->preRelu2 = std::move(a5);
    trace->act2 = std::move(a6);
  }
  return a8;
}

template <typename Scalar>
Tensor<Scalar> path2Forward(const Tensor<Scalar>& x, Path2<Scalar>& path, Mode mode,
                            PathTrace<Scalar>* trace = nullptr) {
  Tensor<Scalar> a1 = conv1x1Forward(x, path.reduce);
  Tensor<Scalar> a2 = batchnormForward(a1, path.bn1, mode, trace ? &trace->bn1 : nullptr);
  Tensor<Scalar> a3 = reluForward(a2);
  // (N,T,C,H,W) -> (N,C,T,H,W), 3-tap temporal conv, and back. Swapping the
  // first two non-batch axes is its own inverse.
  Tensor<Scalar> a4 = permute(temporalConv3Forward(permute(a3, {0, 2, 1, 3, 4}), path.tconv), {0, 2, 1, 3, 4});
  Tensor<Scalar> a5 = batchnormForward(a4, path.bn2, mode, trace ? &trace->bn2 : nullptr);
  Tensor<Scalar> a6 = reluForward(a5);
  Tensor<Scalar> a7 = conv1x1Forward(a6, path.restore);
  Tensor<Scalar> a8 = batchnormForward(a7, path.bn3, mode, trace ? &trace->bn3 : nullptr);
  if (trace) {
    trace->input = x;
    trace->preRelu1 = std::move(a2);
    trace->act1 = std::move(a3);
    trace->preRelu2 = std::move(a5);
    trace->act2 = std::move(a6);
  }
  return a8;
}

template <typename Scalar>
struct TccmGrads {
  Tensor<Scalar> dInput;
  Tensor<Scalar> dReduceW, dBn1Gamma, dBn1Beta;
  Tensor<Scalar> dTccW, dBn2Gamma, dBn2Beta;
  Tensor<Scalar> dRestoreW, dBn3Gamma, dBn3Beta;
};

template <typename Scalar>
struct Path2Grads {
  Tensor<Scalar> dInput;
  Tensor<Scalar> dReduceW, dBn1Gamma, dBn1Beta;
  Tensor<Scalar> dTconvW, dBn2Gamma, dBn2Beta;
  Tensor<Scalar> dRestoreW, dBn3Gamma, dBn3Beta;
};

template <typename Scalar>
TccmGrads<Scalar> tccmBackward(const Tccm<Scalar>& path, const PathTrace<Scalar>& trace,
                               const Tensor<Scalar>& dOut) {
  TccmGrads<Scalar> g;
  auto b3 = batchnormBackward(path.bn3, trace.bn3, dOut);
  g.dBn3Gamma = std::move(b3.dGamma);
  g.dBn3Beta = std::move(b3.dBeta);
  auto c2 = conv1x1Backward(trace.act2, path.restore, b3.dInput);
  g.dRestoreW = std::move(c2.dWeights);
  Tensor<Scalar> d5 = reluBackward(trace.preRelu2, c2.dInput);
  auto b2 = batchnormBackward(path.bn2, trace.bn2, d5);
  g.dBn2Gamma = std::move(b2.dGamma);
  g.dBn2Beta = std::move(b2.dBeta);
  auto t = tccBackward(trace.act1, path.tcc, b2.dInput);
  g.dTccW = std::move(t.dWeights);
  Tensor<Scalar> d2 = reluBackward(trace.preRelu1, t.dInput);
  auto b1 = batchnormBackward(path.bn1, trace.bn1, d2);
  g.dBn1Gamma = std::move(b1.dGamma);
  g.dBn1Beta = std::move(b1.dBeta);
  auto c1 = conv1x1Backward(trace.input, path.reduce, b1.dInput);
  g.dReduceW = std::move(c1.dWeights);
  g.dInput = std::move(c1.dInput);
  return g;
}

template <typename Scalar>
Path2Grads<Scalar> path2Backward(const Path2<Scalar>& path, const PathTrace<Scalar>& trace,
                                 const Tensor<Scalar>& dOut) {
  Path2Grads<Scalar> g;
  auto b3 = batchnormBackward(path.bn3, trace.bn3, dOut);
  g.dBn3Gamma = std::move(b3.dGamma);
  g.dBn3Beta = std::move(b3.dBeta);
  auto c2 = conv1x1Backward(trace.act2, path.restore, b3.dInput);
  g.dRestoreW = std::move(c2.dWeights);
  Tensor<Scalar> d5 = reluBackward(trace.preRelu2, c2.dInput);
  auto b2 = batchnormBackward(path.bn2, trace.bn2, d5);
  g.dBn2Gamma = std::move(b2.dGamma);
  g.dBn2Beta = std::move(b2.dBeta);
  auto tc = temporalConv3Backward(permute(trace.act1, {0, 2, 1, 3, 4}), path.tconv,
                                  permute(b2.dInput, {0, 2, 1, 3, 4}));
  g.dTconvW = std::move(tc.dWeights);
  Tensor<Scalar> d2 = reluBackward(trace.preRelu1, permute(tc.dInput, {0, 2, 1, 3, 4}));
  auto b1 = batchnormBackward(path.bn1, trace.bn1, d2);
  g.dBn1Gamma = std::move(b1.dGamma);
  g.dBn1Beta = std::move(b1.dBeta);
  auto c1 = conv1x1Backward(trace.input, path.reduce, b1.dInput);
  g.dReduceW = std::move(c1.dWeights);
  g.dInput = std::move(c1.dInput);
  return g;
}

// ---------------------------------------------------------------------------
// The block: identity shortcut plus the two paths, summed in fixed order.
// ---------------------------------------------------------------------------

enum class CtmVariant { Full, Path1Only, Path2Only };

template <typename Scalar>
struct CtmBlock {
  Index channels = 0;
  Index spatialH = 0;
  Index spatialW = 0;
  std::optional<Tccm<Scalar>> path1;
  std::optional<Path2<Scalar>> path2;

  static CtmBlock init(Index c1, Index c2, Index h, Index w, Rng& rng) {
    if (c1 < 1 || c2 < 1) throw std::invalid_argument("CtmBlock: channel counts must be positive");
    CtmBlock b;
    b.channels = c1;
    b.spatialH = h;
    b.spatialW = w;
    b.path1 = Tccm<Scalar>::init(c1, c2, h, w, rng);
    b.path2 = Path2<Scalar>::init(c1, c2, rng);
    return b;
  }

  Index paramCount() const {
    Index total = 0;
    if (path1) total += path1->paramCount();
    if (path2) total += path2->paramCount();
    return total;
  }
};

template <typename Scalar, typename Fn>
void visitTensors(CtmBlock<Scalar>& b, const std::string& prefix, Fn&& fn) {
  if (b.path1) visitTensors(*b.path1, prefix + ".path1", fn);
  if (b.path2) visitTensors(*b.path2, prefix + ".path2", fn);
}

// A copy of the block with the disabled path structurally removed.
template <typename Scalar>
CtmBlock<Scalar> ablate(const CtmBlock<Scalar>& block, CtmVariant variant) {
  CtmBlock<Scalar> out = block;
  if (variant == CtmVariant::Path1Only) out.path2.reset();
  if (variant == CtmVariant::Path2Only) out.path1.reset();
  return out;
}

template <typename Scalar>
struct CtmBlockTrace {
  std::optional<PathTrace<Scalar>> p1, p2;
};

template <typename Scalar>
void ctmCheckInput(const Tensor<Scalar>& x, const CtmBlock<Scalar>& block) {
  if (x.rank() != 5) throw std::invalid_argument("ctm block: input must be (N,T,C,H,W)");
  if (x.extent(2) != block.channels)
    throw std::invalid_argument("ctm block: input has " + std::to_string(x.extent(2)) +
                                " channels, block is bound to " + std::to_string(block.channels));
  if (x.extent(3) != block.spatialH)
    throw std::invalid_argument("ctm block: input H=" + std::to_string(x.extent(3)) +
                                " does not match the bound extent H=" + std::to_string(block.spatialH) +
                                " (per-site temporal-channel filters are size-specific)");
  if (x.extent(4) != block.spatialW)
    throw std::invalid_argument("ctm block: input W=" + std::to_string(x.extent(4)) +
                                " does not match the bound extent W=" + std::to_string(block.spatialW) +
                                " (per-site temporal-channel filters are size-specific)");
}

template <typename Scalar>
Tensor<Scalar> ctmForward(const Tensor<Scalar>& x, CtmBlock<Scalar>& block, Mode mode,
                          CtmBlockTrace<Scalar>* trace = nullptr) {
  ctmCheckInput(x, block);
  Tensor<Scalar> out = x;
  if (block.path1) {
    if (trace) trace->p1.emplace();
    out = add(out, tccmForward(x, *block.path1, mode, trace ? &*trace->p1 : nullptr));
  }
  if (block.path2) {
    if (trace) trace->p2.emplace();
    out = add(out, path2Forward(x, *block.path2, mode, trace ? &*trace->p2 : nullptr));
  }
  return out;
}

template <typename Scalar>
struct CtmBlockGrads {
  Tensor<Scalar> dInput;
  std::optional<TccmGrads<Scalar>> p1;
  std::optional<Path2Grads<Scalar>> p2;
};

template <typename Scalar>
CtmBlockGrads<Scalar> ctmBackward(const CtmBlock<Scalar>& block, const CtmBlockTrace<Scalar>& trace,
                                  const Tensor<Scalar>& dOut) {
  if (bool(block.path1) != bool(trace.p1) || bool(block.path2) != bool(trace.p2))
    throw std::invalid_argument("ctm backward: trace does not match the block's structure");
  CtmBlockGrads<Scalar> g;
  g.dInput = dOut;  // identity shortcut
  if (block.path1) {
    g.p1 = tccmBackward(*block.path1, *trace.p1, dOut);
    g.dInput = add(g.dInput, g.p1->dInput);
  }
  if (block.path2) {
    g.p2 = path2Backward(*block.path2, *trace.p2, dOut);
    g.dInput = add(g.dInput, g.p2->dInput);
  }
  return g;
}

}  // namespace ctm
