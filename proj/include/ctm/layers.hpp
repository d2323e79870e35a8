#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "ctm/tensor.hpp"

namespace ctm {

enum class Mode { Training, Inference };

// Role tags let generic visitors decide how to treat each tensor: the
// optimizer updates everything except RunningStat, weight decay applies to
// Weight/Bias only, and parameter counting skips RunningStat.
enum class ParamRole { Weight, Bias, BnGamma, BnBeta, RunningStat };

constexpr bool isTrainable(ParamRole role) { return role != ParamRole::RunningStat; }
constexpr bool decaysWeight(ParamRole role) {
  return role == ParamRole::Weight || role == ParamRole::Bias;
}

namespace detail {

template <typename Scalar>
using MatRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MapRM = Eigen::Map<MatRM<Scalar>>;
template <typename Scalar>
using CMapRM = Eigen::Map<const MatRM<Scalar>>;
template <typename Scalar>
using StridedCMapRM = Eigen::Map<const MatRM<Scalar>, 0, Eigen::OuterStride<>>;
template <typename Scalar>
using StridedMapRM = Eigen::Map<MatRM<Scalar>, 0, Eigen::OuterStride<>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// 1x1 convolution: a channel-mixing matrix applied at every (n,t,h,w) site.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct Conv1x1 {
  Tensor<Scalar> weights;  // (C_out, C_in)
  Tensor<Scalar> bias;     // (C_out) or empty for none

  bool hasBias() const { return bias.size() > 0; }
  Index outChannels() const { return weights.extent(0); }
  Index inChannels() const { return weights.extent(1); }

  static Conv1x1 init(Index cOut, Index cIn, Rng& rng, bool withBias = false) {
    Conv1x1 layer;
    layer.weights = randn<Scalar>({cOut, cIn}, rng, std::sqrt(2.0 / double(cIn)));
    if (withBias) layer.bias = Tensor<Scalar>({cOut});
    return layer;
  }

  static Conv1x1 identity(Index c) {
    Conv1x1 layer;
    layer.weights = Tensor<Scalar>({c, c});
    for (Index i = 0; i < c; ++i) layer.weights(i, i) = Scalar(1);
    return layer;
  }
};

template <typename Scalar, typename Fn>
void visitTensors(Conv1x1<Scalar>& layer, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".weights", layer.weights, ParamRole::Weight);
  if (layer.hasBias()) fn(prefix + ".bias", layer.bias, ParamRole::Bias);
}

template <typename Scalar>
Tensor<Scalar> conv1x1Forward(const Tensor<Scalar>& x, const Conv1x1<Scalar>& layer) {
  if (x.rank() != 5) throw std::invalid_argument("conv1x1: input must be (N,T,C,H,W)");
  const Index n = x.extent(0), t = x.extent(1), c = x.extent(2), h = x.extent(3), w = x.extent(4);
  if (c != layer.inChannels())
    throw std::invalid_argument("conv1x1: input has " + std::to_string(c) + " channels, layer expects " +
                                std::to_string(layer.inChannels()));
  const Index cOut = layer.outChannels(), hw = h * w;
  Tensor<Scalar> out({n, t, cOut, h, w});
  detail::CMapRM<Scalar> wm(layer.weights.data(), cOut, c);
  for (Index nt = 0; nt < n * t; ++nt) {
    detail::CMapRM<Scalar> xm(x.data() + nt * c * hw, c, hw);
    detail::MapRM<Scalar> om(out.data() + nt * cOut * hw, cOut, hw);
    om.noalias() = wm * xm;
    if (layer.hasBias())
      for (Index co = 0; co < cOut; ++co) om.row(co).array() += layer.bias[co];
  }
  return out;
}

template <typename Scalar>
struct Conv1x1Gradients {
  Tensor<Scalar> dInput;
  Tensor<Scalar> dWeights;
  Tensor<Scalar> dBias;  // empty when the layer has no bias
};

template <typename Scalar>
Conv1x1Gradients<Scalar> conv1x1Backward(const Tensor<Scalar>& x, const Conv1x1<Scalar>& layer,
                                         const Tensor<Scalar>& dOut) {
  const Index n = x.extent(0), t = x.extent(1), c = x.extent(2), h = x.extent(3), w = x.extent(4);
  const Index cOut = layer.outChannels(), hw = h * w;
  if (dOut.shape() != Shape{n, t, cOut, h, w})
    throw std::invalid_argument("conv1x1Backward: dOut shape " + shapeToString(dOut.shape()) +
                                " inconsistent with input " + shapeToString(x.shape()));
  Conv1x1Gradients<Scalar> g;
  g.dInput = Tensor<Scalar>(x.shape());
  g.dWeights = Tensor<Scalar>(layer.weights.shape());
  if (layer.hasBias()) g.dBias = Tensor<Scalar>(layer.bias.shape());

  detail::CMapRM<Scalar> wm(layer.weights.data(), cOut, c);
  detail::MapRM<Scalar> dwm(g.dWeights.data(), cOut, c);
  for (Index nt = 0; nt < n * t; ++nt) {
    detail::CMapRM<Scalar> xm(x.data() + nt * c * hw, c, hw);
    detail::CMapRM<Scalar> dom(dOut.data() + nt * cOut * hw, cOut, hw);
    detail::MapRM<Scalar> dxm(g.dInput.data() + nt * c * hw, c, hw);
    dxm.noalias() = wm.transpose() * dom;
    dwm.noalias() += dom * xm.transpose();
    if (layer.hasBias())
      for (Index co = 0; co < cOut; ++co) g.dBias[co] += dom.row(co).sum();
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization over (N,T,H,W) per channel.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct BatchNorm {
  Tensor<Scalar> gamma;        // (C)
  Tensor<Scalar> beta;         // (C)
  Tensor<Scalar> runningMean;  // (C)
  Tensor<Scalar> runningVar;   // (C)
  Scalar eps = Scalar(1e-5);
  Scalar momentum = Scalar(0.1);

  Index channels() const { return gamma.extent(0); }

  // zeroGamma = true gives the "starts as a zero map" variant used by the
  // last normalization of each residual path.
  static BatchNorm init(Index c, bool zeroGamma = false) {
    BatchNorm layer;
    layer.gamma = zeroGamma ? Tensor<Scalar>({c}) : Tensor<Scalar>::constant({c}, Scalar(1));
    layer.beta = Tensor<Scalar>({c});
    layer.runningMean = Tensor<Scalar>({c});
    layer.runningVar = Tensor<Scalar>::constant({c}, Scalar(1));
    return layer;
  }
};

template <typename Scalar, typename Fn>
void visitTensors(BatchNorm<Scalar>& layer, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".gamma", layer.gamma, ParamRole::BnGamma);
  fn(prefix + ".beta", layer.beta, ParamRole::BnBeta);
  fn(prefix + ".running_mean", layer.runningMean, ParamRole::RunningStat);
  fn(prefix + ".running_var", layer.runningVar, ParamRole::RunningStat);
}

// What the backward pass needs from the forward pass.
template <typename Scalar>
struct BnTrace {
  Tensor<Scalar> xhat;  // normalized activations, same shape as the input
  Tensor<Scalar> istd;  // per-channel 1/sqrt(var + eps) actually used
  Mode mode = Mode::Training;
};

template <typename Scalar>
Tensor<Scalar> batchnormForward(const Tensor<Scalar>& x, BatchNorm<Scalar>& layer, Mode mode,
                                BnTrace<Scalar>* trace = nullptr) {
  if (x.rank() != 5) throw std::invalid_argument("batchnorm: input must be (N,T,C,H,W)");
  const Index n = x.extent(0), t = x.extent(1), c = x.extent(2), h = x.extent(3), w = x.extent(4);
  if (c != layer.channels())
    throw std::invalid_argument("batchnorm: input has " + std::to_string(c) + " channels, layer has " +
                                std::to_string(layer.channels()));
  const Index hw = h * w;
  const Index m = n * t * hw;  // samples per channel

  using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  Vec mean(c), istd(c);
  if (mode == Mode::Training) {
    if (m < 2)
      throw std::invalid_argument("batchnorm: training needs at least 2 samples per channel, got " +
                                  std::to_string(m));
    Vec sum = Vec::Zero(c), sumSq = Vec::Zero(c);
    for (Index nt = 0; nt < n * t; ++nt) {
      detail::CMapRM<Scalar> plane(x.data() + nt * c * hw, c, hw);
      sum += plane.rowwise().sum().array();
      sumSq += plane.array().square().rowwise().sum();
    }
    mean = sum / Scalar(m);
    Vec varBiased = sumSq / Scalar(m) - mean.square();
    varBiased = varBiased.max(Scalar(0));  // guard tiny negative round-off
    istd = (varBiased + layer.eps).rsqrt();
    // Running statistics keep the unbiased variance, m/(m-1).
    const Vec varUnbiased = varBiased * (Scalar(m) / Scalar(m - 1));
    for (Index ci = 0; ci < c; ++ci) {
      layer.runningMean[ci] = (Scalar(1) - layer.momentum) * layer.runningMean[ci] + layer.momentum * mean[ci];
      layer.runningVar[ci] = (Scalar(1) - layer.momentum) * layer.runningVar[ci] + layer.momentum * varUnbiased[ci];
    }
  } else {
    for (Index ci = 0; ci < c; ++ci) {
      mean[ci] = layer.runningMean[ci];
      istd[ci] = Scalar(1) / std::sqrt(layer.runningVar[ci] + layer.eps);
    }
  }

  Tensor<Scalar> out(x.shape());
  Tensor<Scalar> xhat(x.shape());
  for (Index nt = 0; nt < n * t; ++nt) {
    detail::CMapRM<Scalar> plane(x.data() + nt * c * hw, c, hw);
    detail::MapRM<Scalar> xh(xhat.data() + nt * c * hw, c, hw);
    detail::MapRM<Scalar> om(out.data() + nt * c * hw, c, hw);
    for (Index ci = 0; ci < c; ++ci) {
      xh.row(ci) = (plane.row(ci).array() - mean[ci]) * istd[ci];
      om.row(ci) = xh.row(ci).array() * layer.gamma[ci] + layer.beta[ci];
    }
  }
  if (trace) {
    trace->xhat = std::move(xhat);
    trace->istd = Tensor<Scalar>({c});
    for (Index ci = 0; ci < c; ++ci) trace->istd[ci] = istd[ci];
    trace->mode = mode;
  }
  return out;
}

template <typename Scalar>
struct BnGradients {
  Tensor<Scalar> dInput;
  Tensor<Scalar> dGamma;
  Tensor<Scalar> dBeta;
};

// Training mode differentiates through the batch statistics; inference mode
// treats the running statistics as constants.
template <typename Scalar>
BnGradients<Scalar> batchnormBackward(const BatchNorm<Scalar>& layer, const BnTrace<Scalar>& trace,
                                      const Tensor<Scalar>& dOut) {
  const Tensor<Scalar>& xhat = trace.xhat;
  if (dOut.shape() != xhat.shape())
    throw std::invalid_argument("batchnormBackward: dOut shape " + shapeToString(dOut.shape()) +
                                " does not match traced activations " + shapeToString(xhat.shape()));
  const Index n = xhat.extent(0), t = xhat.extent(1), c = xhat.extent(2);
  const Index hw = xhat.extent(3) * xhat.extent(4);
  const Index m = n * t * hw;

  using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  Vec dBeta = Vec::Zero(c), dGamma = Vec::Zero(c);
  for (Index nt = 0; nt < n * t; ++nt) {
    detail::CMapRM<Scalar> dom(dOut.data() + nt * c * hw, c, hw);
    detail::CMapRM<Scalar> xh(xhat.data() + nt * c * hw, c, hw);
    dBeta += dom.rowwise().sum().array();
    dGamma += (dom.array() * xh.array()).rowwise().sum();
  }

  BnGradients<Scalar> g;
  g.dInput = Tensor<Scalar>(xhat.shape());
  g.dGamma = Tensor<Scalar>({c});
  g.dBeta = Tensor<Scalar>({c});
  for (Index ci = 0; ci < c; ++ci) {
    g.dGamma[ci] = dGamma[ci];
    g.dBeta[ci] = dBeta[ci];
  }

  for (Index nt = 0; nt < n * t; ++nt) {
    detail::CMapRM<Scalar> dom(dOut.data() + nt * c * hw, c, hw);
    detail::CMapRM<Scalar> xh(xhat.data() + nt * c * hw, c, hw);
    detail::MapRM<Scalar> dxm(g.dInput.data() + nt * c * hw, c, hw);
    for (Index ci = 0; ci < c; ++ci) {
      const Scalar scale = layer.gamma[ci] * trace.istd[ci];
      if (trace.mode == Mode::Training) {
        dxm.row(ci) = scale * (dom.row(ci).array() -
                               (dBeta[ci] + xh.row(ci).array() * dGamma[ci]) / Scalar(m));
      } else {
        dxm.row(ci) = scale * dom.row(ci).array();
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// 3-tap temporal convolution, weights shared across every spatial position.
// Operates in the permuted (N,C,T,H,W) layout.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct TemporalConv3 {
  Tensor<Scalar> weights;  // (C_out, C_in, 3)

  Index outChannels() const { return weights.extent(0); }
  Index inChannels() const { return weights.extent(1); }

  static TemporalConv3 init(Index cOut, Index cIn, Rng& rng) {
    TemporalConv3 layer;
    layer.weights = randn<Scalar>({cOut, cIn, 3}, rng, std::sqrt(2.0 / double(3 * cIn)));
    return layer;
  }

  static TemporalConv3 identity(Index c) {
    TemporalConv3 layer;
    layer.weights = Tensor<Scalar>({c, c, 3});
    for (Index i = 0; i < c; ++i) layer.weights(i, i, Index{1}) = Scalar(1);
    return layer;
  }
};

template <typename Scalar, typename Fn>
void visitTensors(TemporalConv3<Scalar>& layer, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".weights", layer.weights, ParamRole::Weight);
}

template <typename Scalar>
Tensor<Scalar> temporalConv3Forward(const Tensor<Scalar>& x, const TemporalConv3<Scalar>& layer,
                                    Index padT = 1) {
  if (x.rank() != 5) throw std::invalid_argument("temporalConv3: input must be (N,C,T,H,W)");
  const Index n = x.extent(0), c = x.extent(1), t = x.extent(2), h = x.extent(3), w = x.extent(4);
  if (c != layer.inChannels())
    throw std::invalid_argument("temporalConv3: input has " + std::to_string(c) + " channels, layer expects " +
                                std::to_string(layer.inChannels()));
  if (padT < 0) throw std::invalid_argument("temporalConv3: negative padding");
  const Index cOut = layer.outChannels(), hw = h * w;
  const Index ot = t + 2 * padT - 2;
  if (ot < 1) throw std::invalid_argument("temporalConv3: 3-tap window does not fit padded T=" + std::to_string(t));

  Tensor<Scalar> out({n, cOut, ot, h, w});
  for (Index ni = 0; ni < n; ++ni) {
    const Scalar* xBase = x.data() + ni * c * t * hw;
    Scalar* oBase = out.data() + ni * cOut * ot * hw;
    for (Index to = 0; to < ot; ++to) {
      detail::StridedMapRM<Scalar> om(oBase + to * hw, cOut, hw, Eigen::OuterStride<>(ot * hw));
      om.setZero();
      for (Index d = 0; d < 3; ++d) {
        const Index ti = to + d - padT;
        if (ti < 0 || ti >= t) continue;
        detail::StridedCMapRM<Scalar> xm(xBase + ti * hw, c, hw, Eigen::OuterStride<>(t * hw));
        for (Index co = 0; co < cOut; ++co)
          for (Index ci = 0; ci < c; ++ci)
            om.row(co).noalias() += layer.weights[(co * c + ci) * 3 + d] * xm.row(ci);
      }
    }
  }
  return out;
}

template <typename Scalar>
struct TemporalConv3Gradients {
  Tensor<Scalar> dInput;
  Tensor<Scalar> dWeights;
};

template <typename Scalar>
TemporalConv3Gradients<Scalar> temporalConv3Backward(const Tensor<Scalar>& x,
                                                     const TemporalConv3<Scalar>& layer,
                                                     const Tensor<Scalar>& dOut, Index padT = 1) {
  const Index n = x.extent(0), c = x.extent(1), t = x.extent(2), h = x.extent(3), w = x.extent(4);
  const Index cOut = layer.outChannels(), hw = h * w;
  const Index ot = t + 2 * padT - 2;
  if (dOut.shape() != Shape{n, cOut, ot, h, w})
    throw std::invalid_argument("temporalConv3Backward: dOut shape " + shapeToString(dOut.shape()) +
                                " inconsistent with input " + shapeToString(x.shape()));
  TemporalConv3Gradients<Scalar> g;
  g.dInput = Tensor<Scalar>(x.shape());
  g.dWeights = Tensor<Scalar>(layer.weights.shape());

  for (Index ni = 0; ni < n; ++ni) {
    const Scalar* xBase = x.data() + ni * c * t * hw;
    const Scalar* dBase = dOut.data() + ni * cOut * ot * hw;
    Scalar* dxBase = g.dInput.data() + ni * c * t * hw;
    for (Index to = 0; to < ot; ++to) {
      detail::StridedCMapRM<Scalar> dom(dBase + to * hw, cOut, hw, Eigen::OuterStride<>(ot * hw));
      for (Index d = 0; d < 3; ++d) {
        const Index ti = to + d - padT;
        if (ti < 0 || ti >= t) continue;
        detail::StridedMapRM<Scalar> dxm(dxBase + ti * hw, c, hw, Eigen::OuterStride<>(t * hw));
        detail::StridedCMapRM<Scalar> xm(xBase + ti * hw, c, hw, Eigen::OuterStride<>(t * hw));
        for (Index co = 0; co < cOut; ++co)
          for (Index ci = 0; ci < c; ++ci) {
            const Scalar wv = layer.weights[(co * c + ci) * 3 + d];
            dxm.row(ci).noalias() += wv * dom.row(co);
            g.dWeights[(co * c + ci) * 3 + d] += dom.row(co).dot(xm.row(ci));
          }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// ReLU.
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> reluForward(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  for (Index i = 0; i < x.size(); ++i) out[i] = x[i] > Scalar(0) ? x[i] : Scalar(0);
  return out;
}

template <typename Scalar>
Tensor<Scalar> reluBackward(const Tensor<Scalar>& x, const Tensor<Scalar>& dOut) {
  if (!x.sameShape(dOut))
    throw std::invalid_argument("reluBackward: shape mismatch between activations and dOut");
  Tensor<Scalar> g(x.shape());
  for (Index i = 0; i < x.size(); ++i) g[i] = x[i] > Scalar(0) ? dOut[i] : Scalar(0);
  return g;
}

}  // namespace ctm
