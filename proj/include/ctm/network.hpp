#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ctm/ctm_block.hpp"
#include "ctm/layers.hpp"
#include "ctm/tensor.hpp"

namespace ctm {

// ---------------------------------------------------------------------------
// k x k spatial convolution applied to every frame independently.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct SpatialConv {
  Tensor<Scalar> weights;  // (C_out, C_in, k, k)
  Index stride = 1;
  Index pad = 1;

  Index outChannels() const { return weights.extent(0); }
  Index inChannels() const { return weights.extent(1); }
  Index kernel() const { return weights.extent(2); }

  static SpatialConv init(Index cOut, Index cIn, Index k, Index stride, Index pad, Rng& rng) {
    SpatialConv conv;
    conv.weights = randn<Scalar>({cOut, cIn, k, k}, rng, std::sqrt(2.0 / double(cIn * k * k)));
    conv.stride = stride;
    conv.pad = pad;
    return conv;
  }
};

template <typename Scalar, typename Fn>
void visitTensors(SpatialConv<Scalar>& conv, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".weights", conv.weights, ParamRole::Weight);
}

inline Index convOutExtent(Index in, Index k, Index stride, Index pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

// Unrolls one frame (C,H,W) into a (C*k*k, oh*ow) patch matrix.
template <typename Scalar>
void im2col(const Scalar* frame, Index c, Index h, Index w, Index k, Index stride, Index pad,
            Index oh, Index ow, MatRM<Scalar>& col) {
  for (Index ci = 0; ci < c; ++ci)
    for (Index ka = 0; ka < k; ++ka)
      for (Index kb = 0; kb < k; ++kb) {
        Scalar* row = col.data() + ((ci * k + ka) * k + kb) * (oh * ow);
        for (Index oi = 0; oi < oh; ++oi) {
          const Index ih = oi * stride + ka - pad;
          Scalar* dst = row + oi * ow;
          if (ih < 0 || ih >= h) {
            std::fill(dst, dst + ow, Scalar(0));
            continue;
          }
          const Scalar* src = frame + (ci * h + ih) * w;
          for (Index oj = 0; oj < ow; ++oj) {
            const Index iw = oj * stride + kb - pad;
            dst[oj] = (iw >= 0 && iw < w) ? src[iw] : Scalar(0);
          }
        }
      }
}

// Adjoint of im2col: scatter-adds patch-matrix gradients back onto the frame.
template <typename Scalar>
void col2im(const MatRM<Scalar>& col, Index c, Index h, Index w, Index k, Index stride, Index pad,
            Index oh, Index ow, Scalar* frame) {
  for (Index ci = 0; ci < c; ++ci)
    for (Index ka = 0; ka < k; ++ka)
      for (Index kb = 0; kb < k; ++kb) {
        const Scalar* row = col.data() + ((ci * k + ka) * k + kb) * (oh * ow);
        for (Index oi = 0; oi < oh; ++oi) {
          const Index ih = oi * stride + ka - pad;
          if (ih < 0 || ih >= h) continue;
          Scalar* dst = frame + (ci * h + ih) * w;
          const Scalar* src = row + oi * ow;
          for (Index oj = 0; oj < ow; ++oj) {
            const Index iw = oj * stride + kb - pad;
            if (iw >= 0 && iw < w) dst[iw] += src[oj];
          }
        }
      }
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> spatialConvForward(const Tensor<Scalar>& x, const SpatialConv<Scalar>& conv) {
  if (x.rank() != 5) throw std::invalid_argument("spatialConv: input must be (N,T,C,H,W)");
  const Index n = x.extent(0), t = x.extent(1), c = x.extent(2), h = x.extent(3), w = x.extent(4);
  if (c != conv.inChannels())
    throw std::invalid_argument("spatialConv: input has " + std::to_string(c) + " channels, layer expects " +
                                std::to_string(conv.inChannels()));
  const Index k = conv.kernel(), cOut = conv.outChannels();
  const Index oh = convOutExtent(h, k, conv.stride, conv.pad);
  const Index ow = convOutExtent(w, k, conv.stride, conv.pad);
  if (oh < 1 || ow < 1)
    throw std::invalid_argument("spatialConv: kernel does not fit the padded " + std::to_string(h) + "x" +
                                std::to_string(w) + " input");

  Tensor<Scalar> out({n, t, cOut, oh, ow});
  detail::MatRM<Scalar> col(c * k * k, oh * ow);
  detail::CMapRM<Scalar> wf(conv.weights.data(), cOut, c * k * k);
  for (Index nt = 0; nt < n * t; ++nt) {
    detail::im2col(x.data() + nt * c * h * w, c, h, w, k, conv.stride, conv.pad, oh, ow, col);
    detail::MapRM<Scalar> om(out.data() + nt * cOut * oh * ow, cOut, oh * ow);
    om.noalias() = wf * col;
  }
  return out;
}

template <typename Scalar>
struct SpatialConvGradients {
  Tensor<Scalar> dInput;
  Tensor<Scalar> dWeights;
};

template <typename Scalar>
SpatialConvGradients<Scalar> spatialConvBackward(const Tensor<Scalar>& x, const SpatialConv<Scalar>& conv,
                                                 const Tensor<Scalar>& dOut) {
  const Index n = x.extent(0), t = x.extent(1), c = x.extent(2), h = x.extent(3), w = x.extent(4);
  const Index k = conv.kernel(), cOut = conv.outChannels();
  const Index oh = convOutExtent(h, k, conv.stride, conv.pad);
  const Index ow = convOutExtent(w, k, conv.stride, conv.pad);
  if (dOut.shape() != Shape{n, t, cOut, oh, ow})
    throw std::invalid_argument("spatialConvBackward: dOut shape " + shapeToString(dOut.shape()) +
                                " inconsistent with input " + shapeToString(x.shape()));

  SpatialConvGradients<Scalar> g;
  g.dInput = Tensor<Scalar>(x.shape());
  g.dWeights = Tensor<Scalar>(conv.weights.shape());
  detail::MatRM<Scalar> col(c * k * k, oh * ow);
  detail::MatRM<Scalar> dcol(c * k * k, oh * ow);
  detail::CMapRM<Scalar> wf(conv.weights.data(), cOut, c * k * k);
  detail::MapRM<Scalar> dwf(g.dWeights.data(), cOut, c * k * k);
  for (Index nt = 0; nt < n * t; ++nt) {
    detail::im2col(x.data() + nt * c * h * w, c, h, w, k, conv.stride, conv.pad, oh, ow, col);
    detail::CMapRM<Scalar> dom(dOut.data() + nt * cOut * oh * ow, cOut, oh * ow);
    dwf.noalias() += dom * col.transpose();
    dcol.noalias() = wf.transpose() * dom;
    detail::col2im(dcol, c, h, w, k, conv.stride, conv.pad, oh, ow, g.dInput.data() + nt * c * h * w);
  }
  return g;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2.
// ---------------------------------------------------------------------------

struct PoolTrace {
  std::vector<Index> argmax;  // flat input index chosen for each output cell
  Shape inShape;
};

template <typename Scalar>
Tensor<Scalar> maxPool2x2Forward(const Tensor<Scalar>& x, PoolTrace* trace = nullptr) {
  if (x.rank() != 5) throw std::invalid_argument("maxPool2x2: input must be (N,T,C,H,W)");
  const Index h = x.extent(3), w = x.extent(4);
  if (h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("maxPool2x2: spatial extents must be even and at least 2, got " +
                                std::to_string(h) + "x" + std::to_string(w));
  const Index planes = x.extent(0) * x.extent(1) * x.extent(2);
  const Index oh = h / 2, ow = w / 2;
  Tensor<Scalar> out({x.extent(0), x.extent(1), x.extent(2), oh, ow});
  if (trace) {
    trace->argmax.assign(std::size_t(out.size()), 0);
    trace->inShape = x.shape();
  }
  for (Index p = 0; p < planes; ++p) {
    const Scalar* in = x.data() + p * h * w;
    Scalar* o = out.data() + p * oh * ow;
    for (Index oi = 0; oi < oh; ++oi)
      for (Index oj = 0; oj < ow; ++oj) {
        // Fixed scan order; first maximum wins ties.
        Index best = (2 * oi) * w + 2 * oj;
        Scalar bv = in[best];
        for (Index di = 0; di < 2; ++di)
          for (Index dj = 0; dj < 2; ++dj) {
            const Index idx = (2 * oi + di) * w + (2 * oj + dj);
            if (in[idx] > bv) {
              bv = in[idx];
              best = idx;
            }
          }
        o[oi * ow + oj] = bv;
        if (trace) trace->argmax[std::size_t(p * oh * ow + oi * ow + oj)] = p * h * w + best;
      }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> maxPool2x2Backward(const PoolTrace& trace, const Tensor<Scalar>& dOut) {
  if (std::size_t(dOut.size()) != trace.argmax.size())
    throw std::invalid_argument("maxPool2x2Backward: dOut does not match the traced pooling");
  Tensor<Scalar> dx(trace.inShape);
  for (Index i = 0; i < dOut.size(); ++i) dx[trace.argmax[std::size_t(i)]] += dOut[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Head pieces: global average pool, shared per-frame classifier, and the
// order-insensitive temporal mean.
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> globalAvgPool(const Tensor<Scalar>& x) {
  if (x.rank() != 5) throw std::invalid_argument("globalAvgPool: input must be (N,T,C,H,W)");
  const Index ntc = x.extent(0) * x.extent(1) * x.extent(2);
  const Index hw = x.extent(3) * x.extent(4);
  Tensor<Scalar> out({x.extent(0), x.extent(1), x.extent(2)});
  for (Index p = 0; p < ntc; ++p) {
    const Scalar* in = x.data() + p * hw;
    Scalar acc = 0;
    for (Index i = 0; i < hw; ++i) acc += in[i];
    out[p] = acc / Scalar(hw);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> globalAvgPoolBackward(const Tensor<Scalar>& dOut, const Shape& inShape) {
  Tensor<Scalar> dx(inShape);
  const Index hw = inShape[3] * inShape[4];
  for (Index p = 0; p < dOut.size(); ++p) {
    Scalar* out = dx.data() + p * hw;
    const Scalar v = dOut[p] / Scalar(hw);
    for (Index i = 0; i < hw; ++i) out[i] = v;
  }
  return dx;
}

template <typename Scalar>
struct Classifier {
  Tensor<Scalar> weights;  // (num_classes, C)
  Tensor<Scalar> bias;     // (num_classes)

  Index numClasses() const { return weights.extent(0); }
  Index features() const { return weights.extent(1); }

  static Classifier init(Index classes, Index features, Rng& rng) {
    Classifier fc;
    fc.weights = randn<Scalar>({classes, features}, rng, 0.01);
    fc.bias = Tensor<Scalar>({classes});
    return fc;
  }
};

template <typename Scalar, typename Fn>
void visitTensors(Classifier<Scalar>& fc, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".weights", fc.weights, ParamRole::Weight);
  fn(prefix + ".bias", fc.bias, ParamRole::Bias);
}

template <typename Scalar>
Tensor<Scalar> classifierForward(const Tensor<Scalar>& f, const Classifier<Scalar>& fc) {
  if (f.rank() != 3) throw std::invalid_argument("classifier: input must be (N,T,C)");
  const Index nt = f.extent(0) * f.extent(1), c = f.extent(2);
  if (c != fc.features())
    throw std::invalid_argument("classifier: feature size " + std::to_string(c) + " does not match layer " +
                                std::to_string(fc.features()));
  const Index k = fc.numClasses();
  Tensor<Scalar> out({f.extent(0), f.extent(1), k});
  detail::CMapRM<Scalar> wm(fc.weights.data(), k, c);
  for (Index p = 0; p < nt; ++p) {
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> fv(f.data() + p * c, c);
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> ov(out.data() + p * k, k);
    ov.noalias() = wm * fv;
    for (Index i = 0; i < k; ++i) ov[i] += fc.bias[i];
  }
  return out;
}

template <typename Scalar>
struct ClassifierGradients {
  Tensor<Scalar> dInput;
  Tensor<Scalar> dWeights;
  Tensor<Scalar> dBias;
};

template <typename Scalar>
ClassifierGradients<Scalar> classifierBackward(const Tensor<Scalar>& f, const Classifier<Scalar>& fc,
                                               const Tensor<Scalar>& dOut) {
  const Index nt = f.extent(0) * f.extent(1), c = f.extent(2), k = fc.numClasses();
  if (dOut.shape() != Shape{f.extent(0), f.extent(1), k})
    throw std::invalid_argument("classifierBackward: dOut shape mismatch");
  ClassifierGradients<Scalar> g;
  g.dInput = Tensor<Scalar>(f.shape());
  g.dWeights = Tensor<Scalar>(fc.weights.shape());
  g.dBias = Tensor<Scalar>(fc.bias.shape());
  detail::CMapRM<Scalar> wm(fc.weights.data(), k, c);
  detail::MapRM<Scalar> dwm(g.dWeights.data(), k, c);
  for (Index p = 0; p < nt; ++p) {
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> fv(f.data() + p * c, c);
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> dv(dOut.data() + p * k, k);
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> dfv(g.dInput.data() + p * c, c);
    dfv.noalias() = wm.transpose() * dv;
    dwm.noalias() += dv * fv.transpose();
    for (Index i = 0; i < k; ++i) g.dBias[i] += dv[i];
  }
  return g;
}

// Temporal mean of per-frame logits, summed in value order so the result is
// bit-identical under any permutation of the frames.
template <typename Scalar>
Tensor<Scalar> temporalMeanForward(const Tensor<Scalar>& logits) {
  if (logits.rank() != 3) throw std::invalid_argument("temporalMean: input must be (N,T,K)");
  const Index n = logits.extent(0), t = logits.extent(1), k = logits.extent(2);
  Tensor<Scalar> out({n, k});
  std::vector<Scalar> vals(static_cast<std::size_t>(t));
  for (Index ni = 0; ni < n; ++ni)
    for (Index ki = 0; ki < k; ++ki) {
      for (Index ti = 0; ti < t; ++ti) vals[std::size_t(ti)] = logits[(ni * t + ti) * k + ki];
      std::sort(vals.begin(), vals.end());
      Scalar acc = 0;
      for (const Scalar v : vals) acc += v;
      out[ni * k + ki] = acc / Scalar(t);
    }
  return out;
}

template <typename Scalar>
Tensor<Scalar> temporalMeanBackward(const Tensor<Scalar>& dOut, Index t) {
  const Index n = dOut.extent(0), k = dOut.extent(1);
  Tensor<Scalar> dx({n, t, k});
  for (Index ni = 0; ni < n; ++ni)
    for (Index ti = 0; ti < t; ++ti)
      for (Index ki = 0; ki < k; ++ki) dx[(ni * t + ti) * k + ki] = dOut[ni * k + ki] / Scalar(t);
  return dx;
}

// ---------------------------------------------------------------------------
// Bottleneck residual block (reduce 1x1 -> 3x3 -> expand 1x1), per frame.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct Bottleneck {
  Conv1x1<Scalar> conv1;  // C_in -> width
  BatchNorm<Scalar> bn1;
  SpatialConv<Scalar> conv3;  // width -> width, 3x3, carries the stride
  BatchNorm<Scalar> bn2;
  Conv1x1<Scalar> conv2;  // width -> C_out
  BatchNorm<Scalar> bn3;
  std::optional<SpatialConv<Scalar>> proj;  // 1x1 strided projection shortcut
  std::optional<BatchNorm<Scalar>> projBn;

  static Bottleneck init(Index cIn, Index cOut, Index stride, Rng& rng) {
    const Index width = std::max<Index>(1, cOut / 4);
    Bottleneck b;
    b.conv1 = Conv1x1<Scalar>::init(width, cIn, rng);
    b.bn1 = BatchNorm<Scalar>::init(width);
    b.conv3 = SpatialConv<Scalar>::init(width, width, 3, stride, 1, rng);
    b.bn2 = BatchNorm<Scalar>::init(width);
    b.conv2 = Conv1x1<Scalar>::init(cOut, width, rng);
    b.bn3 = BatchNorm<Scalar>::init(cOut);
    if (cIn != cOut || stride != 1) {
      b.proj = SpatialConv<Scalar>::init(cOut, cIn, 1, stride, 0, rng);
      b.projBn = BatchNorm<Scalar>::init(cOut);
    }
    return b;
  }

  Index paramCount() const {
    Index total = conv1.weights.size() + 2 * bn1.channels() + conv3.weights.size() + 2 * bn2.channels() +
                  conv2.weights.size() + 2 * bn3.channels();
    if (proj) total += proj->weights.size() + 2 * projBn->channels();
    return total;
  }
};

template <typename Scalar, typename Fn>
void visitTensors(Bottleneck<Scalar>& b, const std::string& prefix, Fn&& fn) {
  visitTensors(b.conv1, prefix + ".conv1", fn);
  visitTensors(b.bn1, prefix + ".bn1", fn);
  visitTensors(b.conv3, prefix + ".conv3", fn);
  visitTensors(b.bn2, prefix + ".bn2", fn);
  visitTensors(b.conv2, prefix + ".conv2", fn);
  visitTensors(b.bn3, prefix + ".bn3", fn);
  if (b.proj) {
    visitTensors(*b.proj, prefix + ".proj", fn);
    visitTensors(*b.projBn, prefix + ".proj_bn", fn);
  }
}

template <typename Scalar>
struct BottleneckTrace {
  Tensor<Scalar> input, preRelu1, act1, preRelu2, act2, preReluOut;
  BnTrace<Scalar> bn1, bn2, bn3;
  std::optional<BnTrace<Scalar>> projBn;
};

template <typename Scalar>
Tensor<Scalar> bottleneckForward(const Tensor<Scalar>& x, Bottleneck<Scalar>& blk, Mode mode,
                                 BottleneckTrace<Scalar>* tr = nullptr) {
  Tensor<Scalar> a1 = conv1x1Forward(x, blk.conv1);
  Tensor<Scalar> a2 = batchnormForward(a1, blk.bn1, mode, tr ? &tr->bn1 : nullptr);
  Tensor<Scalar> a3 = reluForward(a2);
  Tensor<Scalar> a4 = spatialConvForward(a3, blk.conv3);
  Tensor<Scalar> a5 = batchnormForward(a4, blk.bn2, mode, tr ? &tr->bn2 : nullptr);
  Tensor<Scalar> a6 = reluForward(a5);
  Tensor<Scalar> a7 = conv1x1Forward(a6, blk.conv2);
  Tensor<Scalar> f = batchnormForward(a7, blk.bn3, mode, tr ? &tr->bn3 : nullptr);

  Tensor<Scalar> shortcut;
  if (blk.proj) {
    if (tr) tr->projBn.emplace();
    shortcut = batchnormForward(spatialConvForward(x, *blk.proj), *blk.projBn, mode,
                                tr ? &*tr->projBn : nullptr);
  } else {
    shortcut = x;
  }
  Tensor<Scalar> pre = add(shortcut, f);
  Tensor<Scalar> out = reluForward(pre);
  if (tr) {
    tr->input = x;
    tr->preRelu1 = std::move(a2);
    tr->act1 = std::move(a3);
    tr->preRelu2 = std::move(a5);
    tr->act2 = std::move(a6);
    tr->preReluOut = std::move(pre);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Named gradient accumulation.
// ---------------------------------------------------------------------------

template <typename Scalar>
class GradStore {
 public:
  void accumulate(const std::string& name, Tensor<Scalar> grad) {
    auto it = grads_.find(name);
    if (it == grads_.end())
      grads_.emplace(name, std::move(grad));
    else
      it->second = add(it->second, grad);
  }
  const Tensor<Scalar>& at(const std::string& name) const {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw std::invalid_argument("GradStore: no gradient named " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return grads_.count(name) > 0; }
  std::size_t size() const { return grads_.size(); }
  void clear() { grads_.clear(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  std::unordered_map<std::string, Tensor<Scalar>> grads_;
};

template <typename Scalar>
Tensor<Scalar> bottleneckBackward(const Bottleneck<Scalar>& blk, const BottleneckTrace<Scalar>& tr,
                                  const Tensor<Scalar>& dOut, const std::string& prefix,
                                  GradStore<Scalar>& gs) {
  Tensor<Scalar> dPre = reluBackward(tr.preReluOut, dOut);

  auto b3 = batchnormBackward(blk.bn3, tr.bn3, dPre);
  gs.accumulate(prefix + ".bn3.gamma", std::move(b3.dGamma));
  gs.accumulate(prefix + ".bn3.beta", std::move(b3.dBeta));
  auto c2 = conv1x1Backward(tr.act2, blk.conv2, b3.dInput);
  gs.accumulate(prefix + ".conv2.weights", std::move(c2.dWeights));
  Tensor<Scalar> d5 = reluBackward(tr.preRelu2, c2.dInput);
  auto b2 = batchnormBackward(blk.bn2, tr.bn2, d5);
  gs.accumulate(prefix + ".bn2.gamma", std::move(b2.dGamma));
  gs.accumulate(prefix + ".bn2.beta", std::move(b2.dBeta));
  auto c3 = spatialConvBackward(tr.act1, blk.conv3, b2.dInput);
  gs.accumulate(prefix + ".conv3.weights", std::move(c3.dWeights));
  Tensor<Scalar> d2 = reluBackward(tr.preRelu1, c3.dInput);
  auto b1 = batchnormBackward(blk.bn1, tr.bn1, d2);
  gs.accumulate(prefix + ".bn1.gamma", std::move(b1.dGamma));
  gs.accumulate(prefix + ".bn1.beta", std::move(b1.dBeta));
  auto c1 = conv1x1Backward(tr.input, blk.conv1, b1.dInput);
  gs.accumulate(prefix + ".conv1.weights", std::move(c1.dWeights));

  Tensor<Scalar> dx = std::move(c1.dInput);
  if (blk.proj) {
    auto pb = batchnormBackward(*blk.projBn, *tr.projBn, dPre);
    gs.accumulate(prefix + ".proj_bn.gamma", std::move(pb.dGamma));
    gs.accumulate(prefix + ".proj_bn.beta", std::move(pb.dBeta));
    auto pj = spatialConvBackward(tr.input, *blk.proj, pb.dInput);
    gs.accumulate(prefix + ".proj.weights", std::move(pj.dWeights));
    dx = add(dx, pj.dInput);
  } else {
    dx = add(dx, dPre);
  }
  return dx;
}

template <typename Scalar>
void storeTccmGrads(GradStore<Scalar>& gs, const std::string& prefix, TccmGrads<Scalar>&& g) {
  gs.accumulate(prefix + ".reduce.weights", std::move(g.dReduceW));
  gs.accumulate(prefix + ".bn1.gamma", std::move(g.dBn1Gamma));
  gs.accumulate(prefix + ".bn1.beta", std::move(g.dBn1Beta));
  gs.accumulate(prefix + ".tcc.weights", std::move(g.dTccW));
  gs.accumulate(prefix + ".bn2.gamma", std::move(g.dBn2Gamma));
  gs.accumulate(prefix + ".bn2.beta", std::move(g.dBn2Beta));
  gs.accumulate(prefix + ".restore.weights", std::move(g.dRestoreW));
  gs.accumulate(prefix + ".bn3.gamma", std::move(g.dBn3Gamma));
  gs.accumulate(prefix + ".bn3.beta", std::move(g.dBn3Beta));
}

template <typename Scalar>
void storePath2Grads(GradStore<Scalar>& gs, const std::string& prefix, Path2Grads<Scalar>&& g) {
  gs.accumulate(prefix + ".reduce.weights", std::move(g.dReduceW));
  gs.accumulate(prefix + ".bn1.gamma", std::move(g.dBn1Gamma));
  gs.accumulate(prefix + ".bn1.beta", std::move(g.dBn1Beta));
  gs.accumulate(prefix + ".tconv.weights", std::move(g.dTconvW));
  gs.accumulate(prefix + ".bn2.gamma", std::move(g.dBn2Gamma));
  gs.accumulate(prefix + ".bn2.beta", std::move(g.dBn2Beta));
  gs.accumulate(prefix + ".restore.weights", std::move(g.dRestoreW));
  gs.accumulate(prefix + ".bn3.gamma", std::move(g.dBn3Gamma));
  gs.accumulate(prefix + ".bn3.beta", std::move(g.dBn3Beta));
}

// ---------------------------------------------------------------------------
// Network configuration.
// ---------------------------------------------------------------------------

struct NetworkConfig {
  std::vector<Index> stageChannels{16, 32, 64, 128};
  std::vector<Index> stageDepths{2, 2, 6, 2};
  std::array<Index, 2> inputSpatial{32, 32};
  Index numClasses = 4;
  std::vector<std::pair<Index, Index>> ctmPlan;  // (stage, position) pairs
  Index ctmReduction = 4;

  bool operator==(const NetworkConfig&) const = default;
};

inline void validate(const NetworkConfig& cfg) {
  if (cfg.stageChannels.empty()) throw std::invalid_argument("config: stage_channels must be non-empty");
  if (cfg.stageChannels.size() != cfg.stageDepths.size())
    throw std::invalid_argument("config: stage_channels and stage_depths must have equal length");
  for (Index c : cfg.stageChannels)
    if (c < 1) throw std::invalid_argument("config: stage channels must be positive");
  for (Index d : cfg.stageDepths)
    if (d < 1) throw std::invalid_argument("config: stage depths must be positive");
  if (cfg.inputSpatial[0] < 2 || cfg.inputSpatial[1] < 2 || cfg.inputSpatial[0] % 2 != 0 ||
      cfg.inputSpatial[1] % 2 != 0)
    throw std::invalid_argument("config: input_spatial must be even and at least 2 (the stem pools 2x2)");
  if (cfg.numClasses < 1) throw std::invalid_argument("config: num_classes must be positive");
  if (cfg.ctmReduction < 1) throw std::invalid_argument("config: ctm_reduction must be positive");
  for (std::size_t i = 0; i < cfg.ctmPlan.size(); ++i) {
    const auto [s, p] = cfg.ctmPlan[i];
    const auto entry = "(" + std::to_string(s) + "," + std::to_string(p) + ")";
    if (s < 0 || std::size_t(s) >= cfg.stageDepths.size())
      throw std::invalid_argument("config: ctm_plan entry " + entry + " names a stage that does not exist");
    if (p < 0 || p > cfg.stageDepths[std::size_t(s)])
      throw std::invalid_argument("config: ctm_plan entry " + entry + " position out of range [0.." +
                                  std::to_string(cfg.stageDepths[std::size_t(s)]) + "]");
    for (std::size_t j = 0; j < i; ++j)
      if (cfg.ctmPlan[j] == cfg.ctmPlan[i])
        throw std::invalid_argument("config: ctm_plan entry " + entry +
                                    " appears twice; insertion order at one slot would be ambiguous");
  }
}

inline nlohmann::ordered_json toJson(const NetworkConfig& cfg) {
  nlohmann::ordered_json j;
  j["stage_channels"] = cfg.stageChannels;
  j["stage_depths"] = cfg.stageDepths;
  j["input_spatial"] = cfg.inputSpatial;
  j["num_classes"] = cfg.numClasses;
  auto plan = nlohmann::ordered_json::array();
  for (const auto& [s, p] : cfg.ctmPlan) plan.push_back({s, p});
  j["ctm_plan"] = plan;
  j["ctm_reduction"] = cfg.ctmReduction;
  return j;
}

inline NetworkConfig networkConfigFromJson(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  static const std::vector<std::string> known{"stage_channels", "stage_depths", "input_spatial",
                                              "num_classes",    "ctm_plan",     "ctm_reduction"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw std::invalid_argument("config: unknown key \"" + it.key() + "\"");
  NetworkConfig cfg;
  if (j.contains("stage_channels")) cfg.stageChannels = j.at("stage_channels").get<std::vector<Index>>();
  if (j.contains("stage_depths")) cfg.stageDepths = j.at("stage_depths").get<std::vector<Index>>();
  if (j.contains("input_spatial")) {
    auto v = j.at("input_spatial").get<std::vector<Index>>();
    if (v.size() != 2) throw std::invalid_argument("config: input_spatial must be [H, W]");
    cfg.inputSpatial = {v[0], v[1]};
  }
  if (j.contains("num_classes")) cfg.numClasses = j.at("num_classes").get<Index>();
  if (j.contains("ctm_plan")) {
    cfg.ctmPlan.clear();
    for (const auto& e : j.at("ctm_plan")) {
      auto v = e.get<std::vector<Index>>();
      if (v.size() != 2) throw std::invalid_argument("config: ctm_plan entries must be [stage, position]");
      cfg.ctmPlan.emplace_back(v[0], v[1]);
    }
  }
  if (j.contains("ctm_reduction")) cfg.ctmReduction = j.at("ctm_reduction").get<Index>();
  validate(cfg);
  return cfg;
}

// ---------------------------------------------------------------------------
// The network.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct Network {
  NetworkConfig config;
  SpatialConv<Scalar> stemConv;
  BatchNorm<Scalar> stemBn;
  std::vector<std::vector<std::variant<Bottleneck<Scalar>, CtmBlock<Scalar>>>> stages;
  Classifier<Scalar> fc;
};

namespace detail {
inline std::string stageBlockName(std::size_t s, Index b) {
  return "stage" + std::to_string(s) + ".block" + std::to_string(b);
}
inline std::string stageCtmName(std::size_t s, Index p) {
  return "stage" + std::to_string(s) + ".ctm" + std::to_string(p);
}
}  // namespace detail

// Input channels are fixed at 3 (RGB frames).
inline constexpr Index kInputChannels = 3;

template <typename Scalar>
Network<Scalar> buildNetwork(const NetworkConfig& cfg, Rng& rng) {
  validate(cfg);
  Network<Scalar> net;
  net.config = cfg;

  const Index c0 = cfg.stageChannels.front();
  {
    Rng stemRng = rng.child("stem");
    net.stemConv = SpatialConv<Scalar>::init(c0, kInputChannels, 3, 1, 1, stemRng);
    net.stemBn = BatchNorm<Scalar>::init(c0);
  }

  Index h = cfg.inputSpatial[0] / 2;  // after the stem 2x2 pool
  Index w = cfg.inputSpatial[1] / 2;
  Index cPrev = c0;
  net.stages.resize(cfg.stageChannels.size());
  for (std::size_t s = 0; s < cfg.stageChannels.size(); ++s) {
    const Index cOut = cfg.stageChannels[s];
    const Index depth = cfg.stageDepths[s];
    Index cCur = cPrev;
    auto insertCtms = [&](Index position) {
      for (const auto& [ps, pp] : cfg.ctmPlan) {
        if (std::size_t(ps) != s || pp != position) continue;
        const Index c2 = std::max<Index>(1, cCur / cfg.ctmReduction);
        Rng blockRng = rng.child(detail::stageCtmName(s, position));
        net.stages[s].emplace_back(CtmBlock<Scalar>::init(cCur, c2, h, w, blockRng));
      }
    };
    for (Index b = 0; b < depth; ++b) {
      insertCtms(b);
      const Index stride = (b == 0) ? 2 : 1;
      Rng blockRng = rng.child(detail::stageBlockName(s, b));
      net.stages[s].emplace_back(Bottleneck<Scalar>::init(cCur, cOut, stride, blockRng));
      if (b == 0) {
        h = convOutExtent(h, 3, 2, 1);
        w = convOutExtent(w, 3, 2, 1);
      }
      cCur = cOut;
    }
    insertCtms(depth);
    cPrev = cOut;
  }

  Rng headRng = rng.child("head");
  net.fc = Classifier<Scalar>::init(cfg.numClasses, cfg.stageChannels.back(), headRng);
  return net;
}

template <typename Scalar, typename Fn>
void visitTensors(Network<Scalar>& net, Fn&& fn) {
  visitTensors(net.stemConv, "stem.conv", fn);
  visitTensors(net.stemBn, "stem.bn", fn);
  for (std::size_t s = 0; s < net.stages.size(); ++s) {
    Index bIdx = 0;
    for (auto& entry : net.stages[s]) {
      if (auto* blk = std::get_if<Bottleneck<Scalar>>(&entry)) {
        visitTensors(*blk, detail::stageBlockName(s, bIdx), fn);
        ++bIdx;
      } else {
        visitTensors(std::get<CtmBlock<Scalar>>(entry), detail::stageCtmName(s, bIdx), fn);
      }
    }
  }
  visitTensors(net.fc, "head.fc", fn);
}

template <typename Scalar>
Index countParams(Network<Scalar>& net) {
  Index total = 0;
  visitTensors(net, [&](const std::string&, Tensor<Scalar>& t, ParamRole role) {
    if (isTrainable(role)) total += t.size();
  });
  return total;
}

template <typename Scalar>
struct NetTrace {
  Tensor<Scalar> stemInput, stemPreRelu, stemAct;
  BnTrace<Scalar> stemBn;
  PoolTrace pool;
  std::vector<std::vector<std::variant<BottleneckTrace<Scalar>, CtmBlockTrace<Scalar>>>> stages;
  Tensor<Scalar> features;  // pooled (N,T,C), classifier input
  Shape gapInShape;
  Index framesT = 0;
};

template <typename Scalar>
Tensor<Scalar> networkForward(const Tensor<Scalar>& clips, Network<Scalar>& net, Mode mode,
                              NetTrace<Scalar>* tr = nullptr) {
  if (clips.rank() != 5) throw std::invalid_argument("network: input must be (N,T,3,H,W)");
  if (clips.extent(2) != kInputChannels)
    throw std::invalid_argument("network: expected " + std::to_string(kInputChannels) +
                                " input channels, got " + std::to_string(clips.extent(2)));
  if (clips.extent(3) != net.config.inputSpatial[0] || clips.extent(4) != net.config.inputSpatial[1])
    throw std::invalid_argument(
        "network: input spatial " + std::to_string(clips.extent(3)) + "x" + std::to_string(clips.extent(4)) +
        " does not match the configured " + std::to_string(net.config.inputSpatial[0]) + "x" +
        std::to_string(net.config.inputSpatial[1]));

  Tensor<Scalar> pre = batchnormForward(spatialConvForward(clips, net.stemConv), net.stemBn, mode,
                                        tr ? &tr->stemBn : nullptr);
  Tensor<Scalar> act = reluForward(pre);
  Tensor<Scalar> x = maxPool2x2Forward(act, tr ? &tr->pool : nullptr);
  if (tr) {
    tr->stemInput = clips;
    tr->stemPreRelu = std::move(pre);
    tr->stemAct = std::move(act);
    tr->stages.assign(net.stages.size(), {});
  }

  for (std::size_t s = 0; s < net.stages.size(); ++s) {
    for (auto& entry : net.stages[s]) {
      if (auto* blk = std::get_if<Bottleneck<Scalar>>(&entry)) {
        if (tr) {
          tr->stages[s].emplace_back(BottleneckTrace<Scalar>{});
          x = bottleneckForward(x, *blk, mode, &std::get<BottleneckTrace<Scalar>>(tr->stages[s].back()));
        } else {
          x = bottleneckForward(x, *blk, mode);
        }
      } else {
        auto& ctm = std::get<CtmBlock<Scalar>>(entry);
        if (tr) {
          tr->stages[s].emplace_back(CtmBlockTrace<Scalar>{});
          x = ctmForward(x, ctm, mode, &std::get<CtmBlockTrace<Scalar>>(tr->stages[s].back()));
        } else {
          x = ctmForward(x, ctm, mode);
        }
      }
    }
  }

  Shape gapIn = x.shape();
  Tensor<Scalar> feats = globalAvgPool(x);
  Tensor<Scalar> perFrame = classifierForward(feats, net.fc);
  if (tr) {
    tr->gapInShape = gapIn;
    tr->features = feats;
    tr->framesT = clips.extent(1);
  }
  return temporalMeanForward(perFrame);
}

template <typename Scalar>
struct NetworkGradients {
  GradStore<Scalar> store;
  Tensor<Scalar> dInput;
};

template <typename Scalar>
NetworkGradients<Scalar> networkBackward(Network<Scalar>& net, const NetTrace<Scalar>& tr,
                                         const Tensor<Scalar>& dLogits) {
  NetworkGradients<Scalar> out;
  GradStore<Scalar>& gs = out.store;

  Tensor<Scalar> dPerFrame = temporalMeanBackward(dLogits, tr.framesT);
  auto fcg = classifierBackward(tr.features, net.fc, dPerFrame);
  gs.accumulate("head.fc.weights", std::move(fcg.dWeights));
  gs.accumulate("head.fc.bias", std::move(fcg.dBias));
  Tensor<Scalar> dx = globalAvgPoolBackward(fcg.dInput, tr.gapInShape);

  for (std::size_t si = net.stages.size(); si-- > 0;) {
    auto& stage = net.stages[si];
    // Bottleneck ordinals within the stage, for naming, counted forward.
    std::vector<Index> ordinal(stage.size());
    Index bIdx = 0;
    for (std::size_t i = 0; i < stage.size(); ++i) {
      if (std::holds_alternative<Bottleneck<Scalar>>(stage[i]))
        ordinal[i] = bIdx++;
      else
        ordinal[i] = bIdx;
    }
    for (std::size_t i = stage.size(); i-- > 0;) {
      if (auto* blk = std::get_if<Bottleneck<Scalar>>(&stage[i])) {
        dx = bottleneckBackward(*blk, std::get<BottleneckTrace<Scalar>>(tr.stages[si][i]), dx,
                                detail::stageBlockName(si, ordinal[i]), gs);
      } else {
        auto& ctm = std::get<CtmBlock<Scalar>>(stage[i]);
        auto g = ctmBackward(ctm, std::get<CtmBlockTrace<Scalar>>(tr.stages[si][i]), dx);
        const std::string prefix = detail::stageCtmName(si, ordinal[i]);
        if (g.p1) storeTccmGrads(gs, prefix + ".path1", std::move(*g.p1));
        if (g.p2) storePath2Grads(gs, prefix + ".path2", std::move(*g.p2));
        dx = std::move(g.dInput);
      }
    }
  }

  Tensor<Scalar> dAct = maxPool2x2Backward(tr.pool, dx);
  Tensor<Scalar> dPre = reluBackward(tr.stemPreRelu, dAct);
  auto bng = batchnormBackward(net.stemBn, tr.stemBn, dPre);
  gs.accumulate("stem.bn.gamma", std::move(bng.dGamma));
  gs.accumulate("stem.bn.beta", std::move(bng.dBeta));
  auto cg = spatialConvBackward(tr.stemInput, net.stemConv, bng.dInput);
  gs.accumulate("stem.conv.weights", std::move(cg.dWeights));
  out.dInput = std::move(cg.dInput);
  return out;
}

}  // namespace ctm
