#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ctm/rng.hpp"

namespace ctm {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline std::string shapeToString(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

inline Index numel(const Shape& s) {
  Index n = 1;
  for (Index e : s) {
    if (e < 1) throw std::invalid_argument("tensor extent must be >= 1, got shape " + shapeToString(s));
    if (n > std::numeric_limits<Index>::max() / e) throw std::invalid_argument("tensor too large: " + shapeToString(s));
    n *= e;
  }
  return n;
}

// Row-major strides: stride[k] = product of extents after axis k.
inline Shape rowMajorStrides(const Shape& s) {
  Shape st(s.size());
  Index acc = 1;
  for (std::size_t k = s.size(); k-- > 0;) {
    st[k] = acc;
    acc *= s[k];
  }
  return st;
}

// Dense N-dimensional array of reals with explicit shape and a contiguous
// row-major buffer. Tensors are plain values: operations never mutate their
// inputs, copies are deep. Scalar is double by default throughout the
// library; float is the 32-bit mode.
template <typename Scalar>
class Tensor {
 public:
  using Buffer = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;  // empty placeholder, distinct from any constructed tensor

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Buffer::Zero(numel(shape_))) {
    if (shape_.empty()) throw std::invalid_argument("tensor rank must be >= 1");
  }

  Tensor(Shape shape, Buffer data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty()) throw std::invalid_argument("tensor rank must be >= 1");
    if (numel(shape_) != data_.size())
      throw std::invalid_argument("buffer length " + std::to_string(data_.size()) +
                                  " does not match shape " + shapeToString(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static Tensor fromList(Shape shape, std::initializer_list<Scalar> vals) {
    Tensor t(std::move(shape));
    if (static_cast<Index>(vals.size()) != t.size())
      throw std::invalid_argument("initializer length does not match shape");
    Index i = 0;
    for (Scalar v : vals) t.data_[i++] = v;
    return t;
  }

  bool empty() const { return shape_.empty(); }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  const Shape& shape() const { return shape_; }
  Index extent(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Buffer& array() { return data_; }
  const Buffer& array() const { return data_; }

  Scalar& operator[](Index flat) { return data_[flat]; }
  Scalar operator[](Index flat) const { return data_[flat]; }

  template <typename... I>
  Scalar& operator()(I... idx) {
    return data_[offsetOf(idx...)];
  }
  template <typename... I>
  Scalar operator()(I... idx) const {
    return data_[offsetOf(idx...)];
  }

  template <typename... I>
  Index offsetOf(I... idx) const {
    static_assert((std::is_integral_v<I> && ...), "indices must be integral");
    if (sizeof...(I) != shape_.size()) throw std::invalid_argument("index rank mismatch");
    const Index ii[] = {static_cast<Index>(idx)...};
    Index off = 0;
    for (std::size_t k = 0; k < shape_.size(); ++k) off = off * shape_[k] + ii[k];
    return off;
  }

  bool sameShape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  Shape shape_;
  Buffer data_;
};

using TensorD = Tensor<double>;
using TensorF = Tensor<float>;

// Inverse of a permutation p: q with q[p[k]] = k.
inline std::vector<Index> inversePermutation(const std::vector<Index>& p) {
  std::vector<Index> q(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) q[static_cast<std::size_t>(p[k])] = static_cast<Index>(k);
  return q;
}

inline void validatePermutation(const std::vector<Index>& axes, Index rank) {
  if (static_cast<Index>(axes.size()) != rank)
    throw std::invalid_argument("permutation rank " + std::to_string(axes.size()) +
                                " does not match tensor rank " + std::to_string(rank));
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  for (Index a : axes) {
    if (a < 0 || a >= rank) throw std::invalid_argument("permutation axis out of range: " + std::to_string(a));
    if (seen[static_cast<std::size_t>(a)]) throw std::invalid_argument("repeated permutation axis: " + std::to_string(a));
    seen[static_cast<std::size_t>(a)] = true;
  }
}

// Reorders axes so that output axis k is input axis axes[k]; the result is a
// physically contiguous row-major copy.
template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& t, const std::vector<Index>& axes) {
  validatePermutation(axes, t.rank());
  const Index rank = t.rank();
  Shape outShape(static_cast<std::size_t>(rank));
  for (Index k = 0; k < rank; ++k) outShape[static_cast<std::size_t>(k)] = t.extent(axes[static_cast<std::size_t>(k)]);

  Tensor<Scalar> out(outShape);
  const Shape inStrides = rowMajorStrides(t.shape());
  // Stride of the input as we step each output axis.
  std::vector<Index> step(static_cast<std::size_t>(rank));
  for (Index k = 0; k < rank; ++k) step[static_cast<std::size_t>(k)] = inStrides[static_cast<std::size_t>(axes[static_cast<std::size_t>(k)])];

  const Scalar* src = t.data();
  Scalar* dst = out.data();
  const Index n = out.size();
  std::vector<Index> counter(static_cast<std::size_t>(rank), 0);
  Index srcOff = 0;
  for (Index i = 0; i < n; ++i) {
    dst[i] = src[srcOff];
    // Odometer over output indices, innermost axis fastest.
    for (Index k = rank; k-- > 0;) {
      auto ku = static_cast<std::size_t>(k);
      srcOff += step[ku];
      if (++counter[ku] < outShape[ku]) break;
      srcOff -= step[ku] * outShape[ku];
      counter[ku] = 0;
    }
  }
  return out;
}

// Reinterprets the buffer under a new shape of equal element count; the
// buffer itself is copied bit-for-bit, never reordered.
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& t, Shape newShape) {
  if (numel(newShape) != t.size())
    throw std::invalid_argument("reshape from " + shapeToString(t.shape()) + " to " +
                                shapeToString(newShape) + " changes element count");
  return Tensor<Scalar>(std::move(newShape), t.array());
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (!a.sameShape(b))
    throw std::invalid_argument("elementwise add shape mismatch: " + shapeToString(a.shape()) +
                                " vs " + shapeToString(b.shape()));
  return Tensor<Scalar>(a.shape(), a.array() + b.array());
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  return Tensor<Scalar>(a.shape(), a.array() * s);
}

// I.i.d. normal draws times scale, filled in row-major order.
template <typename Scalar = double>
Tensor<Scalar> randn(Shape shape, Rng& rng, double scaleFactor = 1.0) {
  if (!(scaleFactor > 0)) throw std::invalid_argument("randn: scale must be > 0");
  Tensor<Scalar> t(std::move(shape));
  Scalar* p = t.data();
  const Index n = t.size();
  for (Index i = 0; i < n; ++i) p[i] = static_cast<Scalar>(scaleFactor * rng.normal());
  return t;
}

template <typename Scalar>
Scalar dot(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (!a.sameShape(b)) throw std::invalid_argument("dot shape mismatch");
  return (a.array() * b.array()).sum();
}

template <typename Scalar>
Scalar maxAbs(const Tensor<Scalar>& a) {
  return a.array().abs().maxCoeff();
}

template <typename Scalar>
Scalar maxAbsDiff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (!a.sameShape(b)) throw std::invalid_argument("maxAbsDiff shape mismatch");
  return (a.array() - b.array()).abs().maxCoeff();
}

template <typename Scalar>
bool bitIdentical(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (!a.sameShape(b)) return false;
  return std::memcmp(a.data(), b.data(), sizeof(Scalar) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace ctm
