#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ctm/serialize.hpp"
#include "ctm/tensor.hpp"

using namespace ctm;

TEST_CASE("permute: 2D transpose") {
  auto t = TensorD::fromList({2, 3}, {1, 2, 3, 4, 5, 6});
  auto p = permute(t, {1, 0});
  CHECK(p.shape() == Shape{3, 2});
  const double want[] = {1, 4, 2, 5, 3, 6};
  for (Index i = 0; i < 6; ++i) CHECK(p[i] == want[i]);
}

TEST_CASE("permute: identity permutation is bit-identical") {
  Rng rng(7);
  auto t = randn({3, 4, 2}, rng);
  auto p = permute(t, {0, 1, 2});
  CHECK(bitIdentical(t, p));
}

TEST_CASE("permute+reshape realizes the 1 x HW x T x C layout") {
  // F has shape (T,C,H,W) = (2,2,2,2); target layout is (1, H*W, T, C).
  Rng rng(11);
  auto f = randn({2, 2, 2, 2}, rng);
  auto o = reshape(permute(f, {2, 3, 0, 1}), {1, 4, 2, 2});
  const Index T = 2, C = 2, H = 2, W = 2;
  for (Index t = 0; t < T; ++t)
    for (Index c = 0; c < C; ++c)
      for (Index h = 0; h < H; ++h)
        for (Index w = 0; w < W; ++w) CHECK(o(Index{0}, h * W + w, t, c) == f(t, c, h, w));
}

TEST_CASE("permute: invalid axes are rejected") {
  auto t = TensorD::zeros({2, 3});
  CHECK_THROWS_AS(permute(t, {0}), std::invalid_argument);
  CHECK_THROWS_AS(permute(t, {0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(permute(t, {0, 2}), std::invalid_argument);
}

TEST_CASE("permute round trip is bit-exact on random shapes up to rank 5") {
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const Index rank = 1 + static_cast<Index>(rng.below(5));
    Shape shape;
    for (Index k = 0; k < rank; ++k) shape.push_back(1 + static_cast<Index>(rng.below(5)));
    auto t = randn(shape, rng);
    std::vector<Index> p(static_cast<std::size_t>(rank));
    for (Index k = 0; k < rank; ++k) p[static_cast<std::size_t>(k)] = k;
    rng.shuffle(p);
    auto back = permute(permute(t, p), inversePermutation(p));
    CHECK(bitIdentical(t, back));
  }
}

TEST_CASE("permute preserves the multiset of values; reshape preserves the buffer") {
  Rng rng(3);
  auto t = randn({3, 2, 4}, rng);
  auto p = permute(t, {2, 0, 1});
  std::vector<double> a(t.data(), t.data() + t.size());
  std::vector<double> b(p.data(), p.data() + p.size());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);

  auto r = reshape(t, {6, 4});
  CHECK(std::memcmp(t.data(), r.data(), sizeof(double) * 24) == 0);
  CHECK_THROWS_AS(reshape(t, {5, 5}), std::invalid_argument);
}

TEST_CASE("operations do not mutate their inputs") {
  Rng rng(5);
  auto a = randn({4, 4}, rng);
  auto b = randn({4, 4}, rng);
  auto aCopy = a;
  auto bCopy = b;
  (void)add(a, b);
  (void)permute(a, {1, 0});
  (void)reshape(b, {16});
  CHECK(bitIdentical(a, aCopy));
  CHECK(bitIdentical(b, bCopy));
}

TEST_CASE("add: examples and errors") {
  auto a = TensorD::fromList({2}, {1, 2});
  auto b = TensorD::fromList({2}, {3, 4});
  auto c = add(a, b);
  CHECK(c[0] == 4);
  CHECK(c[1] == 6);

  CHECK(bitIdentical(add(a, TensorD::zeros({2})), a));
  CHECK_THROWS_AS(add(a, TensorD::zeros({3})), std::invalid_argument);
}

TEST_CASE("add: exact associativity for integer-valued inputs up to 2^50") {
  Rng rng(9);
  Shape shape{32};
  TensorD a(shape), b(shape), c(shape);
  for (Index i = 0; i < 32; ++i) {
    // Values up to 2^50; sums stay below 2^53 where doubles are exact.
    a[i] = static_cast<double>(rng.below(1ull << 50));
    b[i] = static_cast<double>(rng.below(1ull << 50));
    c[i] = static_cast<double>(rng.below(1ull << 50));
  }
  CHECK(bitIdentical(add(add(a, b), c), add(a, add(b, c))));
}

TEST_CASE("tensor invariants: extents and buffer length") {
  CHECK_THROWS_AS(TensorD::zeros({0, 2}), std::invalid_argument);
  CHECK_THROWS_AS(TensorD::zeros({-1}), std::invalid_argument);
  CHECK_THROWS_AS(TensorD(Shape{}), std::invalid_argument);
  auto t = TensorD::zeros({2, 3, 4});
  CHECK(t.size() == 24);
  // Index <-> offset round trip over every element.
  Index flat = 0;
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 3; ++j)
      for (Index k = 0; k < 4; ++k) CHECK(t.offsetOf(i, j, k) == flat++);
}

TEST_CASE("randn: determinism and moments") {
  Rng r1(123), r2(123), r3(124);
  auto a = randn({64}, r1, 2.5);
  auto b = randn({64}, r2, 2.5);
  auto c = randn({64}, r3, 2.5);
  CHECK(bitIdentical(a, b));
  CHECK(maxAbsDiff(a, c) > 0);

  Rng rng(2024);
  CHECK_THROWS_AS(randn({2}, rng, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(randn({2}, rng, -1.0), std::invalid_argument);

  auto big = randn({1000000}, rng, 1.0);
  const double mean = big.array().mean();
  const double var = (big.array() - mean).square().mean();
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("rng: child streams are reproducible and distinct") {
  Rng root(99);
  Rng a = root.child("stem.conv");
  Rng b = Rng(99).child("stem.conv");
  Rng c = root.child("head.fc");
  CHECK(a.nextU64() == b.nextU64());
  CHECK(Rng(99).child("stem.conv").nextU64() != c.nextU64());
}

TEST_CASE("tensor serialization round trip, both precisions") {
  Rng rng(31);
  auto t = randn({2, 3, 5}, rng);
  std::stringstream ss;
  writeTensor(ss, t);
  auto back = readTensor<double>(ss);
  CHECK(bitIdentical(t, back));

  TensorF tf({4, 4});
  for (Index i = 0; i < 16; ++i) tf[i] = static_cast<float>(i) * 0.25f;
  std::stringstream ss2;
  writeTensor(ss2, tf);
  auto backF = readTensor<float>(ss2);
  CHECK(bitIdentical(tf, backF));
}

TEST_CASE("tensor serialization rejects corrupt input") {
  std::stringstream ss;
  writeTensor(ss, TensorD::zeros({2, 2}));
  std::string blob = ss.str();

  std::stringstream bad1(std::string("XXXXXXXX") + blob.substr(8));
  CHECK_THROWS_AS(readTensor<double>(bad1), FormatError);

  std::stringstream bad2(blob.substr(0, blob.size() - 5));
  CHECK_THROWS_AS(readTensor<double>(bad2), FormatError);
}
