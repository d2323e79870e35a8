#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace ctm {

// Deterministic random source used everywhere in the library.
//
// The generator is pinned so that a seed reproduces the same stream on any
// platform:
//   * engine: std::mt19937_64 seeded directly with the 64-bit seed (the
//     Mersenne Twister sequence is fully specified by the C++ standard);
//   * uniform doubles in [0,1): (word >> 11) * 2^-53;
//   * normal variates: Box-Muller on u1 in (0,1], u2 in [0,1):
//       r = sqrt(-2 ln u1), z0 = r cos(2 pi u2), z1 = r sin(2 pi u2),
//     z0 returned first, z1 cached and returned next;
//   * bounded integers in [0,n): word % n;
//   * shuffle: Fisher-Yates from the last element down, using the bounded
//     integer draw above;
//   * child streams: seed' = splitmix64(seed ^ fnv1a64(name)).
// Normal draws go through libm (log/cos/sin) and so are reproducible up to
// the platform's libm rounding; the integer stream is bit-exact everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t nextU64() { return engine_(); }

  // Uniform in [0, 1), 53 mantissa bits.
  double uniform() { return static_cast<double>(nextU64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller, one spare cached per pair.
  double normal() {
    if (haveSpare_) {
      haveSpare_ = false;
      return spare_;
    }
    const double u1 = static_cast<double>((nextU64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    haveSpare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n). Modulo bias is negligible for the sizes used
  // here and accepted for the sake of a trivially documented mapping.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    return nextU64() % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  // Independent stream labelled by name; the derivation is fixed so that a
  // module's draws do not depend on what was initialized before it.
  Rng child(std::string_view name) const {
    return Rng(splitmix64(seed_ ^ fnv1a64(name)));
  }

  static std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_ = 0;
  double spare_ = 0.0;
  bool haveSpare_ = false;
};

}  // namespace ctm
