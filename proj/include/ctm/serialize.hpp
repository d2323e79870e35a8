#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "ctm/tensor.hpp"

namespace ctm {

// Raised for malformed or truncated on-disk data, as opposed to
// std::invalid_argument which flags bad in-memory arguments.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

namespace io {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

template <typename T>
void writePod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T readPod(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError(std::string("truncated input while reading ") + what);
  return v;
}

inline void writeMagic(std::ostream& os, const char (&magic)[9]) { os.write(magic, 8); }

inline void expectMagic(std::istream& is, const char (&magic)[9], const char* what) {
  char buf[8];
  is.read(buf, 8);
  if (!is || std::memcmp(buf, magic, 8) != 0)
    throw FormatError(std::string("bad magic for ") + what);
}

inline void writeString(std::ostream& os, const std::string& s) {
  writePod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string readString(std::istream& is, const char* what) {
  const auto len = readPod<std::uint32_t>(is, what);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw FormatError(std::string("truncated input while reading ") + what);
  return s;
}

}  // namespace io

// Tensor binary layout (little-endian):
//   magic "CTMTNSR\0" | u32 version=1 | u32 rank | rank x u64 extents |
//   u8 dtype (0 = f64, 1 = f32) | raw row-major data
inline constexpr char kTensorMagic[9] = "CTMTNSR\0";
inline constexpr std::uint32_t kTensorVersion = 1;

template <typename Scalar>
void writeTensor(std::ostream& os, const Tensor<Scalar>& t) {
  static_assert(std::is_same_v<Scalar, double> || std::is_same_v<Scalar, float>);
  io::writeMagic(os, kTensorMagic);
  io::writePod<std::uint32_t>(os, kTensorVersion);
  io::writePod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (Index e : t.shape()) io::writePod<std::uint64_t>(os, static_cast<std::uint64_t>(e));
  io::writePod<std::uint8_t>(os, std::is_same_v<Scalar, double> ? 0 : 1);
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(t.size())));
  if (!os) throw FormatError("tensor write failed");
}

// Reads a tensor record; a stored dtype different from Scalar is converted
// value by value.
template <typename Scalar>
Tensor<Scalar> readTensor(std::istream& is) {
  static_assert(std::is_same_v<Scalar, double> || std::is_same_v<Scalar, float>);
  io::expectMagic(is, kTensorMagic, "tensor");
  const auto version = io::readPod<std::uint32_t>(is, "tensor version");
  if (version != kTensorVersion) throw FormatError("unsupported tensor version " + std::to_string(version));
  const auto rank = io::readPod<std::uint32_t>(is, "tensor rank");
  if (rank == 0 || rank > 64) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) {
    const auto ext = io::readPod<std::uint64_t>(is, "tensor extent");
    if (ext == 0 || ext > static_cast<std::uint64_t>(std::numeric_limits<Index>::max()))
      throw FormatError("implausible tensor extent");
    e = static_cast<Index>(ext);
  }
  const auto dtype = io::readPod<std::uint8_t>(is, "tensor dtype");
  if (dtype > 1) throw FormatError("unknown tensor dtype tag " + std::to_string(dtype));

  Index n;
  try {
    n = numel(shape);
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }

  auto readRaw = [&](auto tag) {
    using Stored = decltype(tag);
    std::vector<Stored> raw(static_cast<std::size_t>(n));
    is.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(sizeof(Stored) * raw.size()));
    if (!is) throw FormatError("truncated tensor data");
    Tensor<Scalar> t(shape);
    for (Index i = 0; i < n; ++i) t[i] = static_cast<Scalar>(raw[static_cast<std::size_t>(i)]);
    return t;
  };
  return dtype == 0 ? readRaw(double{}) : readRaw(float{});
}

}  // namespace ctm
