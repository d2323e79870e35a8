#pragma once

#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctm/network.hpp"
#include "ctm/serialize.hpp"

namespace ctm {

inline constexpr char kCheckpointMagic[9] = "CTMCKPT\0";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: magic, u32 version, length-prefixed canonical config JSON,
// u32 tensor count, then (length-prefixed name, tensor record) pairs in
// visitation order. Running statistics are included.
template <typename Scalar>
void saveCheckpoint(Network<Scalar>& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("checkpoint: cannot open " + path + " for writing");
  io::writeMagic(out, kCheckpointMagic);
  io::writePod(out, kCheckpointVersion);
  io::writeString(out, toJson(net.config).dump());

  std::uint32_t count = 0;
  visitTensors(net, [&](const std::string&, Tensor<Scalar>&, ParamRole) { ++count; });
  io::writePod(out, count);
  visitTensors(net, [&](const std::string& name, Tensor<Scalar>& t, ParamRole) {
    io::writeString(out, name);
    writeTensor(out, t);
  });
  if (!out) throw FormatError("checkpoint: write to " + path + " failed");
}

template <typename Scalar>
std::unordered_map<std::string, Tensor<Scalar>> readCheckpointTensors(std::istream& in) {
  const auto count = io::readPod<std::uint32_t>(in, "checkpoint tensor count");
  std::unordered_map<std::string, Tensor<Scalar>> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = io::readString(in, "checkpoint tensor name");
    if (tensors.count(name)) throw FormatError("checkpoint: duplicate tensor record \"" + name + "\"");
    tensors.emplace(std::move(name), readTensor<Scalar>(in));
  }
  return tensors;
}

// Copies a named tensor set into an existing network. Every network tensor
// must be present with the right shape and no records may be left over.
template <typename Scalar>
void restoreTensors(Network<Scalar>& net, std::unordered_map<std::string, Tensor<Scalar>>&& tensors) {
  visitTensors(net, [&](const std::string& name, Tensor<Scalar>& t, ParamRole) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw std::invalid_argument("checkpoint: parameter-set mismatch, no record for \"" + name + "\"");
    if (it->second.shape() != t.shape())
      throw std::invalid_argument("checkpoint: parameter-set mismatch, \"" + name + "\" has shape " +
                                  shapeToString(it->second.shape()) + ", network expects " +
                                  shapeToString(t.shape()));
    t = std::move(it->second);
    tensors.erase(it);
  });
  if (!tensors.empty())
    throw std::invalid_argument("checkpoint: parameter-set mismatch, unused record \"" +
                                tensors.begin()->first + "\"");
}

inline NetworkConfig readCheckpointHeader(std::istream& in) {
  io::expectMagic(in, kCheckpointMagic, "checkpoint");
  const auto version = io::readPod<std::uint32_t>(in, "checkpoint version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const std::string configText = io::readString(in, "checkpoint config");
  nlohmann::json j = nlohmann::json::parse(configText, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw FormatError("checkpoint: embedded config is not valid JSON");
  return networkConfigFromJson(j);
}

// Rebuilds the network described by the file and restores every tensor.
template <typename Scalar>
Network<Scalar> loadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path);
  const NetworkConfig cfg = readCheckpointHeader(in);
  Rng rng(0);  // placeholder weights, fully overwritten below
  Network<Scalar> net = buildNetwork<Scalar>(cfg, rng);
  restoreTensors(net, readCheckpointTensors<Scalar>(in));
  return net;
}

// Restores into a caller-built network; the parameter sets must match.
template <typename Scalar>
void restoreInto(Network<Scalar>& net, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path);
  readCheckpointHeader(in);  // header validated; param names decide compatibility
  restoreTensors(net, readCheckpointTensors<Scalar>(in));
}

}  // namespace ctm
