#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctm/rng.hpp"
#include "ctm/serialize.hpp"
#include "ctm/tensor.hpp"

namespace ctm {

// ---------------------------------------------------------------------------
// Synthetic temporal-order classification data.
//
// Every class shows the same motif frames; classes differ only in the order
// the frames appear. A clip of class k is the shared frame sequence permuted
// by the class's permutation, plus per-clip pixel noise. Averaging over time
// therefore destroys all class information by construction, while any model
// that can compare neighbouring frames can separate the classes.
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  Index numClasses = 4;
  Index trainClipsPerClass = 200;
  Index valClipsPerClass = 50;
  Index frames = 8;  // clip length T
  std::array<Index, 2> spatial{32, 32};
  std::uint64_t motifLibrarySeed = 7;
  double noiseSigma = 0.1;

  bool operator==(const SyntheticSpec&) const = default;
};

inline void validate(const SyntheticSpec& spec) {
  if (spec.numClasses < 2) throw std::invalid_argument("dataset: num_classes must be at least 2");
  if (spec.frames < 2) throw std::invalid_argument("dataset: clips need at least 2 frames");
  if (spec.numClasses > spec.frames)
    throw std::invalid_argument("dataset: " + std::to_string(spec.numClasses) +
                                " distinct frame permutations of " + std::to_string(spec.frames) +
                                " frames cannot all be class-defining; need num_classes <= frames");
  if (spec.trainClipsPerClass < 1 || spec.valClipsPerClass < 1)
    throw std::invalid_argument("dataset: clips per class must be positive");
  if (spec.spatial[0] < 1 || spec.spatial[1] < 1)
    throw std::invalid_argument("dataset: spatial extents must be positive");
  if (spec.noiseSigma < 0) throw std::invalid_argument("dataset: noise_sigma must be non-negative");
}

inline nlohmann::ordered_json toJson(const SyntheticSpec& spec) {
  nlohmann::ordered_json j;
  j["num_classes"] = spec.numClasses;
  j["train_clips_per_class"] = spec.trainClipsPerClass;
  j["val_clips_per_class"] = spec.valClipsPerClass;
  j["frames"] = spec.frames;
  j["spatial"] = spec.spatial;
  j["motif_library_seed"] = spec.motifLibrarySeed;
  j["noise_sigma"] = spec.noiseSigma;
  return j;
}

inline SyntheticSpec syntheticSpecFromJson(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("dataset spec: expected a JSON object");
  static const std::vector<std::string> known{
      "num_classes", "train_clips_per_class", "val_clips_per_class", "frames",
      "spatial",     "motif_library_seed",    "noise_sigma"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw std::invalid_argument("dataset spec: unknown key \"" + it.key() + "\"");
  SyntheticSpec spec;
  if (j.contains("num_classes")) spec.numClasses = j.at("num_classes").get<Index>();
  if (j.contains("train_clips_per_class"))
    spec.trainClipsPerClass = j.at("train_clips_per_class").get<Index>();
  if (j.contains("val_clips_per_class")) spec.valClipsPerClass = j.at("val_clips_per_class").get<Index>();
  if (j.contains("frames")) spec.frames = j.at("frames").get<Index>();
  if (j.contains("spatial")) {
    auto v = j.at("spatial").get<std::vector<Index>>();
    if (v.size() != 2) throw std::invalid_argument("dataset spec: spatial must be [H, W]");
    spec.spatial = {v[0], v[1]};
  }
  if (j.contains("motif_library_seed")) spec.motifLibrarySeed = j.at("motif_library_seed").get<std::uint64_t>();
  if (j.contains("noise_sigma")) spec.noiseSigma = j.at("noise_sigma").get<double>();
  validate(spec);
  return spec;
}

template <typename Scalar>
struct Dataset {
  SyntheticSpec spec;
  Tensor<Scalar> clips;  // (N, T, 3, H, W)
  std::vector<std::uint16_t> labels;

  Index size() const { return clips.rank() == 5 ? clips.extent(0) : 0; }
};

// The class-defining permutations of frame indices. Class 0 keeps the frames
// in order, class 1 reverses them, and further classes draw distinct random
// permutations. Validity (num_classes <= frames <= distinct permutations)
// is guaranteed by SyntheticSpec::validate().
inline std::vector<std::vector<Index>> classPermutations(Index numClasses, Index frames, Rng& rng) {
  std::vector<std::vector<Index>> perms;
  std::vector<Index> base(static_cast<std::size_t>(frames));
  for (Index t = 0; t < frames; ++t) base[std::size_t(t)] = t;
  perms.push_back(base);
  std::vector<Index> reversed(base.rbegin(), base.rend());
  if (numClasses >= 2) perms.push_back(reversed);
  while (Index(perms.size()) < numClasses) {
    std::vector<Index> p = base;
    rng.shuffle(p);
    if (std::find(perms.begin(), perms.end(), p) == perms.end()) perms.push_back(std::move(p));
  }
  return perms;
}

namespace detail {

// Motifs are coarse 4x4 random grids (per colour channel) blown up to the
// working resolution, so frames carry large-scale structure rather than
// pixel-level texture.
template <typename Scalar>
std::vector<Tensor<Scalar>> motifLibrary(const SyntheticSpec& spec, Index count) {
  constexpr Index kCoarse = 4;
  Rng rng(spec.motifLibrarySeed);
  const Index h = spec.spatial[0], w = spec.spatial[1];
  std::vector<Tensor<Scalar>> motifs;
  motifs.reserve(std::size_t(count));
  for (Index m = 0; m < count; ++m) {
    Tensor<Scalar> coarse = randn<Scalar>({3, kCoarse, kCoarse}, rng);
    Tensor<Scalar> frame({3, h, w});
    for (Index c = 0; c < 3; ++c)
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j)
          frame(c, i, j) = coarse(c, (i * kCoarse) / h, (j * kCoarse) / w);
    motifs.push_back(std::move(frame));
  }
  return motifs;
}

template <typename Scalar>
Dataset<Scalar> genSplit(const SyntheticSpec& spec, const std::vector<Tensor<Scalar>>& motifs,
                         const std::vector<std::vector<Index>>& perms, Index clipsPerClass, Rng& rng) {
  const Index t = spec.frames, h = spec.spatial[0], w = spec.spatial[1];
  const Index frameSize = 3 * h * w;
  Dataset<Scalar> ds;
  ds.spec = spec;
  ds.clips = Tensor<Scalar>({spec.numClasses * clipsPerClass, t, 3, h, w});
  ds.labels.resize(std::size_t(spec.numClasses * clipsPerClass));
  Index clip = 0;
  for (Index k = 0; k < spec.numClasses; ++k)
    for (Index i = 0; i < clipsPerClass; ++i, ++clip) {
      ds.labels[std::size_t(clip)] = std::uint16_t(k);
      for (Index ti = 0; ti < t; ++ti) {
        const Tensor<Scalar>& motif = motifs[std::size_t(perms[std::size_t(k)][std::size_t(ti)])];
        Scalar* dst = ds.clips.data() + (clip * t + ti) * frameSize;
        for (Index p = 0; p < frameSize; ++p)
          dst[p] = motif[p] + Scalar(spec.noiseSigma) * Scalar(rng.normal());
      }
    }
  return ds;
}

}  // namespace detail

// Generates the train and validation splits. The motif frames depend only on
// motif_library_seed; the permutations and the noise come from the caller's
// generator, so the whole dataset is a deterministic function of (spec, seed).
template <typename Scalar>
std::pair<Dataset<Scalar>, Dataset<Scalar>> genDataset(const SyntheticSpec& spec, Rng& rng) {
  validate(spec);
  auto motifs = detail::motifLibrary<Scalar>(spec, spec.frames);
  Rng permRng = rng.child("permutations");
  auto perms = classPermutations(spec.numClasses, spec.frames, permRng);
  Rng trainRng = rng.child("train-noise");
  Rng valRng = rng.child("val-noise");
  return {detail::genSplit(spec, motifs, perms, spec.trainClipsPerClass, trainRng),
          detail::genSplit(spec, motifs, perms, spec.valClipsPerClass, valRng)};
}

// ---------------------------------------------------------------------------
// On-disk format: magic, u32 version, u32 clip count, u32 class count,
// length-prefixed spec JSON, then per clip a (T,3,H,W) tensor record and a
// u16 label. One file per split.
// ---------------------------------------------------------------------------

inline constexpr char kDataMagic[9] = "CTMDATA\0";
inline constexpr std::uint32_t kDataVersion = 1;

template <typename Scalar>
void saveDataset(const Dataset<Scalar>& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("dataset: cannot open " + path + " for writing");
  io::writeMagic(out, kDataMagic);
  io::writePod(out, kDataVersion);
  io::writePod(out, std::uint32_t(ds.size()));
  io::writePod(out, std::uint32_t(ds.spec.numClasses));
  io::writeString(out, toJson(ds.spec).dump());
  const Index t = ds.spec.frames, h = ds.spec.spatial[0], w = ds.spec.spatial[1];
  const Index clipSize = t * 3 * h * w;
  Tensor<Scalar> one({t, 3, h, w});
  for (Index i = 0; i < ds.size(); ++i) {
    std::copy(ds.clips.data() + i * clipSize, ds.clips.data() + (i + 1) * clipSize, one.data());
    writeTensor(out, one);
    io::writePod(out, ds.labels[std::size_t(i)]);
  }
  if (!out) throw FormatError("dataset: write to " + path + " failed");
}

template <typename Scalar>
Dataset<Scalar> loadDataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("dataset: cannot open " + path);
  io::expectMagic(in, kDataMagic, "dataset");
  const auto version = io::readPod<std::uint32_t>(in, "dataset version");
  if (version != kDataVersion)
    throw FormatError("dataset: unsupported version " + std::to_string(version));
  const auto count = io::readPod<std::uint32_t>(in, "dataset clip count");
  const auto classes = io::readPod<std::uint32_t>(in, "dataset class count");
  nlohmann::json j = nlohmann::json::parse(io::readString(in, "dataset spec"), nullptr,
                                           /*allow_exceptions=*/false);
  if (j.is_discarded()) throw FormatError("dataset: embedded spec is not valid JSON");
  Dataset<Scalar> ds;
  ds.spec = syntheticSpecFromJson(j);
  if (Index(classes) != ds.spec.numClasses)
    throw FormatError("dataset: header class count disagrees with the embedded spec");
  const Index t = ds.spec.frames, h = ds.spec.spatial[0], w = ds.spec.spatial[1];
  const Index clipSize = t * 3 * h * w;
  ds.clips = Tensor<Scalar>({Index(count), t, 3, h, w});
  ds.labels.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor<Scalar> one = readTensor<Scalar>(in);
    if (one.shape() != Shape{t, 3, h, w})
      throw FormatError("dataset: clip " + std::to_string(i) + " has shape " + shapeToString(one.shape()) +
                        ", spec requires " + shapeToString(Shape{t, 3, h, w}));
    std::copy(one.data(), one.data() + clipSize, ds.clips.data() + Index(i) * clipSize);
    const auto label = io::readPod<std::uint16_t>(in, "dataset label");
    if (Index(label) >= ds.spec.numClasses)
      throw FormatError("dataset: clip " + std::to_string(i) + " labelled " + std::to_string(label) +
                        ", but the spec has " + std::to_string(ds.spec.numClasses) + " classes");
    ds.labels[i] = label;
  }
  return ds;
}

}  // namespace ctm
