#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctm/checkpoint.hpp"
#include "ctm/data.hpp"
#include "ctm/network.hpp"

namespace ctm {

// ---------------------------------------------------------------------------
// Optimization configuration.
// ---------------------------------------------------------------------------

struct TrainConfig {
  Index epochs = 30;
  Index batchSize = 16;
  double lrInit = 0.02;
  std::vector<Index> lrDecayEpochs{15, 25};
  double lrDecayFactor = 0.1;
  double momentum = 0.9;
  double weightDecay = 1e-4;
  std::uint64_t seed = 1;

  bool operator==(const TrainConfig&) const = default;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw std::invalid_argument("train config: epochs must be non-negative");
  if (cfg.batchSize < 1) throw std::invalid_argument("train config: batch_size must be positive");
  if (cfg.lrInit <= 0) throw std::invalid_argument("train config: lr_init must be positive");
  if (cfg.lrDecayFactor <= 0) throw std::invalid_argument("train config: lr_decay_factor must be positive");
  for (Index e : cfg.lrDecayEpochs)
    if (e < 0) throw std::invalid_argument("train config: lr_decay_epochs must be non-negative");
  if (cfg.momentum < 0) throw std::invalid_argument("train config: momentum must be non-negative");
  if (cfg.weightDecay < 0) throw std::invalid_argument("train config: weight_decay must be non-negative");
}

inline nlohmann::ordered_json toJson(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batchSize;
  j["lr_init"] = cfg.lrInit;
  j["lr_decay_epochs"] = cfg.lrDecayEpochs;
  j["lr_decay_factor"] = cfg.lrDecayFactor;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weightDecay;
  j["seed"] = cfg.seed;
  return j;
}

inline TrainConfig trainConfigFromJson(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("train config: expected a JSON object");
  static const std::vector<std::string> known{"epochs",          "batch_size", "lr_init",
                                              "lr_decay_epochs", "lr_decay_factor",
                                              "momentum",        "weight_decay", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw std::invalid_argument("train config: unknown key \"" + it.key() + "\"");
  TrainConfig cfg;
  if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<Index>();
  if (j.contains("batch_size")) cfg.batchSize = j.at("batch_size").get<Index>();
  if (j.contains("lr_init")) cfg.lrInit = j.at("lr_init").get<double>();
  if (j.contains("lr_decay_epochs")) cfg.lrDecayEpochs = j.at("lr_decay_epochs").get<std::vector<Index>>();
  if (j.contains("lr_decay_factor")) cfg.lrDecayFactor = j.at("lr_decay_factor").get<double>();
  if (j.contains("momentum")) cfg.momentum = j.at("momentum").get<double>();
  if (j.contains("weight_decay")) cfg.weightDecay = j.at("weight_decay").get<double>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  validate(cfg);
  return cfg;
}

// Step learning-rate schedule: the initial rate decayed once for every decay
// epoch that is <= the current epoch.
inline double lrAt(Index epoch, const TrainConfig& cfg) {
  double lr = cfg.lrInit;
  for (Index e : cfg.lrDecayEpochs)
    if (e <= epoch) lr *= cfg.lrDecayFactor;
  return lr;
}

// ---------------------------------------------------------------------------
// SGD with momentum and decoupled-by-role weight decay: normalization scale
// and shift parameters are never decayed.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct SgdState {
  std::unordered_map<std::string, Tensor<Scalar>> velocity;
};

// One momentum update on one tensor: v <- momentum*v + (g + wd*p), p <- p - lr*v.
template <typename Scalar>
void sgdUpdateTensor(Tensor<Scalar>& p, const Tensor<Scalar>& g, Tensor<Scalar>& v, Scalar momentum,
                     Scalar weightDecay, Scalar lr) {
  if (g.shape() != p.shape() || v.shape() != p.shape())
    throw std::invalid_argument("sgd: parameter, gradient, and velocity shapes must match");
  for (Index i = 0; i < p.size(); ++i) {
    v[i] = momentum * v[i] + (g[i] + weightDecay * p[i]);
    p[i] -= lr * v[i];
  }
}

template <typename Scalar>
void sgdStep(Network<Scalar>& net, const GradStore<Scalar>& grads, SgdState<Scalar>& state,
             const TrainConfig& cfg, Scalar lr) {
  visitTensors(net, [&](const std::string& name, Tensor<Scalar>& p, ParamRole role) {
    if (!isTrainable(role)) return;
    auto [it, inserted] = state.velocity.try_emplace(name, p.shape());
    const Scalar wd = decaysWeight(role) ? Scalar(cfg.weightDecay) : Scalar(0);
    sgdUpdateTensor(p, grads.at(name), it->second, Scalar(cfg.momentum), wd, lr);
  });
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy, averaged over the batch.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct LossGrad {
  Scalar loss = 0;
  Tensor<Scalar> dLogits;
};

template <typename Scalar>
LossGrad<Scalar> softmaxCrossEntropy(const Tensor<Scalar>& logits, const std::vector<Index>& labels) {
  if (logits.rank() != 2) throw std::invalid_argument("cross-entropy: logits must be (N,K)");
  const Index n = logits.extent(0), k = logits.extent(1);
  if (Index(labels.size()) != n)
    throw std::invalid_argument("cross-entropy: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(n) + " rows");
  LossGrad<Scalar> out;
  out.dLogits = Tensor<Scalar>(logits.shape());
  Scalar total = 0;
  for (Index i = 0; i < n; ++i) {
    const Scalar* row = logits.data() + i * k;
    Scalar* drow = out.dLogits.data() + i * k;
    const Index y = labels[std::size_t(i)];
    if (y < 0 || y >= k) throw std::invalid_argument("cross-entropy: label out of range");
    Scalar m = row[0];
    for (Index j = 1; j < k; ++j) m = std::max(m, row[j]);
    Scalar z = 0;
    for (Index j = 0; j < k; ++j) z += std::exp(row[j] - m);
    total += std::log(z) - (row[y] - m);
    for (Index j = 0; j < k; ++j)
      drow[j] = (std::exp(row[j] - m) / z - (j == y ? Scalar(1) : Scalar(0))) / Scalar(n);
  }
  out.loss = total / Scalar(n);
  return out;
}

// ---------------------------------------------------------------------------
// Batched evaluation and the training loop.
// ---------------------------------------------------------------------------

namespace detail {

template <typename Scalar>
Tensor<Scalar> gatherClips(const Dataset<Scalar>& ds, const std::vector<Index>& order, Index begin,
                           Index count) {
  const Index clipSize = ds.clips.size() / ds.size();
  Tensor<Scalar> batch({count, ds.clips.extent(1), ds.clips.extent(2), ds.clips.extent(3),
                        ds.clips.extent(4)});
  for (Index i = 0; i < count; ++i) {
    const Index src = order[std::size_t(begin + i)];
    std::copy(ds.clips.data() + src * clipSize, ds.clips.data() + (src + 1) * clipSize,
              batch.data() + i * clipSize);
  }
  return batch;
}

inline std::vector<Index> identityOrder(Index n) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[std::size_t(i)] = i;
  return order;
}

}  // namespace detail

// Argmax with ties resolved toward the lower index.
template <typename Scalar>
Index argmaxLowest(const Scalar* row, Index k) {
  Index arg = 0;
  for (Index j = 1; j < k; ++j)
    if (row[j] > row[arg]) arg = j;
  return arg;
}

// Top-1 accuracy; argmax ties resolve to the lower class index.
template <typename Scalar>
double evaluate(Network<Scalar>& net, const Dataset<Scalar>& ds, Index batchSize) {
  if (ds.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  if (net.config.numClasses != ds.spec.numClasses)
    throw std::invalid_argument("evaluate: network has " + std::to_string(net.config.numClasses) +
                                " classes, dataset has " + std::to_string(ds.spec.numClasses));
  const auto order = detail::identityOrder(ds.size());
  Index correct = 0;
  for (Index begin = 0; begin < ds.size(); begin += batchSize) {
    const Index count = std::min(batchSize, ds.size() - begin);
    Tensor<Scalar> batch = detail::gatherClips(ds, order, begin, count);
    Tensor<Scalar> logits = networkForward(batch, net, Mode::Inference);
    const Index k = logits.extent(1);
    for (Index i = 0; i < count; ++i)
      if (argmaxLowest(logits.data() + i * k, k) == Index(ds.labels[std::size_t(begin + i)])) ++correct;
  }
  return double(correct) / double(ds.size());
}

struct EpochLog {
  Index epoch = 0;
  double lr = 0;
  double trainLoss = 0;
  double valTop1 = 0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  double bestValTop1 = 0;
  Index bestEpoch = 0;
};

// Trains in place. Deterministic for a fixed config (the shuffle stream is
// derived from cfg.seed). Saves the checkpoint with the best validation
// accuracy to checkpointPath when one is given. A non-finite loss aborts.
template <typename Scalar>
TrainLog train(Network<Scalar>& net, const Dataset<Scalar>& trainSet, const Dataset<Scalar>& valSet,
               const TrainConfig& cfg, const std::string& checkpointPath = "",
               std::ostream* progress = nullptr) {
  validate(cfg);
  if (trainSet.size() == 0) throw std::invalid_argument("train: empty training set");
  if (net.config.numClasses != trainSet.spec.numClasses)
    throw std::invalid_argument("train: network has " + std::to_string(net.config.numClasses) +
                                " classes, dataset has " + std::to_string(trainSet.spec.numClasses));

  TrainLog log;
  log.bestValTop1 = -1.0;
  log.bestEpoch = -1;
  if (cfg.epochs == 0) {
    log.bestValTop1 = evaluate(net, valSet, cfg.batchSize);
    log.bestEpoch = 0;
    if (!checkpointPath.empty()) saveCheckpoint(net, checkpointPath);
    return log;
  }

  Rng shuffleRng = Rng(cfg.seed).child("shuffle");
  SgdState<Scalar> state;
  std::vector<Index> order = detail::identityOrder(trainSet.size());

  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = lrAt(epoch, cfg);
    shuffleRng.shuffle(order);
    double lossSum = 0;
    for (Index begin = 0; begin < trainSet.size(); begin += cfg.batchSize) {
      const Index count = std::min(cfg.batchSize, trainSet.size() - begin);
      Tensor<Scalar> batch = detail::gatherClips(trainSet, order, begin, count);
      std::vector<Index> labels(static_cast<std::size_t>(count));
      for (Index i = 0; i < count; ++i)
        labels[std::size_t(i)] = Index(trainSet.labels[std::size_t(order[std::size_t(begin + i)])]);

      NetTrace<Scalar> trace;
      Tensor<Scalar> logits = networkForward(batch, net, Mode::Training, &trace);
      LossGrad<Scalar> lg = softmaxCrossEntropy(logits, labels);
      if (!std::isfinite(double(lg.loss)))
        throw std::runtime_error("train: loss diverged (non-finite) at epoch " + std::to_string(epoch) +
                                 ", batch offset " + std::to_string(begin) + ", lr " + std::to_string(lr));
      lossSum += double(lg.loss) * double(count);
      NetworkGradients<Scalar> grads = networkBackward(net, trace, lg.dLogits);
      sgdStep(net, grads.store, state, cfg, Scalar(lr));
    }

    EpochLog e;
    e.epoch = epoch;
    e.lr = lr;
    e.trainLoss = lossSum / double(trainSet.size());
    e.valTop1 = evaluate(net, valSet, cfg.batchSize);
    log.epochs.push_back(e);
    if (e.valTop1 > log.bestValTop1) {
      log.bestValTop1 = e.valTop1;
      log.bestEpoch = epoch;
      if (!checkpointPath.empty()) saveCheckpoint(net, checkpointPath);
    }
    if (progress)
      (*progress) << "epoch " << epoch << "/" << cfg.epochs << "  lr " << lr << "  loss " << e.trainLoss
                  << "  val-top1 " << e.valTop1 << "\n";
  }
  return log;
}

// ---------------------------------------------------------------------------
// Ablation runner: trains the block variants (none / path 1 only / path 2
// only / both) from identical per-module initial weights and budgets.
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& ablationVariantNames() {
  static const std::vector<std::string> names{"baseline", "path1", "path2", "full"};
  return names;
}

template <typename Scalar>
Network<Scalar> buildVariant(const NetworkConfig& cfg, const std::string& variant, std::uint64_t seed) {
  NetworkConfig used = cfg;
  if (variant == "baseline") used.ctmPlan.clear();
  Rng rng(seed);
  Network<Scalar> net = buildNetwork<Scalar>(used, rng);
  if (variant == "path1" || variant == "path2") {
    const CtmVariant v = variant == "path1" ? CtmVariant::Path1Only : CtmVariant::Path2Only;
    for (auto& stage : net.stages)
      for (auto& entry : stage)
        if (auto* ctm = std::get_if<CtmBlock<Scalar>>(&entry)) *ctm = ablate(*ctm, v);
  } else if (variant != "baseline" && variant != "full") {
    throw std::invalid_argument("ablation: unknown variant \"" + variant +
                                "\" (expected baseline, path1, path2, or full)");
  }
  return net;
}

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  double bestValTop1 = 0;
  Index params = 0;
};

template <typename Scalar>
std::vector<AblationRow> runAblation(const NetworkConfig& netCfg, const TrainConfig& trainCfg,
                                     const Dataset<Scalar>& trainSet, const Dataset<Scalar>& valSet,
                                     const std::vector<std::string>& variants,
                                     const std::vector<std::uint64_t>& seeds,
                                     std::ostream* progress = nullptr) {
  std::vector<AblationRow> rows;
  for (const auto& variant : variants)
    for (std::uint64_t seed : seeds) {
      Network<Scalar> net = buildVariant<Scalar>(netCfg, variant, seed);
      TrainConfig cfg = trainCfg;
      cfg.seed = seed;
      if (progress) (*progress) << "== variant " << variant << ", seed " << seed << " ==\n";
      TrainLog log = train(net, trainSet, valSet, cfg, "", progress);
      AblationRow row;
      row.variant = variant;
      row.seed = seed;
      row.bestValTop1 = log.bestValTop1;
      row.params = countParams(net);
      rows.push_back(std::move(row));
    }
  return rows;
}

}  // namespace ctm
