// Command-line driver: verification subcommands (gradcheck, oracle-check,
// identity-check, bench) and the experiment pipeline (gen-data, train, eval,
// ablate, params). Every report is CSV with a header row.
#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "ctm/checkpoint.hpp"
#include "ctm/ctm_block.hpp"
#include "ctm/data.hpp"
#include "ctm/network.hpp"
#include "ctm/tcc.hpp"
#include "ctm/train.hpp"

namespace {

using namespace ctm;
using Clock = std::chrono::steady_clock;

int exitCode = 0;

double relErr(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0}); }

double sumSquares(const TensorD& t) {
  double s = 0;
  for (Index i = 0; i < t.size(); ++i) s += t[i] * t[i];
  return s;
}

void randomizeTrainables(auto& holder, Rng& rng, auto&&... visitArgs) {
  visitTensors(holder, visitArgs..., [&](const std::string&, TensorD& t, ParamRole role) {
    if (!isTrainable(role)) return;
    for (Index i = 0; i < t.size(); ++i) {
      if (role == ParamRole::BnGamma)
        t[i] = 1.0 + 0.3 * rng.normal();
      else if (role == ParamRole::BnBeta)
        t[i] = 0.2 * rng.normal();
      else
        t[i] = 0.5 * rng.normal();
    }
  });
}

struct CheckRow {
  std::string module, tensor;
  double maxRelErr = 0;
  double tolerance = 0;
};

void printCheckRows(const std::vector<CheckRow>& rows) {
  std::cout << "module,tensor,max_rel_err,tolerance,status\n";
  for (const auto& r : rows) {
    const bool ok = r.maxRelErr < r.tolerance;
    if (!ok) exitCode = 1;
    std::cout << r.module << "," << r.tensor << "," << r.maxRelErr << "," << r.tolerance << ","
              << (ok ? "pass" : "FAIL") << "\n";
  }
}

// Central-difference derivative of loss(x) with respect to one slot.
template <typename LossFn>
double fdSlot(double& slot, LossFn&& loss) {
  const double step = 1e-5, saved = slot;
  slot = saved + step;
  const double lp = loss();
  slot = saved - step;
  const double lm = loss();
  slot = saved;
  return (lp - lm) / (2 * step);
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

void gradcheckTcc(std::vector<CheckRow>& rows) {
  Rng rng(101);
  TensorD x = randn<double>({1, 3, 4, 2, 2}, rng);
  TccKernel<double> k = TccKernel<double>::init(2, 2, rng);
  auto loss = [&] { return sumSquares(tccForwardFast(x, k, {})); };
  auto analytic = [&] {
    TensorD out = tccForwardFast(x, k, {});
    return tccBackward(x, k, scale(out, 2.0), {});
  };
  auto g = analytic();
  CheckRow rw{"tcc", "weights", 0, 1e-6}, rx{"tcc", "input", 0, 1e-6};
  for (Index i = 0; i < k.weights.size(); ++i)
    rw.maxRelErr = std::max(rw.maxRelErr, relErr(g.dWeights[i], fdSlot(k.weights.data()[i], loss)));
  for (Index i = 0; i < x.size(); ++i)
    rx.maxRelErr = std::max(rx.maxRelErr, relErr(g.dInput[i], fdSlot(x.data()[i], loss)));
  rows.push_back(rw);
  rows.push_back(rx);
}

void gradcheckBn(std::vector<CheckRow>& rows) {
  Rng rng(102);
  TensorD x = randn<double>({2, 2, 3, 2, 2}, rng);
  BatchNorm<double> bn = BatchNorm<double>::init(3);
  randomizeTrainables(bn, rng, "bn");
  auto loss = [&] {
    auto fresh = bn;
    return sumSquares(batchnormForward(x, fresh, Mode::Training));
  };
  auto fresh = bn;
  BnTrace<double> tr;
  TensorD out = batchnormForward(x, fresh, Mode::Training, &tr);
  auto g = batchnormBackward(bn, tr, scale(out, 2.0));
  CheckRow rg{"bn", "gamma", 0, 1e-6}, rb{"bn", "beta", 0, 1e-6}, rx{"bn", "input", 0, 1e-6};
  for (Index i = 0; i < bn.gamma.size(); ++i)
    rg.maxRelErr = std::max(rg.maxRelErr, relErr(g.dGamma[i], fdSlot(bn.gamma.data()[i], loss)));
  for (Index i = 0; i < bn.beta.size(); ++i)
    rb.maxRelErr = std::max(rb.maxRelErr, relErr(g.dBeta[i], fdSlot(bn.beta.data()[i], loss)));
  for (Index i = 0; i < x.size(); ++i)
    rx.maxRelErr = std::max(rx.maxRelErr, relErr(g.dInput[i], fdSlot(x.data()[i], loss)));
  rows.push_back(rg);
  rows.push_back(rb);
  rows.push_back(rx);
}

void gradcheckBlock(std::vector<CheckRow>& rows) {
  Rng rng(103);
  CtmBlock<double> block = CtmBlock<double>::init(8, 2, 2, 2, rng);
  randomizeTrainables(block, rng, "block");
  TensorD x = randn<double>({1, 3, 8, 2, 2}, rng);
  auto loss = [&] {
    auto fresh = block;
    return sumSquares(ctmForward(x, fresh, Mode::Training));
  };
  auto fresh = block;
  CtmBlockTrace<double> tr;
  TensorD out = ctmForward(x, fresh, Mode::Training, &tr);
  auto g = ctmBackward(block, tr, scale(out, 2.0));
  GradStore<double> gs;
  storeTccmGrads(gs, "path1", std::move(*g.p1));
  storePath2Grads(gs, "path2", std::move(*g.p2));

  visitTensors(block, "", [&](const std::string& name, TensorD& t, ParamRole role) {
    if (!isTrainable(role)) return;
    CheckRow row{"block", name.substr(1), 0, 1e-5};  // drop the leading '.'
    const TensorD& grad = gs.at(name.substr(1));
    for (Index i = 0; i < t.size(); ++i)
      row.maxRelErr = std::max(row.maxRelErr, relErr(grad[i], fdSlot(t.data()[i], loss)));
    rows.push_back(row);
  });
  CheckRow rx{"block", "input", 0, 1e-5};
  for (Index i = 0; i < x.size(); ++i)
    rx.maxRelErr = std::max(rx.maxRelErr, relErr(g.dInput[i], fdSlot(x.data()[i], loss)));
  rows.push_back(rx);
}

void gradcheckNet(std::vector<CheckRow>& rows) {
  NetworkConfig cfg;
  cfg.stageChannels = {4, 8};
  cfg.stageDepths = {1, 1};
  cfg.inputSpatial = {4, 4};
  cfg.numClasses = 3;
  cfg.ctmPlan = {{1, 1}};
  Rng rng(104);
  auto net = buildNetwork<double>(cfg, rng);
  randomizeTrainables(net, rng);
  TensorD x = randn<double>({2, 3, 3, 4, 4}, rng);
  auto loss = [&] {
    auto fresh = net;
    return sumSquares(networkForward(x, fresh, Mode::Training));
  };
  auto fresh = net;
  NetTrace<double> tr;
  TensorD logits = networkForward(x, fresh, Mode::Training, &tr);
  auto g = networkBackward(fresh, tr, scale(logits, 2.0));

  CheckRow worst{"net", "worst_parameter", 0, 1e-5};
  std::string worstName = "-";
  visitTensors(net, [&](const std::string& name, TensorD& t, ParamRole role) {
    if (!isTrainable(role)) return;
    const TensorD& grad = g.store.at(name);
    for (Index i = 0; i < t.size(); ++i) {
      const double e = relErr(grad[i], fdSlot(t.data()[i], loss));
      if (e > worst.maxRelErr) {
        worst.maxRelErr = e;
        worstName = name;
      }
    }
  });
  worst.tensor = "worst:" + worstName;
  rows.push_back(worst);
  CheckRow rx{"net", "input", 0, 1e-5};
  for (Index i = 0; i < x.size(); ++i)
    rx.maxRelErr = std::max(rx.maxRelErr, relErr(g.dInput[i], fdSlot(x.data()[i], loss)));
  rows.push_back(rx);
}

// ---------------------------------------------------------------------------
// oracle-check, identity-check, bench
// ---------------------------------------------------------------------------

void runOracleCheck(Index trials) {
  std::cout << "n,t,c,h,w,trials,max_abs_diff,tolerance,status\n";
  Rng rng(2024);
  for (Index n : {1, 2})
    for (Index t : {2, 4, 8})
      for (Index c : {1, 3, 16})
        for (Index h : {1, 2, 7})
          for (Index w : {1, 2, 7}) {
            double worst = 0;
            for (Index trial = 0; trial < trials; ++trial) {
              TensorD x = randn<double>({n, t, c, h, w}, rng);
              TccKernel<double> k = TccKernel<double>::init(h, w, rng);
              worst = std::max(worst, maxAbsDiff(tccForwardFast(x, k, {}), tccForwardNaive(x, k, {})));
            }
            const bool ok = worst < 1e-12;
            if (!ok) exitCode = 1;
            std::cout << n << "," << t << "," << c << "," << h << "," << w << "," << trials << ","
                      << worst << ",1e-12," << (ok ? "pass" : "FAIL") << "\n";
          }
}

void runIdentityCheck(Index blocks) {
  std::cout << "check,cases,max_abs_diff,tolerance,status\n";
  Rng rng(77);
  double worstInference = 0, worstTraining = 0;
  for (Index i = 0; i < blocks; ++i) {
    const Index c1 = 1 + Index(rng.below(12));
    const Index c2 = 1 + Index(rng.below(4));
    const Index h = 1 + Index(rng.below(3));
    const Index w = 1 + Index(rng.below(3));
    const Index n = 1 + Index(rng.below(2));
    const Index t = 2 + Index(rng.below(4));
    CtmBlock<double> block = CtmBlock<double>::init(c1, c2, h, w, rng);
    TensorD x = randn<double>({n, t, c1, h, w}, rng);
    worstInference = std::max(worstInference, maxAbsDiff(ctmForward(x, block, Mode::Inference), x));
    auto fresh = CtmBlock<double>::init(c1, c2, h, w, rng);
    worstTraining = std::max(worstTraining, maxAbsDiff(ctmForward(x, fresh, Mode::Training), x));
  }
  const bool okInf = worstInference == 0.0;
  const bool okTrn = worstTraining < 1e-12;
  if (!okInf || !okTrn) exitCode = 1;
  std::cout << "fresh_block_identity_inference," << blocks << "," << worstInference << ",0,"
            << (okInf ? "pass" : "FAIL") << "\n";
  std::cout << "fresh_block_identity_training," << blocks << "," << worstTraining << ",1e-12,"
            << (okTrn ? "pass" : "FAIL") << "\n";

  // Starting loss of a temporal net equals its matched baseline.
  SyntheticSpec spec;
  spec.trainClipsPerClass = 8;
  spec.valClipsPerClass = 2;
  Rng dataRng(78);
  auto [train, val] = genDataset<double>(spec, dataRng);
  NetworkConfig withPlan;
  withPlan.ctmPlan = {{2, 1}, {2, 3}, {2, 5}};
  NetworkConfig base;
  Rng r1(79), r2(79);
  auto netCtm = buildNetwork<double>(withPlan, r1);
  auto netBase = buildNetwork<double>(base, r2);
  const auto order = ctm::detail::identityOrder(train.size());
  TensorD clips = ctm::detail::gatherClips(train, order, 0, 16);
  std::vector<Index> labels(16);
  for (Index i = 0; i < 16; ++i) labels[std::size_t(i)] = Index(train.labels[std::size_t(i)]);
  const double lossCtm =
      double(softmaxCrossEntropy(networkForward(clips, netCtm, Mode::Training), labels).loss);
  const double lossBase =
      double(softmaxCrossEntropy(networkForward(clips, netBase, Mode::Training), labels).loss);
  const double diff = std::abs(lossCtm - lossBase);
  const bool okLoss = diff < 1e-10;
  if (!okLoss) exitCode = 1;
  std::cout << "first_batch_loss_equality,1," << diff << ",1e-10," << (okLoss ? "pass" : "FAIL") << "\n";
}

void runBench(const std::string& shapesFile, Index repeats) {
  std::vector<std::array<Index, 5>> shapes;
  if (shapesFile.empty()) {
    shapes.push_back({1, 8, 64, 14, 14});
  } else {
    std::ifstream in(shapesFile);
    if (!in) throw std::runtime_error("bench: cannot open " + shapesFile);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::array<Index, 5> s{};
      char comma;
      std::istringstream ss(line);
      if (!(ss >> s[0] >> comma >> s[1] >> comma >> s[2] >> comma >> s[3] >> comma >> s[4]))
        continue;  // header or malformed line
      shapes.push_back(s);
    }
    if (shapes.empty()) throw std::runtime_error("bench: no shape rows in " + shapesFile);
  }

  std::cout << "n,t,c,h,w,naive_median_ns,fast_median_ns,speedup,outputs_match\n";
  Rng rng(31337);
  for (const auto& s : shapes) {
    TensorD x = randn<double>({s[0], s[1], s[2], s[3], s[4]}, rng);
    TccKernel<double> k = TccKernel<double>::init(s[3], s[4], rng);
    auto median = [&](auto&& fn) {
      std::vector<double> ns;
      for (Index r = 0; r < repeats; ++r) {
        const auto t0 = Clock::now();
        TensorD out = fn();
        const auto t1 = Clock::now();
        ns.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count() + 0 * out[0]);
      }
      std::sort(ns.begin(), ns.end());
      return ns[ns.size() / 2];
    };
    const double naiveNs = median([&] { return tccForwardNaive(x, k, {}); });
    const double fastNs = median([&] { return tccForwardFast(x, k, {}); });
    const double diff = maxAbsDiff(tccForwardNaive(x, k, {}), tccForwardFast(x, k, {}));
    std::cout << s[0] << "," << s[1] << "," << s[2] << "," << s[3] << "," << s[4] << "," << naiveNs << ","
              << fastNs << "," << naiveNs / fastNs << "," << (diff < 1e-12 ? "yes" : "NO") << "\n";
  }
}

// ---------------------------------------------------------------------------
// Experiment pipeline helpers.
// ---------------------------------------------------------------------------

nlohmann::json readJsonFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw std::runtime_error(path + " is not valid JSON");
  return j;
}

// Accepts either {"network": {...}, "train": {...}} or a bare network object.
std::pair<NetworkConfig, TrainConfig> readCombinedConfig(const nlohmann::json& j) {
  if (j.is_object() && (j.contains("network") || j.contains("train"))) {
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.key() != "network" && it.key() != "train")
        throw std::invalid_argument("config: unknown key \"" + it.key() + "\"");
    NetworkConfig nc =
        j.contains("network") ? networkConfigFromJson(j.at("network")) : NetworkConfig{};
    TrainConfig tc = j.contains("train") ? trainConfigFromJson(j.at("train")) : TrainConfig{};
    return {nc, tc};
  }
  return {networkConfigFromJson(j), TrainConfig{}};
}

template <typename Scalar>
void runTrain(const NetworkConfig& netCfg, const TrainConfig& trainCfg, const std::string& dataDir,
              const std::string& outDir) {
  auto trainSet = loadDataset<Scalar>(dataDir + "/train.bin");
  auto valSet = loadDataset<Scalar>(dataDir + "/val.bin");
  Rng rng(trainCfg.seed);
  auto net = buildNetwork<Scalar>(netCfg, rng);
  std::filesystem::create_directories(outDir);
  std::cerr << "training " << countParams(net) << " parameters on " << trainSet.size() << " clips\n";
  TrainLog log = ctm::train(net, trainSet, valSet, trainCfg, outDir + "/best.ckpt", &std::cerr);
  std::ofstream csv(outDir + "/log.csv");
  csv << "epoch,lr,train_loss,val_top1\n";
  for (const auto& e : log.epochs)
    csv << e.epoch << "," << e.lr << "," << e.trainLoss << "," << e.valTop1 << "\n";
  std::cout << "best_val_top1,best_epoch\n" << log.bestValTop1 << "," << log.bestEpoch << "\n";
}

template <typename Scalar>
void runAblateCmd(const nlohmann::json& m) {
  static const std::vector<std::string> known{"network", "train",      "dataset",
                                              "data_seed", "variants", "seeds"};
  for (auto it = m.begin(); it != m.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw std::invalid_argument("matrix: unknown key \"" + it.key() + "\"");
  NetworkConfig netCfg = m.contains("network") ? networkConfigFromJson(m.at("network")) : NetworkConfig{};
  TrainConfig trainCfg = m.contains("train") ? trainConfigFromJson(m.at("train")) : TrainConfig{};
  SyntheticSpec spec = m.contains("dataset") ? syntheticSpecFromJson(m.at("dataset")) : SyntheticSpec{};
  const std::uint64_t dataSeed = m.value("data_seed", std::uint64_t{1234});
  std::vector<std::string> variants =
      m.contains("variants") ? m.at("variants").get<std::vector<std::string>>() : ablationVariantNames();
  std::vector<std::uint64_t> seeds =
      m.contains("seeds") ? m.at("seeds").get<std::vector<std::uint64_t>>() : std::vector<std::uint64_t>{1};

  Rng dataRng(dataSeed);
  auto [trainSet, valSet] = genDataset<Scalar>(spec, dataRng);
  auto rows = runAblation(netCfg, trainCfg, trainSet, valSet, variants, seeds, &std::cerr);

  std::cout << "variant,seed,params,best_val_top1\n";
  for (const auto& r : rows)
    std::cout << r.variant << "," << r.seed << "," << r.params << "," << r.bestValTop1 << "\n";
  for (const auto& v : variants) {
    double sum = 0;
    Index count = 0;
    for (const auto& r : rows)
      if (r.variant == v) {
        sum += r.bestValTop1;
        ++count;
      }
    if (count > 0) std::cout << v << ",mean,," << sum / double(count) << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Temporal-channel modeling toolkit: correctness checks and the desk-scale "
      "temporal-order experiment pipeline. All reports are CSV with a header row."};
  app.require_subcommand(1);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference checks of the analytic gradients");
  std::string module = "all";
  gc->add_option("--module", module, "tcc | bn | block | net | all")
      ->check(CLI::IsMember({"tcc", "bn", "block", "net", "all"}));
  gc->callback([&] {
    std::vector<CheckRow> rows;
    if (module == "tcc" || module == "all") gradcheckTcc(rows);
    if (module == "bn" || module == "all") gradcheckBn(rows);
    if (module == "block" || module == "all") gradcheckBlock(rows);
    if (module == "net" || module == "all") gradcheckNet(rows);
    printCheckRows(rows);
  });

  // oracle-check
  auto* oc = app.add_subcommand("oracle-check",
                                "Compare the reshaped fast temporal-channel forward with the direct loops");
  Index trials = 20;
  oc->add_option("--trials", trials, "random trials per shape (default 20)");
  oc->callback([&] { runOracleCheck(trials); });

  // identity-check
  auto* ic = app.add_subcommand("identity-check",
                                "Verify fresh blocks are identity maps and do not move the starting loss");
  Index blocks = 100;
  ic->add_option("--blocks", blocks, "number of random fresh blocks (default 100)");
  ic->callback([&] { runIdentityCheck(blocks); });

  // bench
  auto* be = app.add_subcommand("bench", "Wall-time comparison of the naive and fast forwards");
  std::string shapesFile;
  Index repeats = 5;
  be->add_option("--shapes", shapesFile, "CSV of shapes n,t,c,h,w (default: one 1,8,64,14,14 row)");
  be->add_option("--repeats", repeats, "timed repetitions per shape (median reported, default 5)");
  be->callback([&] { runBench(shapesFile, repeats); });

  // gen-data
  auto* gd = app.add_subcommand("gen-data", "Generate the synthetic temporal-order dataset");
  std::string specFile, outDir = ".";
  std::uint64_t dataSeed = 1234;
  gd->add_option("--spec", specFile, "dataset spec JSON (defaults used when omitted)");
  gd->add_option("--out", outDir, "output directory for train.bin and val.bin")->required();
  gd->add_option("--seed", dataSeed, "generation seed (default 1234)");
  gd->callback([&] {
    SyntheticSpec spec;
    if (!specFile.empty()) spec = syntheticSpecFromJson(readJsonFile(specFile));
    Rng rng(dataSeed);
    auto [train, val] = genDataset<double>(spec, rng);
    std::filesystem::create_directories(outDir);
    saveDataset(train, outDir + "/train.bin");
    saveDataset(val, outDir + "/val.bin");
    std::cout << "file,clips,classes\n";
    std::cout << outDir << "/train.bin," << train.size() << "," << spec.numClasses << "\n";
    std::cout << outDir << "/val.bin," << val.size() << "," << spec.numClasses << "\n";
  });

  // train
  auto* tr = app.add_subcommand("train", "Train a network on a generated dataset");
  std::string configFile, dataDir, trainOutDir = "run";
  bool float32 = false;
  tr->add_option("--config", configFile,
                 "JSON: {\"network\": {...}, \"train\": {...}} or a bare network object");
  tr->add_option("--data", dataDir, "directory holding train.bin and val.bin")->required();
  tr->add_option("--out", trainOutDir, "output directory (best.ckpt, log.csv)");
  tr->add_flag("--float32", float32, "train in 32-bit precision (faster, looser numerics)");
  tr->callback([&] {
    NetworkConfig netCfg;
    TrainConfig trainCfg;
    if (!configFile.empty()) std::tie(netCfg, trainCfg) = readCombinedConfig(readJsonFile(configFile));
    if (float32)
      runTrain<float>(netCfg, trainCfg, dataDir, trainOutDir);
    else
      runTrain<double>(netCfg, trainCfg, dataDir, trainOutDir);
  });

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset's validation split");
  std::string ckptFile, evalDataDir;
  Index evalBatch = 16;
  ev->add_option("--checkpoint", ckptFile, "checkpoint file")->required();
  ev->add_option("--data", evalDataDir, "directory holding val.bin")->required();
  ev->add_option("--batch", evalBatch, "evaluation batch size (default 16)");
  ev->callback([&] {
    auto net = loadCheckpoint<double>(ckptFile);
    auto val = loadDataset<double>(evalDataDir + "/val.bin");
    std::cout << "val_top1\n" << evaluate(net, val, evalBatch) << "\n";
  });

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train block variants (baseline/path1/path2/full) and tabulate");
  std::string matrixFile;
  bool ablateFloat32 = false;
  ab->add_option("--matrix", matrixFile,
                 "JSON: {network, train, dataset, data_seed, variants, seeds} (all optional)");
  ab->add_flag("--float32", ablateFloat32, "train in 32-bit precision (faster, looser numerics)");
  ab->callback([&] {
    nlohmann::json m = matrixFile.empty() ? nlohmann::json::object() : readJsonFile(matrixFile);
    if (ablateFloat32)
      runAblateCmd<float>(m);
    else
      runAblateCmd<double>(m);
  });

  // params
  auto* pa = app.add_subcommand("params", "Tabulate trainable parameter counts for a configuration");
  std::string paramsConfigFile;
  pa->add_option("--config", paramsConfigFile, "network config JSON (defaults used when omitted)");
  pa->callback([&] {
    NetworkConfig cfg;
    if (!paramsConfigFile.empty()) {
      nlohmann::json j = readJsonFile(paramsConfigFile);
      cfg = j.contains("network") ? networkConfigFromJson(j.at("network")) : networkConfigFromJson(j);
    }
    Rng rng(0);
    auto net = buildNetwork<double>(cfg, rng);
    std::cout << "tensor,params\n";
    visitTensors(net, [&](const std::string& name, TensorD& t, ParamRole role) {
      if (isTrainable(role)) std::cout << name << "," << t.size() << "\n";
    });
    std::cout << "TOTAL," << countParams(net) << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return exitCode;
}
