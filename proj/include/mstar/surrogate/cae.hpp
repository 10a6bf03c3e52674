#pragma once

// Convolutional autoencoder over cell matrices.
//   O = ReLU(BN(Conv3x3(A)))              A: [B,4,13,13] -> O: [B,W,13,13]
//   v = GAP(O)                            [B,W]
//   G_c = O_c O_c^T / 13                  one node-affinity map per channel
//   A_hat = mask * ReLU(Conv1x1(G))       [B,4,13,13]
// Every G_c is symmetric while cell matrices are strictly upper triangular,
// so the output is restricted to the legal edge slots; all other entries are
// structurally zero.

#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mstar/numerics.hpp"
#include "mstar/search_space.hpp"

namespace mstar {

inline Array matrices_to_array(const std::vector<CellMatrix>& ms) {
  Array a(Shape{ms.size(), static_cast<std::size_t>(kNumOps), static_cast<std::size_t>(kNumNodes),
                static_cast<std::size_t>(kNumNodes)});
  for (std::size_t b = 0; b < ms.size(); ++b)
    for (std::size_t k = 0; k < ms[b].ops.size(); ++k) a[b * ms[b].ops.size() + k] = ms[b].ops[k];
  return a;
}

// 1 on the (i,j) pairs that may carry an edge, for every op channel.
inline Array legal_slot_mask(std::size_t batch) {
  Array one(Shape{static_cast<std::size_t>(kNumNodes * kNumNodes)}, 0.0);
  for (const auto& [i, j] : legal_slots()) one[static_cast<std::size_t>(i * kNumNodes + j)] = 1.0;
  Array m(Shape{batch, static_cast<std::size_t>(kNumOps), static_cast<std::size_t>(kNumNodes), static_cast<std::size_t>(kNumNodes)});
  for (std::size_t r = 0; r < batch * kNumOps; ++r) std::copy(one.values().begin(), one.values().end(), m.data() + r * one.size());
  return m;
}

inline std::vector<CellMatrix> gather(const std::vector<CellMatrix>& ms, const std::vector<std::size_t>& idx) {
  std::vector<CellMatrix> out;
  for (auto i : idx) out.push_back(ms[i]);
  return out;
}

struct CaeOutput {
  Tensor embedding;  // [B,W]
  Tensor recon;      // [B,4,13,13]
};

class CaeModel {
 public:
  CaeModel() : store_(std::make_unique<ParameterStore>()) {}
  CaeModel(CaeModel&&) = default;
  CaeModel& operator=(CaeModel&&) = default;

  static CaeModel create(std::size_t width, std::uint64_t seed) {
    if (width == 0) throw ConfigError("cae: width must be positive");
    CaeModel m;
    m.width_ = width;
    Rng rng = make_rng(seed, 0x636165);
    m.conv_ = Conv2dLayer::create(*m.store_, "cae.conv", static_cast<std::size_t>(kNumOps), width, 3, 3, rng);
    m.bn_ = BatchNormLayer::create(*m.store_, "cae.bn", width);
    m.dec_ = Conv2dLayer::create(*m.store_, "cae.dec", width, static_cast<std::size_t>(kNumOps), 1, 1, rng);
    // non-negative start keeps every legal slot active; a dead decoder ReLU
    // cannot recover
    for (auto& v : m.dec_.weight.mutable_value().storage()) v = std::abs(v);
    m.dec_.bias.mutable_value().fill(0.0);
    return m;
  }

  std::size_t width() const { return width_; }
  ParameterStore& store() { return *store_; }
  const ParameterStore& store() const { return *store_; }
  const Conv2dLayer& conv() const { return conv_; }

  CaeOutput forward(const Tensor& a, bool training) const {
    if (a.rank() != 4 || a.dim(1) != static_cast<std::size_t>(kNumOps) || a.dim(2) != 13 || a.dim(3) != 13)
      throw ShapeError("cae: expected [B,4,13,13], got " + shape_str(a.shape()));
    const std::size_t B = a.dim(0), W = width_;
    Tensor o = ops::relu(bn_(conv_(a), training));
    Tensor v = ops::global_avg_pool(o);
    Tensor g = ops::scale(ops::gram(ops::reshape(o, {B * W, 13, 13})), 1.0 / 13.0);
    Tensor recon = ops::relu(dec_(ops::reshape(g, {B, W, 13, 13})));
    return {v, ops::mul(recon, Tensor::constant(legal_slot_mask(B)))};
  }

  CaeOutput forward(const std::vector<CellMatrix>& ms, bool training) const {
    return forward(Tensor::constant(matrices_to_array(ms)), training);
  }

  // Eval-mode embeddings [n, W], no gradient recording.
  Array embed(const std::vector<CellMatrix>& ms, std::size_t chunk = 256) const {
    NoGradGuard guard;
    Array out(Shape{ms.size(), width_});
    for (std::size_t lo = 0; lo < ms.size(); lo += chunk) {
      const std::size_t hi = std::min(ms.size(), lo + chunk);
      std::vector<CellMatrix> part(ms.begin() + static_cast<std::ptrdiff_t>(lo), ms.begin() + static_cast<std::ptrdiff_t>(hi));
      const auto v = forward(part, false).embedding.value();
      std::copy(v.values().begin(), v.values().end(), out.data() + lo * width_);
    }
    return out;
  }

  // Mean squared reconstruction error in evaluation mode.
  double reconstruction_loss(const std::vector<CellMatrix>& ms, std::size_t chunk = 256) const {
    NoGradGuard guard;
    double s = 0.0;
    for (std::size_t lo = 0; lo < ms.size(); lo += chunk) {
      const std::size_t hi = std::min(ms.size(), lo + chunk);
      std::vector<CellMatrix> part(ms.begin() + static_cast<std::ptrdiff_t>(lo), ms.begin() + static_cast<std::ptrdiff_t>(hi));
      const Array target = matrices_to_array(part);
      s += loss::mse(forward(Tensor::constant(target), false).recon, target).item() * static_cast<double>(part.size());
    }
    return ms.empty() ? 0.0 : s / static_cast<double>(ms.size());
  }

 private:
  std::unique_ptr<ParameterStore> store_;
  std::size_t width_ = 0;
  Conv2dLayer conv_;
  BatchNormLayer bn_;
  Conv2dLayer dec_;
};

inline void save_cae(const CaeModel& m, const std::string& path) { save_parameters(m.store(), path); }

// The width is recovered from the stored encoder weight.
inline CaeModel load_cae(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  const auto records = read_checkpoint(is);
  std::size_t width = 0;
  for (const auto& r : records)
    if (r.name == "cae.conv.weight" && r.value.rank() == 4) width = r.value.dim(0);
  if (width == 0) throw ParseError(path + " is not a CAE checkpoint");
  CaeModel m = CaeModel::create(width, 0);
  is.clear();
  is.seekg(0);
  load_parameters(m.store(), is);
  return m;
}

struct AutoencoderTrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr = 1e-2;
  double test_fraction = 0.01;  // 8k of 800k
  std::uint64_t seed = 0;
};

inline nlohmann::json ae_config_to_json(const AutoencoderTrainConfig& c) {
  return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr}, {"test_fraction", c.test_fraction},
          {"seed", c.seed}};
}

inline AutoencoderTrainConfig ae_config_from_json(const nlohmann::json& j, AutoencoderTrainConfig c = {}) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.test_fraction = j.value("test_fraction", c.test_fraction);
  c.seed = j.value("seed", c.seed);
  if (c.batch_size == 0) throw ConfigError("autoencoder config: batch_size must be >= 1");
  return c;
}

struct LossRecord {
  std::size_t epoch = 0;  // 0 = untrained model
  double train = 0.0;
  double test = 0.0;
};

inline std::string loss_history_csv(const std::vector<LossRecord>& h) {
  std::string s = "epoch,train,test\n";
  char buf[96];
  for (const auto& r : h) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r.epoch, r.train, r.test);
    s += buf;
  }
  return s;
}

// Deterministic train/test partition of a corpus.
struct CorpusSplit {
  std::vector<std::size_t> train, test;
};

inline CorpusSplit split_corpus(std::size_t n, double test_fraction, std::uint64_t seed) {
  if (n < 2) throw ConfigError("corpus needs at least two matrices");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng = make_rng(seed, 0x73706c74);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  return {{idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end()},
          {idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test)}};
}

// Generic mini-batch loop shared by the two autoencoders. `step_loss` builds
// the training loss of one batch; `eval_loss` measures a set in eval mode.
template <class StepLoss, class EvalLoss>
std::vector<LossRecord> train_autoencoder(ParameterStore& store, const std::vector<CellMatrix>& corpus,
                                          const CorpusSplit& split, const AutoencoderTrainConfig& cfg,
                                          StepLoss step_loss, EvalLoss eval_loss) {
  const auto train = gather(corpus, split.train), test = gather(corpus, split.test);
  std::vector<LossRecord> history;
  history.push_back({0, eval_loss(train), eval_loss(test)});
  Adam opt(store.tensors(), AdamConfig{.lr = cfg.lr});
  const std::size_t B = std::min(cfg.batch_size, train.size());
  const std::size_t steps = (train.size() + B - 1) / B;
  const auto sched = LrSchedule::one_cycle(cfg.lr, std::max<std::size_t>(1, steps * cfg.epochs));
  Rng rng = make_rng(cfg.seed, 0x6165);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t t = 0;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t lo = s * B, hi = std::min(order.size(), lo + B);
      if (hi - lo < 2 && train.size() >= 2) continue;
      std::vector<CellMatrix> batch;
      for (std::size_t k = lo; k < hi; ++k) batch.push_back(train[order[k]]);
      opt.set_lr(schedule_lr(sched, t++));
      opt.zero_grad();
      Tensor l = step_loss(batch, rng);
      backward(l);
      opt.step();
    }
    history.push_back({e, eval_loss(train), eval_loss(test)});
  }
  return history;
}

struct CaeTraining {
  CaeModel model;
  std::vector<LossRecord> history;
};

inline CaeTraining train_cae(const std::vector<CellMatrix>& corpus, std::size_t width,
                             const AutoencoderTrainConfig& cfg, const CorpusSplit* split = nullptr) {
  if (corpus.empty()) throw ConfigError("train_cae: empty corpus");
  const CorpusSplit sp = split ? *split : split_corpus(corpus.size(), cfg.test_fraction, cfg.seed);
  CaeTraining out{CaeModel::create(width, cfg.seed), {}};
  CaeModel& m = out.model;
  out.history = train_autoencoder(
      m.store(), corpus, sp, cfg,
      [&](const std::vector<CellMatrix>& batch, Rng&) {
        const Array target = matrices_to_array(batch);
        return loss::mse(m.forward(Tensor::constant(target), true).recon, target);
      },
      [&](const std::vector<CellMatrix>& set) { return m.reconstruction_loss(set); });
  return out;
}

}  // namespace mstar
