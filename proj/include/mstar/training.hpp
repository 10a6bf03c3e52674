#pragma once

// Mini-batch supervised training of compiled networks.

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "mstar/cell_compiler.hpp"
#include "mstar/data_io.hpp"

namespace mstar {

enum class LossKind { CrossEntropy, BinaryCrossEntropy, L2 };

struct TrainConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.0;
  bool decoupled = true;  // AdamW
  bool one_cycle = true;
  LossKind loss = LossKind::CrossEntropy;
  std::uint64_t seed = 0;
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  const char* loss = c.loss == LossKind::CrossEntropy ? "ce" : c.loss == LossKind::L2 ? "l2" : "bce";
  return {{"epochs", c.epochs},       {"batch_size", c.batch_size}, {"lr", c.lr},
          {"weight_decay", c.weight_decay}, {"decoupled", c.decoupled},   {"one_cycle", c.one_cycle},
          {"loss", loss},             {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.decoupled = j.value("decoupled", c.decoupled);
    c.one_cycle = j.value("one_cycle", c.one_cycle);
    c.seed = j.value("seed", c.seed);
    if (j.contains("loss")) {
      const auto s = j.at("loss").get<std::string>();
      if (s == "ce") c.loss = LossKind::CrossEntropy;
      else if (s == "bce") c.loss = LossKind::BinaryCrossEntropy;
      else if (s == "l2") c.loss = LossKind::L2;
      else throw ConfigError("train config: loss must be ce, bce or l2");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  if (c.batch_size == 0) throw ConfigError("train config: batch_size must be >= 1");
  return c;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
};

inline Tensor batch_loss(const Tensor& out, const Dataset& d, const std::vector<std::size_t>& idx, LossKind kind) {
  switch (kind) {
    case LossKind::CrossEntropy: return loss::cross_entropy(out, d.batch_labels(idx));
    case LossKind::BinaryCrossEntropy: {
      Array t(out.shape());
      const std::size_t K = out.dim(1);
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const int y = d.int_labels[idx[b]];
        for (std::size_t k = 0; k < K; ++k) t[b * K + k] = K == 1 ? static_cast<double>(y) : (static_cast<int>(k) == y);
      }
      return loss::bce(ops::sigmoid(out), t);
    }
    case LossKind::L2: {
      Array t(out.shape());
      for (std::size_t b = 0; b < idx.size(); ++b)
        t[b] = d.label_kind == LabelKind::Real ? d.real_labels[idx[b]] : d.int_labels[idx[b]];
      return loss::mse(out, t);
    }
  }
  throw ConfigError("unknown loss");
}

// Trains `net` on the train split; returns the mean loss of every epoch.
inline std::vector<EpochRecord> train_network(Network& net, const Dataset& data, const TrainConfig& cfg) {
  auto train_idx = data.indices(Split::Train);
  if (train_idx.empty()) throw ConfigError("train: dataset has no training samples");
  const std::size_t B = std::min(cfg.batch_size, train_idx.size());
  const std::size_t steps_per_epoch = (train_idx.size() + B - 1) / B;
  Adam opt(net.store().tensors(), AdamConfig{.lr = cfg.lr, .weight_decay = cfg.weight_decay, .decoupled = cfg.decoupled});
  const LrSchedule sched = cfg.one_cycle ? LrSchedule::one_cycle(cfg.lr, std::max<std::size_t>(1, cfg.epochs * steps_per_epoch))
                                         : LrSchedule::constant(cfg.lr);
  Rng rng = make_rng(cfg.seed, 0x747261696e);
  std::vector<EpochRecord> history;
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = train_idx.size(); i > 1; --i) std::swap(train_idx[i - 1], train_idx[uniform_index(rng, i)]);
    double total = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t lo = s * B, hi = std::min(train_idx.size(), lo + B);
      // a trailing batch of one sample cannot be batch-normalised
      if (hi - lo < 2 && s > 0) continue;
      std::vector<std::size_t> idx(train_idx.begin() + static_cast<std::ptrdiff_t>(lo),
                                   train_idx.begin() + static_cast<std::ptrdiff_t>(hi));
      opt.set_lr(schedule_lr(sched, step++));
      opt.zero_grad();
      Tensor l = batch_loss(net.forward(Tensor::constant(data.batch_inputs(idx)), true), data, idx, cfg.loss);
      backward(l);
      opt.step();
      total += l.item() * static_cast<double>(idx.size());
    }
    history.push_back({e + 1, total / static_cast<double>(train_idx.size())});
  }
  return history;
}

// Eval-mode logits for a list of samples, computed in chunks.
inline Array predict(const Network& net, const Dataset& data, const std::vector<std::size_t>& idx,
                     std::size_t chunk = 128) {
  NoGradGuard guard;
  Array out;
  std::vector<double> all;
  std::size_t K = 0;
  for (std::size_t lo = 0; lo < idx.size(); lo += chunk) {
    std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(lo),
                                  idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), lo + chunk)));
    const auto y = net.forward(Tensor::constant(data.batch_inputs(part)), false);
    K = y.size() / part.size();
    all.insert(all.end(), y.value().values().begin(), y.value().values().end());
  }
  return Array(Shape{idx.size(), K}, std::move(all));
}

inline double accuracy(const Array& logits, const Dataset& data, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  const std::size_t K = logits.dim(1);
  std::size_t hit = 0;
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const double* z = logits.data() + b * K;
    int pred = 0;
    if (K == 1) pred = z[0] > 0.0;
    else pred = static_cast<int>(std::max_element(z, z + K) - z);
    hit += pred == data.int_labels[idx[b]];
  }
  return static_cast<double>(hit) / static_cast<double>(idx.size());
}

inline double evaluate_accuracy(const Network& net, const Dataset& data, Split split) {
  const auto idx = data.indices(split);
  return accuracy(predict(net, data, idx), data, idx);
}

}  // namespace mstar
