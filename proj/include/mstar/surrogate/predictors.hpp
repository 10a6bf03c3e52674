#pragma once

// Performance predictors: an ensemble of linear+sigmoid heads over frozen CAE
// embeddings, the end-to-end convolutional baseline, and rank correlation.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <vector>

#include "mstar/surrogate/cae.hpp"

namespace mstar {

struct FitConfig {
  std::size_t epochs = 10;
  double lr = 1e-2;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

inline void check_labels(const std::vector<double>& labels) {
  for (double y : labels)
    if (!(y >= 0.0 && y <= 1.0)) throw ConfigError("predictor labels must lie in [0,1], got " + std::to_string(y));
}

// Mini-batch L2 regression of a sigmoid model on [0,1] labels.
template <class Forward>
void fit_regressor(ParameterStore& store, std::size_t n, const std::vector<double>& labels, const FitConfig& cfg,
                   std::uint64_t stream, Forward forward) {
  if (cfg.epochs == 0 || n == 0) return;
  Adam opt(store.tensors(), AdamConfig{.lr = cfg.lr});
  Rng rng = make_rng(cfg.seed, stream);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t B = std::min(cfg.batch_size, n);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    for (std::size_t lo = 0; lo < n; lo += B) {
      const std::size_t hi = std::min(n, lo + B);
      if (hi - lo < 2 && n >= 2) continue;
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(hi));
      Array t(Shape{idx.size(), 1});
      for (std::size_t k = 0; k < idx.size(); ++k) t[k] = labels[idx[k]];
      opt.zero_grad();
      backward(loss::mse(forward(idx, true), t));
      opt.step();
    }
  }
}

class PredictorEnsemble {
 public:

  // Each head gets its own initialisation; that is the only source of diversity.
  static PredictorEnsemble create(std::size_t heads, std::size_t in, std::uint64_t seed) {
    if (heads == 0 || in == 0) throw ConfigError("ensemble: sizes must be positive");
    PredictorEnsemble e;
    e.in_ = in;
    for (std::size_t h = 0; h < heads; ++h) {
      Rng rng = make_rng(seed, 0x70726564 + h);
      e.stores_.push_back(std::make_unique<ParameterStore>());
      e.heads_.push_back(LinearLayer::create(*e.stores_.back(), "pred" + std::to_string(h), in, 1, rng));
    }
    return e;
  }

  std::size_t size() const { return heads_.size(); }
  std::size_t input_width() const { return in_; }
  const LinearLayer& head(std::size_t h) const { return heads_.at(h); }
  ParameterStore& head_store(std::size_t h) { return *stores_.at(h); }

  std::uint64_t hash() const {
    std::uint64_t x = 0;
    for (const auto& s : stores_) x = x * 0x100000001b3ull ^ s->hash();
    return x;
  }

  Tensor head_forward(std::size_t h, const Tensor& emb) const { return ops::sigmoid(heads_.at(h)(emb)); }

  // [n, heads] matrix of head outputs.
  Array predict_all(const Array& emb) const {
    NoGradGuard guard;
    check_input(emb);
    const std::size_t n = emb.dim(0);
    Array out(Shape{n, heads_.size()});
    const Tensor x = Tensor::constant(emb);
    for (std::size_t h = 0; h < heads_.size(); ++h) {
      const auto y = head_forward(h, x).value();
      for (std::size_t i = 0; i < n; ++i) out[i * heads_.size() + h] = y[i];
    }
    return out;
  }

  void check_input(const Array& emb) const {
    if (emb.rank() != 2 || emb.dim(1) != in_)
      throw ShapeError("ensemble: expected embeddings [n, " + std::to_string(in_) + "], got " + shape_str(emb.shape()));
  }

 private:
  std::vector<std::unique_ptr<ParameterStore>> stores_;
  std::vector<LinearLayer> heads_;
  std::size_t in_ = 0;
};

// Trains every head independently on the same (embedding, label) pairs.
inline void predictor_fit(PredictorEnsemble& ens, const Array& emb, const std::vector<double>& labels,
                          const FitConfig& cfg) {
  ens.check_input(emb);
  if (labels.size() != emb.dim(0)) throw ShapeError("predictor_fit: label count differs from embeddings");
  check_labels(labels);
  const std::size_t W = emb.dim(1);
  for (std::size_t h = 0; h < ens.size(); ++h) {
    fit_regressor(ens.head_store(h), labels.size(), labels, cfg, 0x666974 + h,
                  [&](const std::vector<std::size_t>& idx, bool) {
                    Array x(Shape{idx.size(), W});
                    for (std::size_t k = 0; k < idx.size(); ++k)
                      std::copy_n(emb.data() + idx[k] * W, W, x.data() + k * W);
                    return ens.head_forward(h, Tensor::constant(std::move(x)));
                  });
  }
}

struct EnsembleStats {
  double mean = 0.0;
  double std = 0.0;
};

inline EnsembleStats stats_of(const double* ys, std::size_t n) {
  if (n < 2) throw ConfigError("ensemble_stats: need at least two predictors for a standard deviation");
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) m += ys[i];
  m /= static_cast<double>(n);
  double v = 0.0;
  for (std::size_t i = 0; i < n; ++i) v += (ys[i] - m) * (ys[i] - m);
  return {m, std::sqrt(v / static_cast<double>(n - 1))};
}

// Sample mean and sample standard deviation (n-1) of the head outputs, per row.
inline std::vector<EnsembleStats> ensemble_stats(const PredictorEnsemble& ens, const Array& emb) {
  if (ens.size() < 2) throw ConfigError("ensemble_stats: need at least two predictors for a standard deviation");
  const Array all = ens.predict_all(emb);
  std::vector<EnsembleStats> out;
  for (std::size_t i = 0; i < emb.dim(0); ++i) out.push_back(stats_of(all.data() + i * ens.size(), ens.size()));
  return out;
}

// ---------------------------------------------------------------------------
// Convolutional predictor: conv3x3(4->W) + BN + ReLU + GAP, then four tanh
// feed-forward layers W -> W/2 -> W/4 -> W/8 -> 1 (halving rounded up) and a
// sigmoid output.

class ConvPredictor {
 public:
  ConvPredictor() : store_(std::make_unique<ParameterStore>()) {}
  ConvPredictor(ConvPredictor&&) = default;
  ConvPredictor& operator=(ConvPredictor&&) = default;

  static std::vector<std::size_t> layer_widths(std::size_t W) {
    std::vector<std::size_t> w{W};
    for (int i = 0; i < 3; ++i) w.push_back((w.back() + 1) / 2);
    w.push_back(1);
    return w;
  }

  static ConvPredictor create(std::size_t width, std::uint64_t seed) {
    if (width == 0) throw ConfigError("conv predictor: width must be positive");
    ConvPredictor p;
    Rng rng = make_rng(seed, 0x63707264);
    p.conv_ = Conv2dLayer::create(*p.store_, "cp.conv", 4, width, 3, 3, rng);
    p.bn_ = BatchNormLayer::create(*p.store_, "cp.bn", width);
    const auto w = layer_widths(width);
    for (std::size_t i = 0; i + 1 < w.size(); ++i)
      p.fc_.push_back(LinearLayer::create(*p.store_, "cp.fc" + std::to_string(i), w[i], w[i + 1], rng));
    return p;
  }

  ParameterStore& store() { return *store_; }
  const std::vector<LinearLayer>& layers() const { return fc_; }

  Tensor forward(const Tensor& a, bool training) const {
    Tensor h = ops::global_avg_pool(ops::relu(bn_(conv_(a), training)));
    for (std::size_t i = 0; i < fc_.size(); ++i) {
      h = fc_[i](h);
      if (i + 1 < fc_.size()) h = ops::tanh(h);
    }
    return ops::sigmoid(h);
  }

  std::vector<double> predict(const std::vector<CellMatrix>& ms) const {
    NoGradGuard guard;
    std::vector<double> out;
    for (std::size_t lo = 0; lo < ms.size(); lo += 256) {
      std::vector<CellMatrix> part(ms.begin() + static_cast<std::ptrdiff_t>(lo),
                                   ms.begin() + static_cast<std::ptrdiff_t>(std::min(ms.size(), lo + 256)));
      const auto y = forward(Tensor::constant(matrices_to_array(part)), false).value();
      out.insert(out.end(), y.values().begin(), y.values().end());
    }
    return out;
  }

 private:
  std::unique_ptr<ParameterStore> store_;
  Conv2dLayer conv_;
  BatchNormLayer bn_;
  std::vector<LinearLayer> fc_;
};

inline void conv_predictor_fit(ConvPredictor& p, const std::vector<CellMatrix>& ms, const std::vector<double>& labels,
                               const FitConfig& cfg) {
  if (labels.size() != ms.size()) throw ShapeError("conv_predictor_fit: label count differs from matrices");
  check_labels(labels);
  fit_regressor(p.store(), ms.size(), labels, cfg, 0x637066, [&](const std::vector<std::size_t>& idx, bool training) {
    return p.forward(Tensor::constant(matrices_to_array(gather(ms, idx))), training);
  });
}

// ---------------------------------------------------------------------------

// 1-based ranks, ties share their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> r(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return r;
}

// Pearson correlation of the average ranks. A constant input has no ordering
// and yields 0.
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw ShapeError("spearman: length mismatch");
  if (xs.size() < 2) throw ConfigError("spearman: need at least two points");
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace mstar
