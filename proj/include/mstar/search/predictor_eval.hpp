#pragma once

// Held-out rank correlation of the two surrogates: frozen CAE embedding plus
// linear ensemble, and the end-to-end convolutional predictor. A set of
// distinct random cells is labelled by an evaluator and split 9-1.

#include <algorithm>
#include <string>
#include <vector>

#include "mstar/search/engine.hpp"
#include "mstar/surrogate/predictors.hpp"

namespace mstar {

struct PredictorEvalConfig {
  std::size_t cells = 800;
  double test_fraction = 0.1;
  std::size_t n_preds = 10;
  FitConfig ensemble_fit{.epochs = 50, .lr = 1e-2, .batch_size = 32, .seed = 0};
  std::size_t conv_width = 64;
  FitConfig conv_fit{.epochs = 50, .lr = 1e-3, .batch_size = 32, .seed = 0};

  void check() const {
    if (cells < 20) throw ConfigError("predictor eval: need at least 20 cells");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("predictor eval: test_fraction must lie in (0,1)");
    if (n_preds < 2) throw ConfigError("predictor eval: n_preds must be >= 2");
    if (conv_width == 0) throw ConfigError("predictor eval: conv_width must be positive");
  }
};

inline nlohmann::json fit_config_to_json(const FitConfig& c) {
  return {{"epochs", c.epochs}, {"lr", c.lr}, {"batch_size", c.batch_size}, {"seed", c.seed}};
}

inline FitConfig fit_config_from_json(const nlohmann::json& j, FitConfig c = {}) {
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  if (c.batch_size == 0) throw ConfigError("fit config: batch_size must be >= 1");
  return c;
}

inline nlohmann::json predictor_eval_to_json(const PredictorEvalConfig& c) {
  return {{"cells", c.cells},
          {"test_fraction", c.test_fraction},
          {"n_preds", c.n_preds},
          {"ensemble_fit", fit_config_to_json(c.ensemble_fit)},
          {"conv_width", c.conv_width},
          {"conv_fit", fit_config_to_json(c.conv_fit)}};
}

inline PredictorEvalConfig predictor_eval_from_json(const nlohmann::json& j, PredictorEvalConfig c = {}) {
  c.cells = j.value("cells", c.cells);
  c.test_fraction = j.value("test_fraction", c.test_fraction);
  c.n_preds = j.value("n_preds", c.n_preds);
  if (j.contains("ensemble_fit")) c.ensemble_fit = fit_config_from_json(j["ensemble_fit"], c.ensemble_fit);
  c.conv_width = j.value("conv_width", c.conv_width);
  if (j.contains("conv_fit")) c.conv_fit = fit_config_from_json(j["conv_fit"], c.conv_fit);
  c.check();
  return c;
}

struct PredictorEvalResult {
  std::uint64_t seed = 0;
  std::size_t train = 0, test = 0;
  double ensemble_spearman = 0.0;
  double conv_spearman = 0.0;
};

inline PredictorEvalResult evaluate_predictors(const CaeModel& cae, const Evaluator& ev, const SpaceConfig& space,
                                               const PredictorEvalConfig& cfg, std::uint64_t seed,
                                               const Logger& log = {}) {
  cfg.check();
  SearchConfig sc;
  sc.n_init = cfg.cells;
  sc.seed = seed;
  Rng rng = make_rng(seed, 0x70657661);
  const Population pop = init_population(sc, ev, space, rng, log);
  const auto split = split_corpus(pop.size(), cfg.test_fraction, seed);

  std::vector<CellMatrix> train_m, test_m;
  std::vector<double> train_raw, test_raw;
  for (auto i : split.train) {
    train_m.push_back(pop[i].matrix);
    train_raw.push_back(pop[i].label);
  }
  for (auto i : split.test) {
    test_m.push_back(pop[i].matrix);
    test_raw.push_back(pop[i].label);
  }
  // min-max over the training part only; test labels are only ranked
  Normalizer norm;
  norm.higher_is_better = ev.higher_is_better();
  const double sign = norm.higher_is_better ? 1.0 : -1.0;
  norm.lo = norm.hi = sign * train_raw.front();
  for (double y : train_raw) {
    norm.lo = std::min(norm.lo, sign * y);
    norm.hi = std::max(norm.hi, sign * y);
  }
  std::vector<double> train_y;
  for (double y : train_raw) train_y.push_back(norm(y));
  std::vector<double> test_y;
  for (double y : test_raw) test_y.push_back(sign * y);

  PredictorEvalResult r;
  r.seed = seed;
  r.train = train_m.size();
  r.test = test_m.size();

  PredictorEnsemble ens = PredictorEnsemble::create(cfg.n_preds, cae.width(), mix_seed(seed, 0x656e73));
  FitConfig ef = cfg.ensemble_fit;
  ef.seed = mix_seed(seed, ef.seed);
  predictor_fit(ens, cae.embed(train_m), train_y, ef);
  std::vector<double> ens_pred;
  for (const auto& s : ensemble_stats(ens, cae.embed(test_m))) ens_pred.push_back(s.mean);
  r.ensemble_spearman = spearman(ens_pred, test_y);
  if (log) log("seed " + std::to_string(seed) + " ensemble spearman " + std::to_string(r.ensemble_spearman));

  ConvPredictor conv = ConvPredictor::create(cfg.conv_width, mix_seed(seed, 0x636f6e76));
  FitConfig cf = cfg.conv_fit;
  cf.seed = mix_seed(seed, cf.seed);
  conv_predictor_fit(conv, train_m, train_y, cf);
  r.conv_spearman = spearman(conv.predict(test_m), test_y);
  if (log) log("seed " + std::to_string(seed) + " conv spearman " + std::to_string(r.conv_spearman));
  return r;
}

inline std::string predictor_eval_csv(const std::vector<PredictorEvalResult>& rs) {
  std::string s = "seed,train,test,ensemble_spearman,conv_spearman\n";
  char buf[128];
  for (const auto& r : rs) {
    std::snprintf(buf, sizeof buf, "%llu,%zu,%zu,%.17g,%.17g\n", static_cast<unsigned long long>(r.seed), r.train,
                  r.test, r.ensemble_spearman, r.conv_spearman);
    s += buf;
  }
  return s;
}

}  // namespace mstar
