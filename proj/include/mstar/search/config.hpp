#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "mstar/error.hpp"

namespace mstar {

struct SearchConfig {
  std::size_t n_init = 400;
  std::size_t n_preds = 10;
  std::size_t pretrain_epochs = 200;  // E_p
  std::size_t refit_epochs = 10;      // e_p
  std::size_t iterations = 50;        // E_s
  std::size_t top_k = 4;
  std::size_t n_temp = 24;
  std::size_t q = 4;
  double mutation_probability = 0.8;
  double mutation_fraction = 0.15;
  double xi = 0.01;
  double predictor_lr = 1e-2;
  std::size_t predictor_batch = 32;
  std::size_t proposal_retries = 8;
  std::size_t evaluator_retries = 8;
  std::uint64_t seed = 0;

  std::size_t final_population_size() const { return n_init + q * iterations; }

  void check() const {
    if (n_init == 0 || n_preds == 0 || top_k == 0 || n_temp == 0 || q == 0)
      throw ConfigError("search config: counts must be >= 1");
    if (q > n_temp) throw ConfigError("search config: Q must not exceed N_temp");
    if (top_k > n_init) throw ConfigError("search config: K must not exceed N_init");
    if (!(mutation_probability >= 0.0 && mutation_probability <= 1.0))
      throw ConfigError("search config: mutation probability must lie in [0,1]");
    if (!(mutation_fraction >= 0.0 && mutation_fraction <= 1.0))
      throw ConfigError("search config: mutation fraction must lie in [0,1]");
    if (!(xi >= 0.0)) throw ConfigError("search config: xi must be >= 0");
    if (predictor_batch == 0) throw ConfigError("search config: predictor batch must be >= 1");
  }
};

inline nlohmann::json search_config_to_json(const SearchConfig& c) {
  return {{"n_init", c.n_init},
          {"n_preds", c.n_preds},
          {"pretrain_epochs", c.pretrain_epochs},
          {"refit_epochs", c.refit_epochs},
          {"iterations", c.iterations},
          {"top_k", c.top_k},
          {"n_temp", c.n_temp},
          {"q", c.q},
          {"mutation_probability", c.mutation_probability},
          {"mutation_fraction", c.mutation_fraction},
          {"xi", c.xi},
          {"predictor_lr", c.predictor_lr},
          {"predictor_batch", c.predictor_batch},
          {"proposal_retries", c.proposal_retries},
          {"evaluator_retries", c.evaluator_retries},
          {"seed", c.seed}};
}

inline SearchConfig search_config_from_json(const nlohmann::json& j, SearchConfig c = {}) {
  try {
    c.n_init = j.value("n_init", c.n_init);
    c.n_preds = j.value("n_preds", c.n_preds);
    c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
    c.refit_epochs = j.value("refit_epochs", c.refit_epochs);
    c.iterations = j.value("iterations", c.iterations);
    c.top_k = j.value("top_k", c.top_k);
    c.n_temp = j.value("n_temp", c.n_temp);
    c.q = j.value("q", c.q);
    c.mutation_probability = j.value("mutation_probability", c.mutation_probability);
    c.mutation_fraction = j.value("mutation_fraction", c.mutation_fraction);
    c.xi = j.value("xi", c.xi);
    c.predictor_lr = j.value("predictor_lr", c.predictor_lr);
    c.predictor_batch = j.value("predictor_batch", c.predictor_batch);
    c.proposal_retries = j.value("proposal_retries", c.proposal_retries);
    c.evaluator_retries = j.value("evaluator_retries", c.evaluator_retries);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("search config: ") + e.what());
  }
  c.check();
  return c;
}

}  // namespace mstar
