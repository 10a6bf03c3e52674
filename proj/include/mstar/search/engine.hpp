#pragma once

// Surrogate-guided search: population, expected improvement, candidate
// proposal, and the main loop.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <functional>
#include <numbers>
#include <optional>
#include <thread>
#include <unordered_set>
#include <vector>

#include "mstar/search/config.hpp"
#include "mstar/search/evaluator.hpp"
#include "mstar/surrogate.hpp"

namespace mstar {

using Logger = std::function<void(const std::string&)>;

enum class Provenance { Random, Mutated };

inline const char* provenance_name(Provenance p) { return p == Provenance::Random ? "random" : "mutated"; }

struct PopulationEntry {
  std::size_t id = 0;  // insertion order
  CellMatrix matrix;
  double label = 0.0;  // raw metric as returned by the evaluator
  Provenance provenance = Provenance::Random;
  std::optional<std::size_t> parent;
  std::size_t iteration = 0;  // 0 = initial population
};

// Min-max snapshot. Labels are never rewritten; normalised values are read
// through the snapshot taken at the last refresh.
struct Normalizer {
  double lo = 0.0, hi = 1.0;
  bool higher_is_better = true;

  double operator()(double raw) const {
    const double x = higher_is_better ? raw : -raw;
    if (hi == lo) return 0.5;
    return (x - lo) / (hi - lo);
  }
};

class Population {
 public:
  bool higher_is_better = true;

  const std::vector<PopulationEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const PopulationEntry& operator[](std::size_t i) const { return entries_.at(i); }
  const Normalizer& normalizer() const { return norm_; }

  bool contains(const CellMatrix& m) const { return hashes_.count(m.hash()) && find(m) != nullptr; }

  const PopulationEntry* find(const CellMatrix& m) const {
    for (const auto& e : entries_)
      if (e.matrix == m) return &e;
    return nullptr;
  }

  const PopulationEntry& insert(PopulationEntry e) {
    if (!std::isfinite(e.label)) throw NumericError("population: label is not finite");
    e.id = entries_.size();
    hashes_.insert(e.matrix.hash());
    entries_.push_back(std::move(e));
    return entries_.back();
  }

  void refresh_normalizer() {
    norm_.higher_is_better = higher_is_better;
    if (entries_.empty()) return;
    norm_.lo = norm_.hi = higher_is_better ? entries_[0].label : -entries_[0].label;
    for (const auto& e : entries_) {
      const double x = higher_is_better ? e.label : -e.label;
      norm_.lo = std::min(norm_.lo, x);
      norm_.hi = std::max(norm_.hi, x);
    }
  }

  double normalized(std::size_t i) const { return norm_(entries_.at(i).label); }

  std::vector<double> normalized_labels() const {
    std::vector<double> out;
    for (const auto& e : entries_) out.push_back(norm_(e.label));
    return out;
  }

  // Best raw label in the metric's own direction.
  double best_label() const {
    if (entries_.empty()) throw ConfigError("population is empty");
    double b = entries_[0].label;
    for (const auto& e : entries_) b = higher_is_better ? std::max(b, e.label) : std::min(b, e.label);
    return b;
  }

  // Indices of the K best entries; ties keep insertion order.
  std::vector<std::size_t> top_k(std::size_t k) const {
    std::vector<std::size_t> idx(entries_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return higher_is_better ? entries_[a].label > entries_[b].label : entries_[a].label < entries_[b].label;
    });
    idx.resize(std::min(k, idx.size()));
    return idx;
  }

  // Order-sensitive hash over matrices and labels.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&](std::uint64_t v) {
      h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    };
    for (const auto& e : entries_) {
      mix(e.matrix.hash());
      std::uint64_t bits;
      std::memcpy(&bits, &e.label, sizeof bits);
      mix(bits);
    }
    return h;
  }

 private:
  std::vector<PopulationEntry> entries_;
  std::unordered_multiset<std::uint64_t> hashes_;
  Normalizer norm_;
};

// ---------------------------------------------------------------------------
// Acquisition

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// E[max(X - best - xi, 0)] for X ~ N(mean, std^2).
inline double expected_improvement(double mean, double std, double best, double xi) {
  if (!(std >= 0.0)) throw ConfigError("expected_improvement: std must be >= 0");
  const double d = mean - best - xi;
  if (std == 0.0) return std::max(d, 0.0);
  const double z = d / std;
  return d * normal_cdf(z) + std * normal_pdf(z);
}

// Indices of the q largest scores; ties keep the lower index.
inline std::vector<std::size_t> top_q(const std::vector<double>& scores, std::size_t q) {
  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(std::min(q, idx.size()));
  return idx;
}

// ---------------------------------------------------------------------------
// Population construction and proposal

inline std::uint64_t evaluation_seed(const SearchConfig& cfg, std::size_t entry_id) {
  return mix_seed(cfg.seed, 0x6576616c0000ull + entry_id);
}

// Calls the evaluator; failures are logged and reported as nullopt.
inline std::optional<double> try_evaluate(const Evaluator& ev, const CellMatrix& m, std::uint64_t seed,
                                          const Logger& log) {
  try {
    const double y = ev.evaluate(m, seed);
    if (!std::isfinite(y)) throw NumericError("evaluator returned a non-finite label");
    return y;
  } catch (const std::exception& e) {
    if (log) log(std::string("evaluation failed: ") + e.what());
    return std::nullopt;
  }
}

inline Population init_population(const SearchConfig& cfg, const Evaluator& ev, const SpaceConfig& space, Rng& rng,
                                  const Logger& log = {}) {
  cfg.check();
  Population pop;
  pop.higher_is_better = ev.higher_is_better();
  std::size_t failures = 0;
  while (pop.size() < cfg.n_init) {
    CellMatrix m = random_cell(space, rng);
    if (pop.contains(m)) continue;
    const auto y = try_evaluate(ev, m, evaluation_seed(cfg, pop.size()), log);
    if (!y) {
      if (++failures > cfg.evaluator_retries) throw Error("init_population: evaluator failed too many times");
      continue;
    }
    failures = 0;
    pop.insert({0, m, *y, Provenance::Random, std::nullopt, 0});
  }
  pop.refresh_normalizer();
  return pop;
}

struct Candidate {
  CellMatrix matrix;
  Provenance provenance = Provenance::Random;
  std::optional<std::size_t> parent;
};

// N_temp candidates: mutations of the top-K with the mutation probability,
// fresh random cells otherwise. A candidate equal to a population member or an
// earlier candidate is redrawn up to `proposal_retries` times, then admitted.
inline std::vector<Candidate> propose_candidates(const Population& pop, const SearchConfig& cfg,
                                                 const SpaceConfig& space, Rng& rng) {
  cfg.check();
  if (pop.size() < cfg.top_k) throw ConfigError("propose_candidates: population smaller than K");
  const auto parents = pop.top_k(cfg.top_k);
  std::vector<Candidate> out;
  auto seen = [&](const CellMatrix& m) {
    if (pop.contains(m)) return true;
    for (const auto& c : out)
      if (c.matrix == m) return true;
    return false;
  };
  for (std::size_t s = 0; s < cfg.n_temp; ++s) {
    Candidate c;
    for (std::size_t attempt = 0; attempt <= cfg.proposal_retries; ++attempt) {
      if (uniform01(rng) < cfg.mutation_probability) {
        const std::size_t p = parents[uniform_index(rng, parents.size())];
        c = {mutate(pop[p].matrix, cfg.mutation_fraction, space, rng), Provenance::Mutated, pop[p].id};
      } else {
        c = {random_cell(space, rng), Provenance::Random, std::nullopt};
      }
      if (!seen(c.matrix)) break;
    }
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Main loop

struct HistoryRow {
  std::size_t iteration = 0;  // 1-based
  std::size_t candidate = 0;  // index within P_temp
  Provenance provenance = Provenance::Random;
  double mean = 0.0, std = 0.0, ei = 0.0;
  bool chosen = false;
  std::optional<double> label;       // raw, chosen candidates only
  std::optional<double> normalized;  // under the iteration's snapshot
  std::optional<std::size_t> entry;  // population id once inserted
};

struct SearchResult {
  Population population;
  std::vector<HistoryRow> history;
  std::uint64_t encoder_hash_before = 0, encoder_hash_after = 0;
  std::size_t iterations_completed = 0;
};

// Carries the partial result when an evaluation aborts the loop.
class SearchAborted : public Error {
 public:
  SearchAborted(const std::string& what, SearchResult partial)
      : Error(what), partial_(std::make_shared<SearchResult>(std::move(partial))) {}
  const SearchResult& partial() const { return *partial_; }

 private:
  std::shared_ptr<SearchResult> partial_;
};

struct SearchOptions {
  std::size_t jobs = 1;  // concurrent evaluations of the Q chosen cells
  Logger log;
};

namespace detail {

inline Array gather_rows(const std::vector<std::vector<double>>& rows, std::size_t width) {
  Array a(Shape{rows.size(), width});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), a.data() + i * width);
  return a;
}

inline std::vector<std::vector<double>> split_rows(const Array& a) {
  std::vector<std::vector<double>> out(a.dim(0));
  const std::size_t w = a.dim(1);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].assign(a.data() + i * w, a.data() + (i + 1) * w);
  return out;
}

// Evaluates the items in parallel on up to `jobs` threads; results keep the
// input order.
inline std::vector<std::optional<double>> evaluate_all(const Evaluator& ev, const std::vector<CellMatrix>& ms,
                                                       const std::vector<std::uint64_t>& seeds, std::size_t jobs,
                                                       const Logger& log) {
  std::vector<std::optional<double>> out(ms.size());
  std::vector<std::string> errors(ms.size());
  auto run = [&](std::size_t i) {
    out[i] = try_evaluate(ev, ms[i], seeds[i], [&](const std::string& s) { errors[i] = s; });
  };
  if (jobs <= 1 || ms.size() <= 1) {
    for (std::size_t i = 0; i < ms.size(); ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(jobs, ms.size()); ++t)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next++) < ms.size();) run(i);
      });
    for (auto& th : pool) th.join();
  }
  if (log)
    for (const auto& e : errors)
      if (!e.empty()) log(e);
  return out;
}

}  // namespace detail

// Runs the search from a given initial population with a frozen encoder.
inline SearchResult search_loop(Population init, const SearchConfig& cfg, const Evaluator& ev, const CaeModel& cae,
                                const SpaceConfig& space, const SearchOptions& opt = {}) {
  cfg.check();
  if (init.size() < cfg.top_k) throw ConfigError("search_loop: initial population smaller than K");
  SearchResult res;
  res.population = std::move(init);
  Population& pop = res.population;
  res.encoder_hash_before = cae.store().hash();
  Rng rng = make_rng(cfg.seed, 0x7365617263);

  std::vector<std::vector<double>> emb = detail::split_rows(cae.embed([&] {
    std::vector<CellMatrix> ms;
    for (const auto& e : pop.entries()) ms.push_back(e.matrix);
    return ms;
  }()));
  auto ens = PredictorEnsemble::create(cfg.n_preds, cae.width(), mix_seed(cfg.seed, 0x656e73));
  auto fit = [&](std::size_t epochs, std::uint64_t round) {
    pop.refresh_normalizer();
    FitConfig fc{epochs, cfg.predictor_lr, cfg.predictor_batch, mix_seed(cfg.seed, round)};
    predictor_fit(ens, detail::gather_rows(emb, cae.width()), pop.normalized_labels(), fc);
  };
  fit(cfg.pretrain_epochs, 0);

  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    fit(cfg.refit_epochs, it);
    const auto cands = propose_candidates(pop, cfg, space, rng);
    std::vector<CellMatrix> ms;
    for (const auto& c : cands) ms.push_back(c.matrix);
    const Array cand_emb = cae.embed(ms);
    const auto stats = ensemble_stats(ens, cand_emb);
    double best = 0.0;
    {
      const auto norm = pop.normalized_labels();
      best = *std::max_element(norm.begin(), norm.end());
    }
    std::vector<double> ei;
    for (const auto& s : stats) ei.push_back(expected_improvement(s.mean, s.std, best, cfg.xi));
    const auto chosen = top_q(ei, cfg.q);

    const std::size_t first_row = res.history.size();
    for (std::size_t c = 0; c < cands.size(); ++c)
      res.history.push_back({it, c, cands[c].provenance, stats[c].mean, stats[c].std, ei[c], false, {}, {}, {}});

    std::vector<CellMatrix> picked;
    std::vector<std::uint64_t> seeds;
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      picked.push_back(cands[chosen[k]].matrix);
      seeds.push_back(evaluation_seed(cfg, pop.size() + k));
    }
    const auto labels = detail::evaluate_all(ev, picked, seeds, opt.jobs, opt.log);
    const Normalizer snapshot = pop.normalizer();
    const auto picked_emb = detail::split_rows(cae.embed(picked));
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      auto& row = res.history[first_row + chosen[k]];
      row.chosen = true;
      if (!labels[k]) {
        res.encoder_hash_after = cae.store().hash();
        throw SearchAborted("search_loop: evaluation failed in iteration " + std::to_string(it), std::move(res));
      }
      row.label = *labels[k];
      row.normalized = snapshot(*labels[k]);
      const auto& c = cands[chosen[k]];
      row.entry = pop.insert({0, c.matrix, *labels[k], c.provenance, c.parent, it}).id;
      emb.push_back(picked_emb[k]);
    }
    res.iterations_completed = it;
    if (opt.log) opt.log("iteration " + std::to_string(it) + ": best " + std::to_string(pop.best_label()));
  }
  pop.refresh_normalizer();
  res.encoder_hash_after = cae.store().hash();
  return res;
}

inline SearchResult search_loop(const SearchConfig& cfg, const Evaluator& ev, const CaeModel& cae,
                                const SpaceConfig& space, const SearchOptions& opt = {}) {
  Rng rng = make_rng(cfg.seed, 0x696e6974);
  return search_loop(init_population(cfg, ev, space, rng, opt.log), cfg, ev, cae, space, opt);
}

// Budget-matched baseline: `budget` distinct random cells, all evaluated.
inline Population random_search(std::size_t budget, const SearchConfig& cfg, const Evaluator& ev,
                                const SpaceConfig& space, Rng& rng, const Logger& log = {}) {
  SearchConfig c = cfg;
  c.n_init = budget;
  c.top_k = std::min(c.top_k, budget);
  return init_population(c, ev, space, rng, log);
}

}  // namespace mstar
