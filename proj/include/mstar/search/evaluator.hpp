#pragma once

// Evaluators turn a cell into a raw label. Both implementations are pure
// functions of (matrix, seed), so concurrent calls on one instance are safe.

#include <algorithm>
#include <memory>
#include <string>

#include <json.hpp>

#include "mstar/cell_compiler.hpp"
#include "mstar/data_io.hpp"
#include "mstar/search_space.hpp"
#include "mstar/training.hpp"

namespace mstar {

class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual double evaluate(const CellMatrix& m, std::uint64_t seed) const = 0;
  virtual std::string id() const = 0;
  virtual nlohmann::json describe() const { return {{"id", id()}}; }
  // Lower-is-better metrics are negated before min-max normalisation.
  virtual bool higher_is_better() const { return true; }
};

// Longest chain of live edges from the input node to every node. Orphans feed
// the output node through the aggregation path, which adds no hop.
inline std::array<int, kNumNodes> path_depths(const CellGraph& g) {
  std::array<int, kNumNodes> d{};
  d.fill(-1);
  d[kInputNode] = 0;
  for (int j = 1; j < kNumNodes; ++j)
    for (const auto* e : g.incoming(j))
      if (d[static_cast<std::size_t>(e->src)] >= 0)
        d[static_cast<std::size_t>(j)] = std::max(d[static_cast<std::size_t>(j)], d[static_cast<std::size_t>(e->src)] + 1);
  for (int o : g.aggregation) d[kOutputNode] = std::max(d[kOutputNode], d[static_cast<std::size_t>(o)]);
  return d;
}

// Weight count of the convolution edges, sum of k * C_src * C_dst.
inline double conv_parameter_proxy(const CellGraph& g) {
  double p = 0.0;
  for (const auto& e : g.edges)
    if (e.op == OpKind::Conv)
      p += static_cast<double>(e.kernel) * g.nodes[static_cast<std::size_t>(e.src)].width *
           g.nodes[static_cast<std::size_t>(e.dst)].width;
  return p;
}

struct SyntheticWeights {
  double coverage = 0.8;
  double depth = 0.2;
  double excess = 0.3;
  double params = 0.2;
};

struct SyntheticTerms {
  double coverage = 0.0;  // |RF_out ∩ T| / |T|
  double depth = 0.0;     // (longest input-output path - 1) / 3, in [0,1]
  double excess = 0.0;    // share of output RFs above max(T)
  double params = 0.0;    // min(1, max(0, proxy / budget - 1))
  double score = 0.0;
};

// Closed-form benchmark over the receptive fields of the output node:
//   score = clamp(w_c coverage + w_d depth - w_e excess - w_p params, 0, 1)
class SyntheticBenchmark : public Evaluator {
 public:
  RfSet targets{9, 17, 25, 41};
  SyntheticWeights weights;
  double param_budget = 5e5;
  SpaceConfig space;

  SyntheticTerms terms(const CellMatrix& m) const {
    if (targets.empty()) throw ConfigError("synthetic benchmark: target set is empty");
    const CellGraph g = preprocess(m, space);
    const RfSet out = receptive_fields(g)[kOutputNode];
    SyntheticTerms t;
    std::size_t hit = 0, above = 0;
    for (int r : out) {
      hit += targets.count(r);
      above += r > *targets.rbegin();
    }
    t.coverage = static_cast<double>(hit) / static_cast<double>(targets.size());
    t.excess = out.empty() ? 0.0 : static_cast<double>(above) / static_cast<double>(out.size());
    const int depth = path_depths(g)[kOutputNode];
    t.depth = std::clamp((depth - 1) / 3.0, 0.0, 1.0);
    t.params = std::min(1.0, std::max(0.0, conv_parameter_proxy(g) / param_budget - 1.0));
    t.score = std::clamp(weights.coverage * t.coverage + weights.depth * t.depth - weights.excess * t.excess -
                             weights.params * t.params,
                         0.0, 1.0);
    return t;
  }

  double evaluate(const CellMatrix& m, std::uint64_t) const override { return terms(m).score; }
  std::string id() const override { return "synthetic"; }

  nlohmann::json describe() const override {
    return {{"id", id()},
            {"targets", std::vector<int>(targets.begin(), targets.end())},
            {"weights",
             {{"coverage", weights.coverage},
              {"depth", weights.depth},
              {"excess", weights.excess},
              {"params", weights.params}}},
            {"param_budget", param_budget}};
  }
};

inline SyntheticBenchmark synthetic_from_json(const nlohmann::json& j) {
  SyntheticBenchmark b;
  try {
    if (j.contains("targets")) {
      b.targets.clear();
      for (int t : j.at("targets").get<std::vector<int>>()) b.targets.insert(t);
    }
    if (j.contains("weights")) {
      const auto& w = j.at("weights");
      b.weights.coverage = w.value("coverage", b.weights.coverage);
      b.weights.depth = w.value("depth", b.weights.depth);
      b.weights.excess = w.value("excess", b.weights.excess);
      b.weights.params = w.value("params", b.weights.params);
    }
    b.param_budget = j.value("param_budget", b.param_budget);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic benchmark: ") + e.what());
  }
  if (b.targets.empty()) throw ConfigError("synthetic benchmark: target set is empty");
  if (!(b.param_budget > 0)) throw ConfigError("synthetic benchmark: param_budget must be positive");
  return b;
}

// Compiles the cell, trains it on the train split and reports validation
// accuracy.
class TrainerEvaluator : public Evaluator {
 public:
  TrainerEvaluator(std::shared_ptr<const Dataset> data, NetworkSpec spec, TrainConfig train, SpaceConfig space = {})
      : data_(std::move(data)), spec_(spec), train_(train), space_(std::move(space)) {
    if (!data_) throw ConfigError("trainer evaluator: no dataset");
    if (data_->label_kind != LabelKind::Integer) throw ConfigError("trainer evaluator: needs class labels");
    spec_.input_channels = static_cast<int>(data_->channels);
    spec_.input_length = data_->length;
    spec_.output_width = static_cast<int>(data_->num_classes());
    space_.node_widths[kInputNode] = spec_.input_channels;
  }

  double evaluate(const CellMatrix& m, std::uint64_t seed) const override {
    NetworkSpec s = spec_;
    s.seed = seed;
    TrainConfig t = train_;
    t.seed = seed;
    Network net = compile(m, space_, s);
    train_network(net, *data_, t);
    return evaluate_accuracy(net, *data_, Split::Val);
  }

  std::string id() const override { return "trainer"; }

  nlohmann::json describe() const override {
    return {{"id", id()}, {"spec", spec_to_json(spec_)}, {"train", train_config_to_json(train_)},
            {"dataset_hash", data_->hash()}};
  }

 private:
  std::shared_ptr<const Dataset> data_;
  NetworkSpec spec_;
  TrainConfig train_;
  SpaceConfig space_;
};

}  // namespace mstar
