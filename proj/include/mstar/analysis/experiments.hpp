#pragma once

// Node-removal ablation and the multi-scale motivation experiment.

#include <string>
#include <vector>

#include "mstar/cell_compiler.hpp"
#include "mstar/search/evaluator.hpp"
#include "mstar/stats.hpp"
#include "mstar/training.hpp"

namespace mstar {

struct AblationRow {
  std::vector<int> removed;  // empty = intact cell
  bool valid = true;
  std::string reason;  // why an invalid set was rejected
  std::vector<double> metrics;
  double mean = 0.0, std = 0.0;
};

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;
};

inline const std::vector<std::vector<int>>& default_ablation_sets() {
  static const std::vector<std::vector<int>> sets{{7}, {8}, {9}, {10}, {9, 10}, {11}};
  return sets;
}

// Drops every edge into or out of the given nodes.
inline CellMatrix remove_nodes(const CellMatrix& m, const std::vector<int>& nodes) {
  CellMatrix out = m;
  for (int n : nodes)
    for (int k = 0; k < kNumNodes; ++k) {
      if (k < n) out.clear_slot(k, n);
      if (k > n) out.clear_slot(n, k);
    }
  return out;
}

// Retrains from scratch per seed for the intact cell (first row) and for each
// node set. Only last-hidden-layer nodes may be removed, since their removal
// leaves every other node unchanged.
inline AblationReport ablate_nodes(const CellMatrix& m, const std::vector<std::vector<int>>& sets, const Evaluator& ev,
                                   const std::vector<std::uint64_t>& seeds, const SpaceConfig& space = {}) {
  if (seeds.empty()) throw ConfigError("ablation: at least one seed required");
  for (const auto& s : sets)
    for (int n : s)
      if (layer_of(n) != 3 || n >= kOutputNode)
        throw ConfigError("ablation: node " + std::to_string(n) + " is not in the last hidden layer");
  const auto intact = validate(m, space);
  if (!intact.valid) throw InvalidCellError(intact);
  AblationReport r;
  r.seeds = seeds;
  std::vector<std::vector<int>> all{{}};
  all.insert(all.end(), sets.begin(), sets.end());
  for (const auto& s : all) {
    AblationRow row;
    row.removed = s;
    const CellMatrix cut = remove_nodes(m, s);
    const auto rep = validate(cut, space);
    if (!rep.valid) {
      row.valid = false;
      row.reason = rep.summary();
      r.rows.push_back(std::move(row));
      continue;
    }
    for (auto seed : seeds) row.metrics.push_back(ev.evaluate(cut, seed));
    row.mean = mean_of(row.metrics);
    row.std = sample_std(row.metrics);
    r.rows.push_back(std::move(row));
  }
  return r;
}

inline std::string node_set_name(const std::vector<int>& s) {
  if (s.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "+N" : "N") + std::to_string(s[i]);
  return out;
}

inline std::string ablation_csv(const AblationReport& r) {
  std::string s = "removed,valid,mean,std";
  for (auto seed : r.seeds) s += ",seed_" + std::to_string(seed);
  s += '\n';
  char buf[64];
  for (const auto& row : r.rows) {
    s += node_set_name(row.removed) + (row.valid ? ",1" : ",0");
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g", row.mean, row.std);
    s += buf;
    for (std::size_t i = 0; i < r.seeds.size(); ++i) {
      if (i < row.metrics.size()) {
        std::snprintf(buf, sizeof buf, ",%.17g", row.metrics[i]);
        s += buf;
      } else {
        s += ',';
      }
    }
    s += '\n';
  }
  return s;
}

// ---------------------------------------------------------------------------

struct MultiscaleRow {
  MotivationKind kind = MotivationKind::All;
  int width = 0;
  std::size_t parameters = 0;
  std::vector<double> metrics;  // test accuracy per seed
  double mean = 0.0, std = 0.0;
};

struct MultiscaleConfig {
  MotivationConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

// Trains every motivation model once per seed and reports test accuracy.
inline std::vector<MultiscaleRow> multiscale_experiment(const Dataset& data, const MultiscaleConfig& cfg,
                                                        const std::function<void(const std::string&)>& log = {}) {
  if (data.label_kind != LabelKind::Integer) throw ConfigError("multiscale: needs class labels");
  if (cfg.seeds.empty()) throw ConfigError("multiscale: at least one seed required");
  std::vector<MultiscaleRow> rows;
  for (auto kind : motivation_kinds()) {
    MultiscaleRow row;
    row.kind = kind;
    MotivationConfig mc = cfg.model;
    mc.input_channels = static_cast<int>(data.channels);
    mc.classes = static_cast<int>(data.num_classes());
    row.width = motivation_width(kind, mc);
    for (auto seed : cfg.seeds) {
      mc.seed = seed;
      Network net = build_motivation_model(kind, mc);
      row.parameters = count_parameters(net);
      TrainConfig t = cfg.train;
      t.seed = seed;
      train_network(net, data, t);
      row.metrics.push_back(evaluate_accuracy(net, data, Split::Test));
      if (log) log(motivation_name(kind) + " seed " + std::to_string(seed) + ": " + std::to_string(row.metrics.back()));
    }
    row.mean = mean_of(row.metrics);
    row.std = sample_std(row.metrics);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string multiscale_csv(const std::vector<MultiscaleRow>& rows) {
  std::string s = "model,width,parameters,mean,std\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%zu,%.17g,%.17g\n", motivation_name(r.kind).c_str(), r.width, r.parameters,
                  r.mean, r.std);
    s += buf;
  }
  return s;
}

}  // namespace mstar
