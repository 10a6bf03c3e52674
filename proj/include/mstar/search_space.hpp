#pragma once

// Multi-scale cell search space: a 13-node DAG whose edges carry one of four
// operations, encoded as a 4x13x13 integer tensor of kernel sizes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mstar/error.hpp"
#include "mstar/rng.hpp"

namespace mstar {

inline constexpr int kNumNodes = 13;
inline constexpr int kNumOps = 4;
inline constexpr int kInputNode = 0;
inline constexpr int kOutputNode = 12;
inline constexpr const char* kCellFormatVersion = "mstar-cell-1";

enum class OpKind : int { Conv = 0, MaxPool = 1, AvgPool = 2, Identity = 3 };

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Conv: return "conv";
    case OpKind::MaxPool: return "max_pool";
    case OpKind::AvgPool: return "avg_pool";
    case OpKind::Identity: return "identity";
  }
  return "?";
}

// Layers: {0}, {1}, {2..6}, {7..11}, {12}.
constexpr int layer_of(int node) {
  if (node <= 0) return 0;
  if (node == 1) return 1;
  if (node <= 6) return 2;
  if (node <= 11) return 3;
  return 4;
}

constexpr bool is_legal_slot(int i, int j) {
  return i >= 0 && j < kNumNodes && i < j && layer_of(i) != layer_of(j);
}

// All (i, j) node pairs that may carry an edge, in row-major order.
inline const std::vector<std::pair<int, int>>& legal_slots() {
  static const std::vector<std::pair<int, int>> slots = [] {
    std::vector<std::pair<int, int>> s;
    for (int i = 0; i < kNumNodes; ++i)
      for (int j = i + 1; j < kNumNodes; ++j)
        if (is_legal_slot(i, j)) s.emplace_back(i, j);
    return s;
  }();
  return slots;
}

struct CellMatrix {
  std::array<int, kNumOps * kNumNodes * kNumNodes> ops{};

  static constexpr std::size_t index(int c, int i, int j) {
    return static_cast<std::size_t>((c * kNumNodes + i) * kNumNodes + j);
  }
  int& at(int c, int i, int j) { return ops[index(c, i, j)]; }
  int at(int c, int i, int j) const { return ops[index(c, i, j)]; }

  // Operation on slot (i, j): first nonzero channel, or nullopt-like -1.
  int op_channel(int i, int j) const {
    for (int c = 0; c < kNumOps; ++c)
      if (at(c, i, j) != 0) return c;
    return -1;
  }
  bool has_edge(int i, int j) const { return op_channel(i, j) >= 0; }
  void clear_slot(int i, int j) {
    for (int c = 0; c < kNumOps; ++c) at(c, i, j) = 0;
  }

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (int v : ops) {
      h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(v));
      h *= 0x100000001b3ull;
    }
    return h;
  }

  friend bool operator==(const CellMatrix&, const CellMatrix&) = default;
};

struct SpaceConfig {
  int default_width = 128;
  int bottleneck_width = 32;
  // Initial width per node. Node 0 is the configured cell input width; node 12
  // always runs at default_width so stacked cells and the orphan path line up.
  std::array<int, kNumNodes> node_widths{};
  double edge_probability = 0.3;
  std::vector<int> conv_kernels{1, 3, 5, 9, 19, 39};
  std::vector<int> pool_kernels{3, 5, 9};
  // When false, identity edges may only target the output node.
  bool identity_any_layer = true;
  std::uint64_t seed = 0;

  SpaceConfig() { assign_default_widths(); }

  void assign_default_widths() {
    node_widths.fill(default_width);
    for (int n : {2, 3, 7, 8}) node_widths[static_cast<std::size_t>(n)] = bottleneck_width;
  }

  void check() const {
    if (default_width <= 0 || bottleneck_width <= 0)
      throw ConfigError("space config: widths must be positive");
    for (int w : node_widths)
      if (w <= 0) throw ConfigError("space config: node widths must be positive");
    if (!(edge_probability >= 0.0 && edge_probability <= 1.0))
      throw ConfigError("space config: edge_probability must lie in [0,1]");
    if (conv_kernels.empty() || pool_kernels.empty())
      throw ConfigError("space config: kernel sets must be non-empty");
    for (int k : conv_kernels)
      if (k <= 0) throw ConfigError("space config: kernels must be positive");
    for (int k : pool_kernels)
      if (k <= 0) throw ConfigError("space config: kernels must be positive");
  }

  bool allows_kernel(int channel, int k) const {
    if (channel == static_cast<int>(OpKind::Identity)) return k == 1;
    const auto& set = channel == static_cast<int>(OpKind::Conv) ? conv_kernels : pool_kernels;
    return std::find(set.begin(), set.end(), k) != set.end();
  }
};

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  std::string rule;  // triangular | one-op-per-edge | kernel | same-layer | identity-layer | output-unreachable
  int channel = -1;
  int src = -1;
  int dst = -1;
  int node = -1;
  std::string message;
};

struct ValidationReport {
  bool valid = true;
  std::vector<Violation> violations;

  void add(Violation v) {
    valid = false;
    violations.push_back(std::move(v));
  }
  bool has_rule(const std::string& rule) const {
    return std::any_of(violations.begin(), violations.end(),
                       [&](const Violation& v) { return v.rule == rule; });
  }
  std::string summary() const {
    if (valid) return "valid";
    std::ostringstream os;
    for (const auto& v : violations) os << v.rule << ": " << v.message << "\n";
    return os.str();
  }
};

namespace detail {

inline std::string at_string(int c, int i, int j) {
  std::ostringstream os;
  os << "(" << c << "," << i << "," << j << ")";
  return os.str();
}

// Nodes reachable from the input along edges whose source is reachable.
inline std::array<bool, kNumNodes> reachable_nodes(const CellMatrix& m) {
  std::array<bool, kNumNodes> r{};
  r[kInputNode] = true;
  for (int i = 0; i < kNumNodes; ++i) {
    if (!r[static_cast<std::size_t>(i)]) continue;
    for (int j = i + 1; j < kNumNodes; ++j)
      if (m.has_edge(i, j)) r[static_cast<std::size_t>(j)] = true;
  }
  return r;
}

inline bool has_out_edge(const CellMatrix& m, int i) {
  for (int j = i + 1; j < kNumNodes; ++j)
    if (m.has_edge(i, j)) return true;
  return false;
}

}  // namespace detail

inline ValidationReport validate(const CellMatrix& m, const SpaceConfig& config = {}) {
  ValidationReport report;
  for (int c = 0; c < kNumOps; ++c) {
    for (int i = 0; i < kNumNodes; ++i) {
      for (int j = 0; j < kNumNodes; ++j) {
        const int v = m.at(c, i, j);
        if (v == 0) continue;
        const auto where = detail::at_string(c, i, j);
        if (j <= i) {
          report.add({"triangular", c, i, j, -1, "entry " + std::to_string(v) + " below diagonal at " + where});
          continue;
        }
        if (layer_of(i) == layer_of(j))
          report.add({"same-layer", c, i, j, -1, "same-layer edge at " + where});
        if (!config.allows_kernel(c, v))
          report.add({"kernel", c, i, j, -1, "illegal kernel " + std::to_string(v) + " at " + where});
        if (c == static_cast<int>(OpKind::Identity) && !config.identity_any_layer && j != kOutputNode)
          report.add({"identity-layer", c, i, j, -1, "identity edge not targeting output at " + where});
      }
    }
  }
  for (int i = 0; i < kNumNodes; ++i) {
    for (int j = i + 1; j < kNumNodes; ++j) {
      int count = 0;
      for (int c = 0; c < kNumOps; ++c) count += m.at(c, i, j) != 0;
      if (count > 1)
        report.add({"one-op-per-edge", -1, i, j, -1,
                    "slot (" + std::to_string(i) + "," + std::to_string(j) + ") carries " +
                        std::to_string(count) + " operations"});
    }
  }
  // The output is fed either directly or through the orphan aggregation path;
  // every reachable path ends in one of the two, so reachability reduces to
  // the input having a live outgoing edge.
  const auto reach = detail::reachable_nodes(m);
  bool orphan_exists = false;
  for (int n = 1; n < kOutputNode; ++n)
    if (reach[static_cast<std::size_t>(n)] && !detail::has_out_edge(m, n)) orphan_exists = true;
  if (!reach[kOutputNode] && !orphan_exists)
    report.add({"output-unreachable", -1, -1, -1, kOutputNode, "output unreachable"});
  return report;
}

// ---------------------------------------------------------------------------
// Preprocessing

struct CellNode {
  int index = 0;
  int layer = 0;
  int width = 0;
  bool reachable = false;
  bool orphan = false;
};

struct CellEdge {
  int src = 0;
  int dst = 0;
  OpKind op = OpKind::Identity;
  int kernel = 1;
  friend bool operator==(const CellEdge&, const CellEdge&) = default;
};

struct CellGraph {
  std::array<CellNode, kNumNodes> nodes{};
  std::vector<CellEdge> edges;       // live edges only, ordered by (src, dst)
  std::vector<int> aggregation;      // orphan nodes, ascending
  int default_width = 128;

  std::vector<const CellEdge*> incoming(int node) const {
    std::vector<const CellEdge*> in;
    for (const auto& e : edges)
      if (e.dst == node) in.push_back(&e);
    return in;
  }

  CellMatrix encode() const {
    CellMatrix m;
    for (const auto& e : edges) m.at(static_cast<int>(e.op), e.src, e.dst) = e.kernel;
    return m;
  }

  bool operator==(const CellGraph& o) const {
    if (edges != o.edges || aggregation != o.aggregation || default_width != o.default_width) return false;
    for (std::size_t n = 0; n < nodes.size(); ++n) {
      const auto &a = nodes[n], &b = o.nodes[n];
      if (a.index != b.index || a.layer != b.layer || a.width != b.width || a.reachable != b.reachable ||
          a.orphan != b.orphan)
        return false;
    }
    return true;
  }
};

class InvalidCellError : public Error {
 public:
  explicit InvalidCellError(ValidationReport r)
      : Error("invalid cell:\n" + r.summary()), report_(std::move(r)) {}
  const ValidationReport& report() const { return report_; }

 private:
  ValidationReport report_;
};

// Resolves channel widths in index order (a reachable node takes the minimum
// of its own configured width and the widths of its live predecessors) and
// collects orphans into the aggregation plan.
inline CellGraph preprocess(const CellMatrix& m, const SpaceConfig& config = {}) {
  auto report = validate(m, config);
  if (!report.valid) throw InvalidCellError(std::move(report));

  CellGraph g;
  g.default_width = config.default_width;
  const auto reach = detail::reachable_nodes(m);
  for (int n = 0; n < kNumNodes; ++n) {
    auto& node = g.nodes[static_cast<std::size_t>(n)];
    node.index = n;
    node.layer = layer_of(n);
    node.reachable = reach[static_cast<std::size_t>(n)];
    node.width = config.node_widths[static_cast<std::size_t>(n)];
  }
  for (int i = 0; i < kNumNodes; ++i) {
    if (!reach[static_cast<std::size_t>(i)]) continue;
    for (int j = i + 1; j < kNumNodes; ++j) {
      const int c = m.op_channel(i, j);
      if (c < 0) continue;
      g.edges.push_back({i, j, static_cast<OpKind>(c), m.at(c, i, j)});
    }
  }
  for (int j = 1; j < kNumNodes; ++j) {
    auto& node = g.nodes[static_cast<std::size_t>(j)];
    if (j == kOutputNode) {
      node.width = config.default_width;
      continue;
    }
    if (!node.reachable) continue;
    for (const auto* e : g.incoming(j))
      node.width = std::min(node.width, g.nodes[static_cast<std::size_t>(e->src)].width);
  }
  for (int n = 1; n < kOutputNode; ++n) {
    auto& node = g.nodes[static_cast<std::size_t>(n)];
    if (node.reachable && !detail::has_out_edge(m, n)) {
      node.orphan = true;
      g.aggregation.push_back(n);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Generation and mutation

namespace detail {

// Draws one slot state from the generation distribution: an edge with the
// configured probability, then a uniform op type, then a uniform kernel.
inline void sample_slot(CellMatrix& m, int i, int j, const SpaceConfig& config, Rng& rng) {
  m.clear_slot(i, j);
  if (uniform01(rng) >= config.edge_probability) return;
  const bool identity_ok = config.identity_any_layer || j == kOutputNode;
  const int n_types = identity_ok ? 4 : 3;
  const int c = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(n_types)));
  int k = 1;
  if (c == static_cast<int>(OpKind::Conv))
    k = config.conv_kernels[uniform_index(rng, config.conv_kernels.size())];
  else if (c != static_cast<int>(OpKind::Identity))
    k = config.pool_kernels[uniform_index(rng, config.pool_kernels.size())];
  m.at(c, i, j) = k;
}

inline bool same_slot(const CellMatrix& a, const CellMatrix& b, int i, int j) {
  for (int c = 0; c < kNumOps; ++c)
    if (a.at(c, i, j) != b.at(c, i, j)) return false;
  return true;
}

}  // namespace detail

// Adds one identity edge from the input when nothing leaves it. The target is
// uniform over the input's legal successors (the output only, when identity
// edges are restricted); any target then reaches the output directly or
// through the orphan path.
inline bool repair(CellMatrix& m, const SpaceConfig& config, Rng& rng) {
  if (validate(m, config).valid) return false;
  if (detail::has_out_edge(m, kInputNode)) return false;
  int target = kOutputNode;
  if (config.identity_any_layer) target = 1 + static_cast<int>(uniform_index(rng, kNumNodes - 1));
  m.at(static_cast<int>(OpKind::Identity), kInputNode, target) = 1;
  return true;
}

inline CellMatrix random_cell(const SpaceConfig& config, Rng& rng) {
  config.check();
  CellMatrix m;
  for (const auto& [i, j] : legal_slots()) detail::sample_slot(m, i, j, config, rng);
  repair(m, config, rng);
  return m;
}

struct MutationTrace {
  std::vector<std::pair<int, int>> resampled;  // slots redrawn
  CellMatrix before_repair;
  bool repaired = false;
};

// Redraws ceil(fraction * E) distinct legal slots, E = number of legal slots.
// Each selected slot is redrawn from the generation distribution until it
// differs from its previous state, so every selected slot changes.
inline CellMatrix mutate(const CellMatrix& m, double fraction, const SpaceConfig& config, Rng& rng,
                         MutationTrace* trace = nullptr) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("mutate: fraction must lie in [0,1]");
  config.check();
  const auto& slots = legal_slots();
  const auto count = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(slots.size()) - 1e-12));
  std::vector<std::size_t> order(slots.size());
  for (std::size_t s = 0; s < order.size(); ++s) order[s] = s;
  for (std::size_t s = 0; s < count; ++s) std::swap(order[s], order[s + uniform_index(rng, order.size() - s)]);

  CellMatrix out = m;
  std::vector<std::pair<int, int>> chosen;
  for (std::size_t s = 0; s < count; ++s) {
    const auto [i, j] = slots[order[s]];
    chosen.emplace_back(i, j);
    // At most a handful of redraws are needed: any probability in (0,1)
    // gives each alternative a positive chance. Degenerate probabilities
    // fall back to toggling edge presence.
    bool changed = false;
    for (int attempt = 0; attempt < 64 && !changed; ++attempt) {
      detail::sample_slot(out, i, j, config, rng);
      changed = !detail::same_slot(out, m, i, j);
    }
    if (!changed) {
      SpaceConfig forced = config;
      forced.edge_probability = m.has_edge(i, j) ? 0.0 : 1.0;
      detail::sample_slot(out, i, j, forced, rng);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  MutationTrace t{chosen, out, false};
  t.repaired = repair(out, config, rng);
  if (trace) *trace = std::move(t);
  return out;
}

// Number of legal slots whose content differs between two matrices.
inline int slot_difference(const CellMatrix& a, const CellMatrix& b) {
  int d = 0;
  for (const auto& [i, j] : legal_slots()) d += !detail::same_slot(a, b, i, j);
  return d;
}

// ---------------------------------------------------------------------------
// Receptive fields

using RfSet = std::set<int>;

// Receptive-field growth of one stride-1 edge: k - 1 (identity: 0).
inline int rf_growth(const CellEdge& e) { return e.op == OpKind::Identity ? 0 : e.kernel - 1; }

// Receptive-field sets of every node of the last of `cells_stacked` identical
// cells, measured in network-input samples. Paths through the orphan
// aggregation reach the output node with no extra growth (1x1 projection).
inline std::vector<std::vector<RfSet>> receptive_fields_per_cell(const CellGraph& g, int cells_stacked) {
  if (cells_stacked < 1) throw ConfigError("receptive_fields: cells_stacked must be >= 1");
  std::vector<std::vector<RfSet>> out;
  RfSet input{1};
  for (int cell = 0; cell < cells_stacked; ++cell) {
    std::vector<RfSet> rf(kNumNodes);
    rf[kInputNode] = input;
    for (int j = 1; j < kNumNodes; ++j) {
      for (const auto* e : g.incoming(j))
        for (int r : rf[static_cast<std::size_t>(e->src)]) rf[static_cast<std::size_t>(j)].insert(r + rf_growth(*e));
    }
    for (int o : g.aggregation)
      rf[kOutputNode].insert(rf[static_cast<std::size_t>(o)].begin(), rf[static_cast<std::size_t>(o)].end());
    input = rf[kOutputNode];
    out.push_back(std::move(rf));
  }
  return out;
}

inline std::vector<RfSet> receptive_fields(const CellGraph& g, int cells_stacked = 1) {
  return receptive_fields_per_cell(g, cells_stacked).back();
}

// ---------------------------------------------------------------------------
// Cell documents

namespace detail {

inline bool kernel_in(const std::vector<int>& set, int k) { return std::find(set.begin(), set.end(), k) != set.end(); }

}  // namespace detail

// Canonical text: fixed key order, one 13-entry row per line. Equal matrices
// (and equal meta) give identical bytes.
inline std::string canonical_serialize(const CellMatrix& m, const nlohmann::json& meta = nlohmann::json::object()) {
  std::ostringstream os;
  os << "{\n  \"format_version\": \"" << kCellFormatVersion << "\",\n";
  os << "  \"meta\": " << (meta.is_null() ? nlohmann::json::object() : meta).dump() << ",\n";
  os << "  \"ops\": [\n";
  for (int c = 0; c < kNumOps; ++c) {
    os << "    [\n";
    for (int i = 0; i < kNumNodes; ++i) {
      os << "      [";
      for (int j = 0; j < kNumNodes; ++j) os << (j ? ", " : "") << m.at(c, i, j);
      os << "]" << (i + 1 < kNumNodes ? "," : "") << "\n";
    }
    os << "    ]" << (c + 1 < kNumOps ? "," : "") << "\n";
  }
  os << "  ]\n}\n";
  return os.str();
}

inline CellMatrix cell_from_json(const nlohmann::json& doc, const SpaceConfig& config = {},
                                 nlohmann::json* meta_out = nullptr) {
  if (!doc.is_object()) throw ParseError("cell document must be a JSON object");
  if (doc.contains("format_version") && doc["format_version"] != kCellFormatVersion)
    throw ParseError("unsupported format_version " + doc["format_version"].dump());
  if (!doc.contains("ops")) throw ParseError("cell document has no \"ops\" field");
  const auto& ops = doc["ops"];
  if (!ops.is_array() || ops.size() != kNumOps)
    throw ShapeError("ops must be a 4x13x13 array (got " + std::to_string(ops.is_array() ? ops.size() : 0) +
                     " channels)");
  CellMatrix m;
  for (int c = 0; c < kNumOps; ++c) {
    const auto& ch = ops[static_cast<std::size_t>(c)];
    if (!ch.is_array() || ch.size() != kNumNodes)
      throw ShapeError("ops channel " + std::to_string(c) + " must have 13 rows");
    for (int i = 0; i < kNumNodes; ++i) {
      const auto& row = ch[static_cast<std::size_t>(i)];
      if (!row.is_array() || row.size() != kNumNodes)
        throw ShapeError("ops row (" + std::to_string(c) + "," + std::to_string(i) + ") must have 13 entries");
      for (int j = 0; j < kNumNodes; ++j) {
        const auto& v = row[static_cast<std::size_t>(j)];
        const auto where = detail::at_string(c, i, j);
        if (!v.is_number_integer()) throw ParseError("non-integer entry at " + where);
        const auto k = v.get<long long>();
        if (k != 0 && (k < 0 || k > 1'000'000 || !config.allows_kernel(c, static_cast<int>(k))))
          throw ParseError("illegal kernel " + std::to_string(k) + " at " + where);
        m.at(c, i, j) = static_cast<int>(k);
      }
    }
  }
  if (meta_out) *meta_out = doc.contains("meta") ? doc["meta"] : nlohmann::json::object();
  return m;
}

inline CellMatrix parse_cell(const std::string& text, const SpaceConfig& config = {},
                             nlohmann::json* meta_out = nullptr) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("cell document is not valid JSON: ") + e.what());
  }
  return cell_from_json(doc, config, meta_out);
}

// Node 0's width is set by whoever compiles the cell, so it is not stored.
inline nlohmann::json space_config_to_json(const SpaceConfig& c) {
  std::vector<int> widths(c.node_widths.begin() + 1, c.node_widths.end());
  return {{"default_width", c.default_width},
          {"bottleneck_width", c.bottleneck_width},
          {"node_widths", widths},
          {"edge_probability", c.edge_probability},
          {"conv_kernels", c.conv_kernels},
          {"pool_kernels", c.pool_kernels},
          {"identity_any_layer", c.identity_any_layer},
          {"seed", c.seed}};
}

// Width fields not given explicitly follow default_width / bottleneck_width.
inline SpaceConfig space_config_from_json(const nlohmann::json& j, SpaceConfig c = {}) {
  try {
    c.default_width = j.value("default_width", c.default_width);
    c.bottleneck_width = j.value("bottleneck_width", c.bottleneck_width);
    c.assign_default_widths();
    if (j.contains("node_widths")) {
      const auto w = j.at("node_widths").get<std::vector<int>>();
      if (w.size() != kNumNodes - 1) throw ConfigError("space config: node_widths must list nodes 1..12");
      std::copy(w.begin(), w.end(), c.node_widths.begin() + 1);
    }
    c.edge_probability = j.value("edge_probability", c.edge_probability);
    if (j.contains("conv_kernels")) c.conv_kernels = j.at("conv_kernels").get<std::vector<int>>();
    if (j.contains("pool_kernels")) c.pool_kernels = j.at("pool_kernels").get<std::vector<int>>();
    c.identity_any_layer = j.value("identity_any_layer", c.identity_any_layer);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("space config: ") + e.what());
  }
  c.check();
  return c;
}

inline nlohmann::json cell_to_json(const CellMatrix& m, const nlohmann::json& meta = nlohmann::json::object()) {
  return nlohmann::json::parse(canonical_serialize(m, meta));
}

}  // namespace mstar
