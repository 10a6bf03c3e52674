#pragma once

// Executable networks: stacked identical cells (or the plain multi-kernel
// layers of the motivation models) followed by a head.

#include <functional>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mstar/numerics.hpp"
#include "mstar/search_space.hpp"

namespace mstar {

enum class HeadKind { GapGmpLinear, LinearFlatten, None };

inline const char* head_name(HeadKind h) {
  switch (h) {
    case HeadKind::GapGmpLinear: return "gap+gmp+linear";
    case HeadKind::LinearFlatten: return "linear-flatten";
    case HeadKind::None: return "none";
  }
  return "?";
}

inline HeadKind head_from_name(const std::string& s) {
  if (s == "gap+gmp+linear") return HeadKind::GapGmpLinear;
  if (s == "linear-flatten") return HeadKind::LinearFlatten;
  if (s == "none") return HeadKind::None;
  throw ConfigError("unknown head kind \"" + s + "\"");
}

struct NetworkSpec {
  int cells_stacked = 1;
  int input_channels = 1;
  HeadKind head = HeadKind::GapGmpLinear;
  int output_width = 2;
  std::size_t input_length = 0;  // needed by the linear-flatten head only
  std::uint64_t seed = 0;

  void check() const {
    if (cells_stacked < 1) throw ConfigError("network spec: cells_stacked must be >= 1");
    if (input_channels < 1) throw ConfigError("network spec: input_channels must be >= 1");
    if (head != HeadKind::None && output_width < 1) throw ConfigError("network spec: output_width must be >= 1");
    if (head == HeadKind::LinearFlatten && input_length == 0)
      throw ConfigError("network spec: linear-flatten head needs input_length");
  }
};

inline nlohmann::json spec_to_json(const NetworkSpec& s) {
  return {{"cells_stacked", s.cells_stacked}, {"input_channels", s.input_channels}, {"head", head_name(s.head)},
          {"output_width", s.output_width},   {"input_length", s.input_length},     {"seed", s.seed}};
}

inline NetworkSpec spec_from_json(const nlohmann::json& j, NetworkSpec s = {}) {
  try {
    s.cells_stacked = j.value("cells_stacked", s.cells_stacked);
    s.input_channels = j.value("input_channels", s.input_channels);
    if (j.contains("head")) s.head = head_from_name(j.at("head").get<std::string>());
    s.output_width = j.value("output_width", s.output_width);
    s.input_length = j.value("input_length", s.input_length);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("network spec: ") + e.what());
  }
  return s;
}

// Hook applied to every computed node output (cell, node, value); returning a
// different tensor substitutes it for all consumers downstream.
using NodeHook = std::function<Tensor(int cell, int node, const Tensor& out)>;

struct CompiledEdge {
  CellEdge edge;
  Conv1dLayer conv;  // conv edges
  BatchNormLayer bn;
  Conv1dLayer proj;  // pool/identity edges between different widths
  bool project = false;
};

struct CompiledCell {
  std::array<int, kNumNodes> widths{};
  std::vector<CompiledEdge> edges;
  std::vector<int> orphans;
  Conv1dLayer orphan_proj;
};

// One layer of a motivation model: parallel convolutions summed, then BN, ReLU.
struct PlainLayer {
  std::vector<Conv1dLayer> branches;
  BatchNormLayer bn;
};

class Network {
 public:
  Network() : store_(std::make_unique<ParameterStore>()) {}
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  ParameterStore& store() { return *store_; }
  const ParameterStore& store() const { return *store_; }
  const std::vector<CompiledCell>& cells() const { return cells_; }
  const std::vector<PlainLayer>& plain_layers() const { return layers_; }
  const CellGraph& graph() const { return graph_; }
  const NetworkSpec& spec() const { return spec_; }
  int feature_width() const { return feature_width_; }

  // Body output [N, W, L].
  Tensor features(const Tensor& x, bool training, const NodeHook& hook = {}) const {
    check_input(x);
    Tensor h = x;
    if (!layers_.empty()) {
      for (const auto& layer : layers_) {
        std::vector<Tensor> parts;
        for (const auto& b : layer.branches) parts.push_back(b(h));
        h = ops::relu(layer.bn(parts.size() == 1 ? parts[0] : ops::add_n(parts), training));
      }
      return h;
    }
    for (std::size_t c = 0; c < cells_.size(); ++c) h = run_cell(cells_[c], static_cast<int>(c), h, training, hook);
    return h;
  }

  Tensor head(const Tensor& f) const {
    switch (spec_.head) {
      case HeadKind::GapGmpLinear:
        return head_layer_(ops::concat({ops::global_avg_pool(f), ops::global_max_pool(f)}, 1));
      case HeadKind::LinearFlatten:
        return head_layer_(ops::reshape(f, {f.dim(0), f.dim(1) * f.dim(2)}));
      case HeadKind::None: return f;
    }
    return f;
  }

  Tensor forward(const Tensor& x, bool training, const NodeHook& hook = {}) const {
    return head(features(x, training, hook));
  }

  void zero_head() {
    if (spec_.head == HeadKind::None) return;
    head_layer_.weight.mutable_value().fill(0.0);
    if (head_layer_.bias) head_layer_.bias.mutable_value().fill(0.0);
  }

  const LinearLayer& head_layer() const { return head_layer_; }

 private:
  friend Network compile(const CellGraph&, const NetworkSpec&);
  friend Network build_plain_network(const std::vector<std::vector<int>>&, int, int, int, std::uint64_t);

  void check_input(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(1) != static_cast<std::size_t>(spec_.input_channels))
      throw ShapeError("network: expected input [N, " + std::to_string(spec_.input_channels) + ", L], got " +
                       shape_str(x.shape()));
    if (spec_.head == HeadKind::LinearFlatten && x.dim(2) != spec_.input_length)
      throw ShapeError("network: linear-flatten head expects length " + std::to_string(spec_.input_length));
  }

  static Tensor run_edge(const CompiledEdge& e, const Tensor& h, bool training) {
    switch (e.edge.op) {
      case OpKind::Conv: return ops::relu(e.bn(e.conv(h), training));
      case OpKind::MaxPool: {
        auto y = ops::max_pool1d(h, static_cast<std::size_t>(e.edge.kernel));
        return e.project ? e.proj(y) : y;
      }
      case OpKind::AvgPool: {
        auto y = ops::avg_pool1d(h, static_cast<std::size_t>(e.edge.kernel));
        return e.project ? e.proj(y) : y;
      }
      case OpKind::Identity: return e.project ? e.proj(h) : h;
    }
    return h;
  }

  Tensor run_cell(const CompiledCell& cell, int index, const Tensor& input, bool training, const NodeHook& hook) const {
    std::array<Tensor, kNumNodes> out;
    out[0] = input;
    std::array<std::vector<Tensor>, kNumNodes> incoming;
    std::size_t next = 0;
    for (int j = 1; j < kNumNodes; ++j) {
      // edges are ordered by (src, dst); consume every edge whose source is ready
      while (next < cell.edges.size() && cell.edges[next].edge.src < j) {
        const auto& e = cell.edges[next++];
        incoming[static_cast<std::size_t>(e.edge.dst)].push_back(run_edge(e, out[static_cast<std::size_t>(e.edge.src)], training));
      }
      auto& in = incoming[static_cast<std::size_t>(j)];
      Tensor y;
      if (j == kOutputNode && !cell.orphans.empty()) {
        std::vector<Tensor> parts;
        for (int o : cell.orphans) parts.push_back(out[static_cast<std::size_t>(o)]);
        in.push_back(cell.orphan_proj(parts.size() == 1 ? parts[0] : ops::concat(parts, 1)));
      }
      if (in.empty()) continue;
      y = in.size() == 1 ? in[0] : ops::add_n(in);
      if (hook) y = hook(index, j, y);
      out[static_cast<std::size_t>(j)] = y;
    }
    if (!out[kOutputNode].defined()) throw ShapeError("network: cell output node was never computed");
    return out[kOutputNode];
  }

  std::unique_ptr<ParameterStore> store_;
  CellGraph graph_;
  NetworkSpec spec_;
  std::vector<CompiledCell> cells_;
  std::vector<PlainLayer> layers_;
  LinearLayer head_layer_;
  int feature_width_ = 0;
};

inline std::string edge_name(int cell, const CellEdge& e) {
  return "cell" + std::to_string(cell) + ".e" + std::to_string(e.src) + "_" + std::to_string(e.dst);
}

inline Network compile(const CellGraph& graph, const NetworkSpec& spec) {
  spec.check();
  Network net;
  net.graph_ = graph;
  net.spec_ = spec;
  Rng rng = make_rng(spec.seed, 0x636f6d70);
  ParameterStore& store = *net.store_;
  for (int c = 0; c < spec.cells_stacked; ++c) {
    CompiledCell cell;
    for (int n = 0; n < kNumNodes; ++n) cell.widths[static_cast<std::size_t>(n)] = graph.nodes[static_cast<std::size_t>(n)].width;
    cell.widths[0] = c == 0 ? spec.input_channels : graph.default_width;
    cell.widths[kOutputNode] = graph.default_width;
    for (const auto& e : graph.edges) {
      const int in_w = cell.widths[static_cast<std::size_t>(e.src)];
      const int out_w = cell.widths[static_cast<std::size_t>(e.dst)];
      if (in_w <= 0 || out_w <= 0)
        throw ConfigError("compile: node " + std::to_string(in_w <= 0 ? e.src : e.dst) + " has no resolved width");
      CompiledEdge ce;
      ce.edge = e;
      const std::string name = edge_name(c, e);
      const auto iw = static_cast<std::size_t>(in_w), ow = static_cast<std::size_t>(out_w);
      if (e.op == OpKind::Conv) {
        ce.conv = Conv1dLayer::create(store, name + ".conv", iw, ow, static_cast<std::size_t>(e.kernel), rng);
        ce.bn = BatchNormLayer::create(store, name + ".bn", ow);
      } else if (in_w != out_w) {
        ce.project = true;
        ce.proj = Conv1dLayer::create(store, name + ".proj", iw, ow, 1, rng);
      }
      cell.edges.push_back(std::move(ce));
    }
    cell.orphans = graph.aggregation;
    if (!cell.orphans.empty()) {
      std::size_t total = 0;
      for (int o : cell.orphans) total += static_cast<std::size_t>(cell.widths[static_cast<std::size_t>(o)]);
      cell.orphan_proj = Conv1dLayer::create(store, "cell" + std::to_string(c) + ".orphan_proj", total,
                                             static_cast<std::size_t>(graph.default_width), 1, rng);
    }
    net.cells_.push_back(std::move(cell));
  }
  net.feature_width_ = graph.default_width;
  const auto W = static_cast<std::size_t>(graph.default_width);
  const auto out = static_cast<std::size_t>(spec.output_width);
  if (spec.head == HeadKind::GapGmpLinear) net.head_layer_ = LinearLayer::create(store, "head", 2 * W, out, rng);
  if (spec.head == HeadKind::LinearFlatten)
    net.head_layer_ = LinearLayer::create(store, "head", W * spec.input_length, out, rng);
  return net;
}

inline Network compile(const CellMatrix& m, const SpaceConfig& space, const NetworkSpec& spec) {
  return compile(preprocess(m, space), spec);
}

inline std::size_t count_parameters(const Network& net) { return net.store().scalar_count(); }

// Network description: the cell document plus the spec fields.
inline nlohmann::json network_description(const Network& net) {
  nlohmann::json j;
  j["cell"] = cell_to_json(net.graph().encode());
  j["spec"] = spec_to_json(net.spec());
  j["parameters"] = count_parameters(net);
  return j;
}

// ---------------------------------------------------------------------------
// Motivation models

enum class MotivationKind { All, K20, K30, K40, K50, K60 };

inline const std::vector<MotivationKind>& motivation_kinds() {
  static const std::vector<MotivationKind> k{MotivationKind::All, MotivationKind::K20, MotivationKind::K30,
                                             MotivationKind::K40, MotivationKind::K50, MotivationKind::K60};
  return k;
}

inline std::string motivation_name(MotivationKind k) {
  switch (k) {
    case MotivationKind::All: return "M_all";
    case MotivationKind::K20: return "M_20";
    case MotivationKind::K30: return "M_30";
    case MotivationKind::K40: return "M_40";
    case MotivationKind::K50: return "M_50";
    case MotivationKind::K60: return "M_60";
  }
  return "?";
}

inline MotivationKind motivation_from_name(const std::string& s) {
  for (auto k : motivation_kinds())
    if (motivation_name(k) == s) return k;
  throw ConfigError("unknown motivation model \"" + s + "\"");
}

inline std::vector<int> motivation_kernels(MotivationKind k) {
  switch (k) {
    case MotivationKind::All: return {3, 5, 7, 9, 11, 13, 15, 17, 20};
    case MotivationKind::K20: return {20};
    case MotivationKind::K30: return {30};
    case MotivationKind::K40: return {40};
    case MotivationKind::K50: return {50};
    case MotivationKind::K60: return {60};
  }
  return {};
}

// Receptive-field set of the first layer: one entry per parallel kernel.
inline std::set<int> motivation_layer_rfs(MotivationKind k) {
  const auto ks = motivation_kernels(k);
  return {ks.begin(), ks.end()};
}

struct MotivationConfig {
  int base_width = 128;  // width of M_all; single-kernel models are resized to match its size
  int layers = 5;
  int input_channels = 1;
  int classes = 2;
  std::uint64_t seed = 0;
};

inline nlohmann::json motivation_config_to_json(const MotivationConfig& c) {
  return {{"base_width", c.base_width}, {"layers", c.layers}, {"input_channels", c.input_channels},
          {"classes", c.classes}, {"seed", c.seed}};
}

inline MotivationConfig motivation_config_from_json(const nlohmann::json& j, MotivationConfig c = {}) {
  c.base_width = j.value("base_width", c.base_width);
  c.layers = j.value("layers", c.layers);
  c.input_channels = j.value("input_channels", c.input_channels);
  c.classes = j.value("classes", c.classes);
  c.seed = j.value("seed", c.seed);
  if (c.base_width < 1 || c.layers < 1 || c.input_channels < 1 || c.classes < 1)
    throw ConfigError("motivation config: widths, layers, channels and classes must be >= 1");
  return c;
}

// Closed-form size of a plain network: bias-free convolutions, BN affine
// pairs and the gap+gmp linear head.
inline std::size_t plain_parameter_count(const std::vector<int>& kernels, int width, int layers, int in_ch, int classes) {
  std::size_t ksum = 0;
  for (int k : kernels) ksum += static_cast<std::size_t>(k);
  const auto w = static_cast<std::size_t>(width);
  std::size_t n = 0;
  for (int l = 0; l < layers; ++l) n += (l == 0 ? static_cast<std::size_t>(in_ch) : w) * w * ksum + 2 * w;
  return n + 2 * w * static_cast<std::size_t>(classes) + static_cast<std::size_t>(classes);
}

// Width that brings a model's parameter count closest to that of M_all.
inline int motivation_width(MotivationKind k, const MotivationConfig& cfg) {
  if (k == MotivationKind::All) return cfg.base_width;
  const auto target = static_cast<double>(plain_parameter_count(motivation_kernels(MotivationKind::All), cfg.base_width,
                                                                cfg.layers, cfg.input_channels, cfg.classes));
  int best = 1;
  double best_gap = 1e300;
  for (int w = 1; w <= 8 * cfg.base_width; ++w) {
    const double gap = std::abs(
        static_cast<double>(plain_parameter_count(motivation_kernels(k), w, cfg.layers, cfg.input_channels, cfg.classes)) -
        target);
    if (gap < best_gap) {
      best_gap = gap;
      best = w;
    }
  }
  return best;
}

inline Network build_plain_network(const std::vector<std::vector<int>>& layer_kernels, int width, int in_ch,
                                   int classes, std::uint64_t seed) {
  Network net;
  net.spec_.input_channels = in_ch;
  net.spec_.output_width = classes;
  net.spec_.head = HeadKind::GapGmpLinear;
  net.spec_.seed = seed;
  Rng rng = make_rng(seed, 0x706c6e);
  ParameterStore& store = *net.store_;
  const auto w = static_cast<std::size_t>(width);
  for (std::size_t l = 0; l < layer_kernels.size(); ++l) {
    PlainLayer layer;
    const std::size_t in = l == 0 ? static_cast<std::size_t>(in_ch) : w;
    const std::string name = "layer" + std::to_string(l);
    for (int k : layer_kernels[l])
      layer.branches.push_back(Conv1dLayer::create(store, name + ".k" + std::to_string(k), in, w,
                                                   static_cast<std::size_t>(k), rng, false));
    layer.bn = BatchNormLayer::create(store, name + ".bn", w);
    net.layers_.push_back(std::move(layer));
  }
  net.feature_width_ = width;
  net.head_layer_ = LinearLayer::create(store, "head", 2 * w, static_cast<std::size_t>(classes), rng);
  return net;
}

inline Network build_motivation_model(MotivationKind kind, const MotivationConfig& cfg = {}) {
  if (cfg.layers < 1 || cfg.base_width < 1 || cfg.classes < 1 || cfg.input_channels < 1)
    throw ConfigError("motivation config: counts must be positive");
  std::vector<std::vector<int>> kernels(static_cast<std::size_t>(cfg.layers), motivation_kernels(kind));
  return build_plain_network(kernels, motivation_width(kind, cfg), cfg.input_channels, cfg.classes,
                             mix_seed(cfg.seed, static_cast<std::uint64_t>(kind)));
}

}  // namespace mstar
