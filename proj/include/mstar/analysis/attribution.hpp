#pragma once

// Integrated Gradients on inputs and on intermediate node outputs.
//   IG_i = (x_i - x0_i) * (1/steps) * sum_{s=1..steps} dF(x0 + (s/steps)(x - x0)) / dx_i

#include <functional>
#include <map>
#include <set>
#include <optional>
#include <vector>

#include "mstar/cell_compiler.hpp"

namespace mstar {

// Maps a batch [N, ...] to outputs [N, K].
using BatchModel = std::function<Tensor(const Tensor&)>;

struct IgOptions {
  std::size_t steps = 256;
  std::size_t chunk = 16;  // interpolation steps evaluated per forward pass
};

namespace detail {

inline Array repeat_batch(const Array& x, std::size_t reps) {
  Shape s = x.shape();
  s[0] *= reps;
  Array out(s);
  for (std::size_t r = 0; r < reps; ++r) std::copy(x.values().begin(), x.values().end(), out.data() + r * x.size());
  return out;
}

}  // namespace detail

// `targets` holds one output index per sample of x.
inline Array integrated_gradients(const BatchModel& f, const Array& x, const Array& baseline,
                                  const std::vector<std::size_t>& targets, const IgOptions& opt = {}) {
  if (x.shape() != baseline.shape())
    throw ShapeError("integrated_gradients: input " + shape_str(x.shape()) + " vs baseline " + shape_str(baseline.shape()));
  if (opt.steps < 1) throw ConfigError("integrated_gradients: steps must be >= 1");
  if (x.rank() < 1) throw ShapeError("integrated_gradients: input needs a batch axis");
  const std::size_t B = x.dim(0);
  if (targets.size() != B) throw ShapeError("integrated_gradients: one target per sample required");
  Array total(x.shape(), 0.0);
  const std::size_t chunk = std::max<std::size_t>(1, opt.chunk);
  for (std::size_t s0 = 1; s0 <= opt.steps; s0 += chunk) {
    const std::size_t n = std::min(chunk, opt.steps - s0 + 1);
    Array path(detail::repeat_batch(x, n));
    for (std::size_t r = 0; r < n; ++r) {
      const double alpha = static_cast<double>(s0 + r) / static_cast<double>(opt.steps);
      double* p = path.data() + r * x.size();
      for (std::size_t i = 0; i < x.size(); ++i) p[i] = baseline[i] + alpha * (x[i] - baseline[i]);
    }
    Tensor z(std::move(path), true);
    const Tensor out = f(z);
    if (out.rank() != 2 || out.dim(0) != n * B) throw ShapeError("integrated_gradients: model must return [N,K]");
    const std::size_t K = out.dim(1);
    Array pick(out.shape(), 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t b = 0; b < B; ++b) {
        if (targets[b] >= K) throw ShapeError("integrated_gradients: target index out of range");
        pick[(r * B + b) * K + targets[b]] = 1.0;
      }
    backward(ops::sum(ops::mul(out, Tensor::constant(std::move(pick)))));
    const Array& g = z.grad();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t i = 0; i < x.size(); ++i) total[i] += g[r * x.size() + i];
  }
  Array ig(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) ig[i] = (x[i] - baseline[i]) * total[i] / static_cast<double>(opt.steps);
  return ig;
}

inline Array integrated_gradients(const BatchModel& f, const Array& x, const Array& baseline, std::size_t target,
                                  const IgOptions& opt = {}) {
  return integrated_gradients(f, x, baseline, std::vector<std::size_t>(x.rank() ? x.dim(0) : 0, target), opt);
}

// Eval-mode network as a batch model. Parameter gradients collected along the
// way are cleared by the callers below.
inline BatchModel network_model(const Network& net) {
  return [&net](const Tensor& x) { return net.forward(x, false); };
}

inline void clear_parameter_grads(const Network& net) {
  for (auto t : net.store().tensors()) t.zero_grad();
}

// Reachable nodes sharing `node`'s layer.
inline std::vector<int> sibling_nodes(const CellGraph& g, int node) {
  std::vector<int> s;
  for (int n = 1; n < kOutputNode; ++n)
    if (n != node && g.nodes[static_cast<std::size_t>(n)].reachable && layer_of(n) == layer_of(node)) s.push_back(n);
  return s;
}

struct NodeIg {
  bool connected = false;  // false when the node is never computed
  Array node_output;       // [B, C, L] with siblings zeroed
  Array attributions;      // same shape; zero baseline
};

// IG with respect to the output of one node of one cell, sibling nodes of the
// same layer zeroed. cell < 0 selects the last cell.
inline NodeIg node_integrated_gradients(const Network& net, const Array& x, int node,
                                        const std::vector<std::size_t>& targets, const IgOptions& opt = {},
                                        int cell = -1) {
  if (node <= kInputNode || node >= kOutputNode)
    throw ConfigError("node attribution: node " + std::to_string(node) + " is not a hidden node");
  if (net.cells().empty()) throw ConfigError("node attribution: network has no cells");
  if (cell < 0) cell = static_cast<int>(net.cells().size()) - 1;
  const auto siblings = sibling_nodes(net.graph(), node);
  auto is_sibling = [&](int j) { return std::find(siblings.begin(), siblings.end(), j) != siblings.end(); };

  NodeIg r;
  {
    NoGradGuard guard;
    net.forward(Tensor::constant(x), false, [&](int c, int j, const Tensor& y) {
      if (c != cell) return y;
      if (is_sibling(j)) return Tensor::constant(Array(y.shape(), 0.0));
      if (j == node) {
        r.connected = true;
        r.node_output = y.value();
      }
      return y;
    });
  }
  if (!r.connected) {
    r.attributions = Array(Shape{x.dim(0)}, 0.0);
    return r;
  }
  const std::size_t B = x.dim(0);
  BatchModel f = [&](const Tensor& z) {
    const Tensor xr = Tensor::constant(detail::repeat_batch(x, z.dim(0) / B));
    return net.forward(xr, false, [&](int c, int j, const Tensor& y) {
      if (c != cell) return y;
      if (is_sibling(j)) return Tensor::constant(Array(y.shape(), 0.0));
      if (j == node) return z;
      return y;
    });
  };
  r.attributions = integrated_gradients(f, r.node_output, Array(r.node_output.shape(), 0.0), targets, opt);
  clear_parameter_grads(net);
  return r;
}

struct AttributionEntry {
  int node = 0;
  double score = 0.0;                 // mean over the batch of ||IG||_1
  std::map<int, double> per_class;    // same, restricted to each label
};

// Attributes each sample to `labels[b]` when labels are given, else to `target`.
inline AttributionEntry node_attribution(const Network& net, const Array& x, int node,
                                         const std::optional<std::vector<int>>& labels, std::size_t target = 0,
                                         const IgOptions& opt = {}) {
  const std::size_t B = x.dim(0);
  std::vector<std::size_t> targets(B, target);
  if (labels) {
    if (labels->size() != B) throw ShapeError("node attribution: one label per sample required");
    for (std::size_t b = 0; b < B; ++b) targets[b] = static_cast<std::size_t>((*labels)[b]);
  }
  AttributionEntry e;
  e.node = node;
  const auto ig = node_integrated_gradients(net, x, node, targets, opt);
  std::vector<double> l1(B, 0.0);
  if (ig.connected) {
    const std::size_t per = ig.attributions.size() / B;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < per; ++i) l1[b] += std::abs(ig.attributions[b * per + i]);
  }
  for (double v : l1) e.score += v / static_cast<double>(B);
  if (labels) {
    std::map<int, std::size_t> count;
    for (std::size_t b = 0; b < B; ++b) {
      e.per_class[(*labels)[b]] += l1[b];
      ++count[(*labels)[b]];
    }
    for (auto& [k, v] : e.per_class) v /= static_cast<double>(count[k]);
  }
  return e;
}

inline std::string attribution_csv(const std::vector<AttributionEntry>& entries) {
  std::set<int> classes;
  for (const auto& e : entries)
    for (const auto& [k, v] : e.per_class) classes.insert(k);
  std::string s = "node,score";
  for (int k : classes) s += ",class_" + std::to_string(k);
  s += '\n';
  char buf[40];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%d,%.17g", e.node, e.score);
    s += buf;
    for (int k : classes) {
      const auto it = e.per_class.find(k);
      std::snprintf(buf, sizeof buf, ",%.17g", it == e.per_class.end() ? 0.0 : it->second);
      s += buf;
    }
    s += '\n';
  }
  return s;
}

}  // namespace mstar
