#pragma once

// Test-only oracles. Nothing here calls into the code paths it is used to
// check: receptive fields are measured by enumerating paths and pushing an
// impulse through real pooling/convolution kernels, not by the additive
// composition rule.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "mstar/numerics/ops.hpp"
#include "mstar/search_space.hpp"

namespace mstar::oracle {

using PathOps = std::vector<std::pair<int, int>>;  // (op channel, kernel), sorted

// Every input->node path of a matrix, as multisets of (op, kernel). Orphan
// nodes feed the output through a kernel-free link. Found by plain DFS on the
// raw matrix (no CellGraph involved).
inline std::vector<std::set<PathOps>> enumerate_paths(const CellMatrix& m) {
  std::vector<std::set<PathOps>> paths(kNumNodes);
  paths[0].insert(PathOps{});
  std::vector<bool> live(kNumNodes, false);
  live[0] = true;
  for (int j = 1; j < kNumNodes; ++j) {
    for (int i = 0; i < j; ++i) {
      if (!live[static_cast<std::size_t>(i)]) continue;
      for (int c = 0; c < kNumOps; ++c) {
        const int k = m.at(c, i, j);
        if (k == 0) continue;
        live[static_cast<std::size_t>(j)] = true;
        for (auto p : paths[static_cast<std::size_t>(i)]) {
          p.emplace_back(c, k);
          std::sort(p.begin(), p.end());
          paths[static_cast<std::size_t>(j)].insert(p);
        }
      }
    }
  }
  for (int n = 1; n < kOutputNode; ++n) {
    if (!live[static_cast<std::size_t>(n)]) continue;
    bool out = false;
    for (int j = n + 1; j < kNumNodes; ++j)
      for (int c = 0; c < kNumOps; ++c) out = out || m.at(c, n, j) != 0;
    if (!out) paths[kOutputNode].insert(paths[static_cast<std::size_t>(n)].begin(), paths[static_cast<std::size_t>(n)].end());
  }
  return paths;
}

// Width of the nonzero support after pushing a unit impulse through the
// chain of ops with all-ones convolution kernels.
inline int impulse_support(const PathOps& chain) {
  int total = 1;
  for (const auto& [c, k] : chain) total += k;  // generous length bound
  const std::size_t L = static_cast<std::size_t>(2 * total + 3);
  Array x(Shape{1, 1, L}, 0.0);
  x[L / 2] = 1.0;
  Tensor t = Tensor::constant(x);
  for (const auto& [c, k] : chain) {
    const auto kk = static_cast<std::size_t>(k);
    switch (static_cast<OpKind>(c)) {
      case OpKind::Conv: t = ops::conv1d(t, Tensor::constant(Array(Shape{1, 1, kk}, 1.0))); break;
      case OpKind::MaxPool: t = ops::max_pool1d(t, kk); break;
      case OpKind::AvgPool: t = ops::avg_pool1d(t, kk); break;
      case OpKind::Identity: break;
    }
  }
  int lo = -1, hi = -1;
  for (std::size_t i = 0; i < L; ++i)
    if (t.value()[i] != 0.0) {
      if (lo < 0) lo = static_cast<int>(i);
      hi = static_cast<int>(i);
    }
  return lo < 0 ? 0 : hi - lo + 1;
}

// Receptive-field sets of every node of the last of `depth` stacked cells.
inline std::vector<std::set<int>> impulse_receptive_fields(const CellMatrix& m, int depth) {
  const auto paths = enumerate_paths(m);
  std::set<PathOps> prefix{PathOps{}};
  std::vector<std::set<int>> rf(kNumNodes);
  for (int d = 0; d < depth; ++d) {
    std::vector<std::set<PathOps>> combined(kNumNodes);
    for (int n = 0; n < kNumNodes; ++n)
      for (const auto& a : prefix)
        for (const auto& b : paths[static_cast<std::size_t>(n)]) {
          PathOps p = a;
          p.insert(p.end(), b.begin(), b.end());
          std::sort(p.begin(), p.end());
          combined[static_cast<std::size_t>(n)].insert(p);
        }
    if (d + 1 == depth) {
      for (int n = 0; n < kNumNodes; ++n)
        for (const auto& p : combined[static_cast<std::size_t>(n)]) rf[static_cast<std::size_t>(n)].insert(impulse_support(p));
    }
    prefix = combined[kOutputNode];
  }
  return rf;
}

// Builds a cell whose node 7 is fed by paths (1), (3), (9,9), (9,19), (1,39),
// giving receptive fields {1, 3, 17, 27, 39}; node 7 feeds the output.
inline CellMatrix table6_style_cell() {
  CellMatrix m;
  const int conv = static_cast<int>(OpKind::Conv), id = static_cast<int>(OpKind::Identity);
  m.at(conv, 0, 7) = 1;
  m.at(conv, 0, 2) = 3;
  m.at(id, 2, 7) = 1;
  m.at(conv, 0, 3) = 9;
  m.at(conv, 3, 7) = 9;
  m.at(conv, 0, 4) = 9;
  m.at(conv, 4, 7) = 19;
  m.at(conv, 0, 5) = 1;
  m.at(conv, 5, 7) = 39;
  m.at(id, 7, 12) = 1;
  return m;
}

// Exact one-sided Wilcoxon signed-rank p-value for H1: median(diff) > 0.
// Zero differences are dropped; ties share average ranks; the null
// distribution is enumerated over all sign assignments.
inline double wilcoxon_signed_rank_greater(const std::vector<double>& diffs) {
  std::vector<double> d;
  for (double x : diffs)
    if (x != 0.0) d.push_back(x);
  const std::size_t n = d.size();
  if (n == 0) return 1.0;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  double w_obs = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) w_obs += rank[i];
  std::size_t count = 0;
  const std::size_t total = std::size_t{1} << n;
  for (std::size_t mask = 0; mask < total; ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (std::size_t{1} << i)) w += rank[i];
    if (w >= w_obs - 1e-9) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(total);
}

}  // namespace mstar::oracle
