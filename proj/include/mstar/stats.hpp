#pragma once

// Small descriptive and rank statistics shared by experiments and tests.

#include <algorithm>
#include <cmath>
#include <vector>

#include "mstar/error.hpp"

namespace mstar {

inline double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// Sample standard deviation (n-1); 0 for fewer than two values.
inline double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  return std::sqrt(v / static_cast<double>(xs.size() - 1));
}

struct WilcoxonResult {
  double w_plus = 0.0;   // rank sum of positive differences
  std::size_t n = 0;     // non-zero differences
  double p_greater = 1.0;  // one-sided, H1: median difference > 0
};

// Wilcoxon signed-rank test on paired samples with zero differences dropped
// and tied magnitudes given average ranks. The p-value is exact: the null
// distribution of W+ is enumerated over the 2^n sign patterns by dynamic
// programming on doubled ranks.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("wilcoxon: samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  WilcoxonResult r;
  r.n = d.size();
  if (d.empty()) return r;
  std::vector<std::size_t> order(d.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
  std::vector<int> rank2(d.size());  // doubled average ranks, always integral
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = static_cast<int>(i + j + 2);
    i = j + 1;
  }
  int total = 0, observed = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    total += rank2[i];
    if (d[i] > 0) observed += rank2[i];
  }
  r.w_plus = observed / 2.0;
  std::vector<double> ways(static_cast<std::size_t>(total) + 1, 0.0);
  ways[0] = 1.0;
  for (int rk : rank2)
    for (int s = total; s >= rk; --s) ways[static_cast<std::size_t>(s)] += ways[static_cast<std::size_t>(s - rk)];
  double tail = 0.0;
  for (int s = observed; s <= total; ++s) tail += ways[static_cast<std::size_t>(s)];
  r.p_greater = tail / std::ldexp(1.0, static_cast<int>(d.size()));
  return r;
}

}  // namespace mstar
