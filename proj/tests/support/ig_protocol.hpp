#pragma once

// Completeness measurement for Integrated Gradients on compiled networks.
// The forward difference F(x) - F(0) is the reference; the error of a network
// is pooled over a batch of inputs so that one input whose path happens to
// line up with a ReLU or max kink does not decide the outcome.

#include <cmath>
#include <vector>

#include "mstar/analysis/attribution.hpp"
#include "mstar/search_space.hpp"

namespace mstar::protocol {

inline Array normal_array(Shape s, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Array a(std::move(s));
  for (auto& v : a.storage()) v = standard_normal(rng);
  return a;
}

struct IgCompleteness {
  double e64 = 0.0, e256 = 0.0;
  // already exact to rounding at 64 steps, so no room to improve
  bool exact() const { return e64 <= 1e-9; }
};

// sum_b |sum_i IG_bi - dF_b| / sum_b |dF_b| with each sample attributed to the
// output whose value moves most between baseline and input.
inline double pooled_completeness_error(const Network& net, const Array& x, std::size_t steps) {
  const Array zero(x.shape(), 0.0);
  Array fx, f0;
  {
    NoGradGuard g;
    fx = net.forward(Tensor::constant(x), false).value();
    f0 = net.forward(Tensor::constant(zero), false).value();
  }
  const std::size_t B = x.dim(0), K = fx.dim(1);
  std::vector<std::size_t> targets(B, 0);
  double denom = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 1; k < K; ++k)
      if (std::abs(fx[b * K + k] - f0[b * K + k]) > std::abs(fx[b * K + targets[b]] - f0[b * K + targets[b]]))
        targets[b] = k;
    denom += std::abs(fx[b * K + targets[b]] - f0[b * K + targets[b]]);
  }
  IgOptions opt;
  opt.steps = steps;
  const auto ig = integrated_gradients(network_model(net), x, zero, targets, opt);
  clear_parameter_grads(net);
  const std::size_t per = ig.size() / B;
  double num = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double total = 0.0;
    for (std::size_t i = 0; i < per; ++i) total += ig[b * per + i];
    num += std::abs(total - (fx[b * K + targets[b]] - f0[b * K + targets[b]]));
  }
  return num / denom;
}

// Ten small random networks, eight inputs each.
inline std::vector<IgCompleteness> ig_completeness_suite(std::size_t nets = 10) {
  SpaceConfig space;
  space.default_width = 6;
  space.bottleneck_width = 3;
  space.assign_default_widths();
  Rng rng = make_rng(21);
  std::vector<IgCompleteness> out;
  for (std::size_t s = 0; s < nets; ++s) {
    NetworkSpec spec;
    spec.input_channels = 2;
    spec.output_width = 3;
    spec.seed = s;
    Network net = compile(random_cell(space, rng), space, spec);
    const Array x = normal_array({8, 2, 24}, 100 + s);
    out.push_back({pooled_completeness_error(net, x, 64), pooled_completeness_error(net, x, 256)});
  }
  return out;
}

}  // namespace mstar::protocol
