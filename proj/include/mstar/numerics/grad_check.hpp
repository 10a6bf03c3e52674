#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mstar/numerics/ops.hpp"
#include "mstar/rng.hpp"

namespace mstar {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Compares backward() against central finite differences (step h) for every
// element of every tensor in `wrt` (a deterministic subset of at most
// max_per_tensor elements when a tensor is larger). The error measure is
// |g_ad - g_fd| / max(1, |g_fd|). `fragment` must rebuild its graph from the
// current values on each call and return a scalar.
inline GradCheckResult grad_check(const std::function<Tensor()>& fragment, const std::vector<Tensor>& wrt,
                                  double h = 1e-5, std::size_t max_per_tensor = 0) {
  std::vector<Tensor> targets = wrt;
  for (auto& t : targets) {
    t.zero_grad();
    t.set_requires_grad(true);
  }
  Tensor loss = fragment();
  if (loss.size() != 1) throw ShapeError("grad_check: fragment must return a scalar");
  backward(loss);
  std::vector<Array> analytic;
  for (auto& t : targets) analytic.push_back(t.grad());

  auto eval = [&] {
    NoGradGuard guard;
    return fragment().item();
  };
  GradCheckResult result;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    Array& w = targets[k].mutable_value();
    std::vector<std::size_t> idx(w.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_tensor > 0 && idx.size() > max_per_tensor) {
      Rng rng = make_rng(0x6c6b, k);
      for (std::size_t i = 0; i < max_per_tensor; ++i) std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
      idx.resize(max_per_tensor);
    }
    for (std::size_t i : idx) {
      const double orig = w[i];
      w[i] = orig + h;
      const double fp = eval();
      w[i] = orig - h;
      const double fm = eval();
      w[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double err = std::abs(analytic[k][i] - fd) / std::max(1.0, std::abs(fd));
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_tensor = k;
        result.worst_index = i;
      }
    }
  }
  for (auto& t : targets) t.zero_grad();
  return result;
}

// Scalar reduction <out, R> with a fixed pseudo-random R, so that checking a
// tensor-valued fragment exercises every output element.
inline Tensor random_projection(const Tensor& out, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x70726f6a);
  Array r(out.shape());
  for (auto& v : r.storage()) v = 2.0 * uniform01(rng) - 1.0;
  return ops::sum(ops::mul(out, Tensor::constant(std::move(r))));
}

}  // namespace mstar
