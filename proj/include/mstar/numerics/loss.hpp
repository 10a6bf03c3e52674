#pragma once

#include <cmath>
#include <vector>

#include "mstar/numerics/ops.hpp"

namespace mstar::loss {

enum class Kind { L2, BinaryCrossEntropy, CrossEntropy };

// Mean squared error.
inline Tensor mse(const Tensor& pred, const Array& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("mse: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  const double n = static_cast<double>(pred.size());
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = pred.value()[i] - target[i];
    s += d * d;
  }
  TensorNode* pn = pred.node();
  auto t = std::make_shared<Array>(target);
  return record_op("mse", Array::scalar(s / n), {pred}, [pn, t, n](const Array& g) {
    if (!pn->requires_grad) return;
    double* gp = pn->grad_buffer().data();
    for (std::size_t i = 0; i < t->size(); ++i) gp[i] += g[0] * 2.0 * (pn->value[i] - (*t)[i]) / n;
  });
}

// Mean binary cross-entropy on probabilities (outputs of a sigmoid).
inline Tensor bce(const Tensor& prob, const Array& target) {
  if (prob.shape() != target.shape())
    throw ShapeError("bce: prediction " + shape_str(prob.shape()) + " vs target " + shape_str(target.shape()));
  const double n = static_cast<double>(prob.size());
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double p = prob.value()[i];
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("bce: probability " + std::to_string(p) + " outside (0,1)");
    s -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
  }
  TensorNode* pn = prob.node();
  auto t = std::make_shared<Array>(target);
  return record_op("bce", Array::scalar(s / n), {prob}, [pn, t, n](const Array& g) {
    if (!pn->requires_grad) return;
    double* gp = pn->grad_buffer().data();
    for (std::size_t i = 0; i < t->size(); ++i) {
      const double p = pn->value[i];
      gp[i] += g[0] * (p - (*t)[i]) / (p * (1.0 - p)) / n;
    }
  });
}

// Mean softmax cross-entropy; logits [N,K], integer labels.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " + std::to_string(labels.size()) +
                     " labels");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  auto probs = std::make_shared<Array>(logits.shape());
  double s = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const double* z = logits.value().data() + n * K;
    const int y = labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= K) throw ConfigError("cross_entropy: label out of range");
    double mx = z[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, z[k]);
    double z_sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) z_sum += std::exp(z[k] - mx);
    const double lse = mx + std::log(z_sum);
    for (std::size_t k = 0; k < K; ++k) (*probs)[n * K + k] = std::exp(z[k] - lse);
    s += lse - z[static_cast<std::size_t>(y)];
  }
  TensorNode* ln = logits.node();
  return record_op("cross_entropy", Array::scalar(s / static_cast<double>(N)), {logits},
                   [ln, probs, labels, N, K](const Array& g) {
                     if (!ln->requires_grad) return;
                     double* gl = ln->grad_buffer().data();
                     const double f = g[0] / static_cast<double>(N);
                     for (std::size_t n = 0; n < N; ++n)
                       for (std::size_t k = 0; k < K; ++k)
                         gl[n * K + k] += f * ((*probs)[n * K + k] - (static_cast<int>(k) == labels[n] ? 1.0 : 0.0));
                   });
}

// KL(N(mu, sigma^2) || N(0, 1)) summed over all elements, with
// sigma = exp(log_sigma): -1/2 sum(1 + log sigma^2 - mu^2 - sigma^2).
inline Tensor kl_standard_normal(const Tensor& mu, const Tensor& log_sigma) {
  if (mu.shape() != log_sigma.shape())
    throw ShapeError("kl: mu " + shape_str(mu.shape()) + " vs log_sigma " + shape_str(log_sigma.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double m = mu.value()[i], ls = log_sigma.value()[i];
    s += -0.5 * (1.0 + 2.0 * ls - m * m - std::exp(2.0 * ls));
  }
  TensorNode *mn = mu.node(), *sn = log_sigma.node();
  return record_op("kl_standard_normal", Array::scalar(s), {mu, log_sigma}, [mn, sn](const Array& g) {
    if (mn->requires_grad) {
      double* gm = mn->grad_buffer().data();
      for (std::size_t i = 0; i < mn->value.size(); ++i) gm[i] += g[0] * mn->value[i];
    }
    if (sn->requires_grad) {
      double* gs = sn->grad_buffer().data();
      for (std::size_t i = 0; i < sn->value.size(); ++i) gs[i] += g[0] * (std::exp(2.0 * sn->value[i]) - 1.0);
    }
  });
}

}  // namespace mstar::loss
