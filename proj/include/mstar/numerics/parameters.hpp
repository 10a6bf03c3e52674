#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "mstar/numerics/ops.hpp"
#include "mstar/rng.hpp"

namespace mstar {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

struct NamedBatchNorm {
  std::string name;
  BatchNormState state;
};

// Registry of every trainable tensor of a model (each exactly once) plus the
// batch-norm running statistics, in registration order.
class ParameterStore {
 public:
  Tensor add(std::string name, Array init) {
    for (const auto& p : params_)
      if (p.name == name) throw ConfigError("duplicate parameter name " + name);
    params_.push_back({std::move(name), Tensor::parameter(std::move(init))});
    return params_.back().tensor;
  }

  BatchNormState& add_batch_norm(std::string name, std::size_t channels, double momentum = 0.1, double eps = 1e-5) {
    norms_.push_back({std::move(name), BatchNormState(channels, momentum, eps)});
    return norms_.back().state;
  }

  const std::vector<NamedParameter>& entries() const { return params_; }
  std::deque<NamedBatchNorm>& batch_norms() { return norms_; }
  const std::deque<NamedBatchNorm>& batch_norms() const { return norms_; }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& p : params_) out.push_back(p.tensor);
    return out;
  }

  Tensor find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.tensor;
    throw ConfigError("no parameter named " + name);
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  // FNV-1a over the raw bits of every parameter value, in order.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](const Array& a) {
      for (double v : a.values()) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        for (int b = 0; b < 8; ++b) {
          h ^= (bits >> (8 * b)) & 0xffu;
          h *= 0x100000001b3ull;
        }
      }
    };
    for (const auto& p : params_) mix(p.tensor.value());
    return h;
  }

 private:
  std::vector<NamedParameter> params_;
  std::deque<NamedBatchNorm> norms_;
};

// ---------------------------------------------------------------------------
// Initialisation: Kaiming-uniform on fan-in for weights, U(+-1/sqrt(fan_in))
// for biases.

inline Array kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Array a(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(1, fan_in)));
  for (auto& v : a.storage()) v = (2.0 * uniform01(rng) - 1.0) * bound;
  return a;
}

inline Array bias_uniform(std::size_t n, std::size_t fan_in, Rng& rng) {
  Array a(Shape{n});
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, fan_in)));
  for (auto& v : a.storage()) v = (2.0 * uniform01(rng) - 1.0) * bound;
  return a;
}

struct Conv1dLayer {
  Tensor weight, bias;

  static Conv1dLayer create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                            std::size_t k, Rng& rng, bool with_bias = true) {
    Conv1dLayer l;
    l.weight = store.add(name + ".weight", kaiming_uniform({out, in, k}, in * k, rng));
    if (with_bias) l.bias = store.add(name + ".bias", bias_uniform(out, in * k, rng));
    return l;
  }
  Tensor operator()(const Tensor& x) const { return ops::conv1d(x, weight, bias); }
  std::size_t out_channels() const { return weight.dim(0); }
};

struct Conv2dLayer {
  Tensor weight, bias;

  static Conv2dLayer create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                            std::size_t kh, std::size_t kw, Rng& rng, bool with_bias = true) {
    Conv2dLayer l;
    l.weight = store.add(name + ".weight", kaiming_uniform({out, in, kh, kw}, in * kh * kw, rng));
    if (with_bias) l.bias = store.add(name + ".bias", bias_uniform(out, in * kh * kw, rng));
    return l;
  }
  Tensor operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias); }
};

struct LinearLayer {
  Tensor weight, bias;

  static LinearLayer create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                            bool with_bias = true) {
    LinearLayer l;
    l.weight = store.add(name + ".weight", kaiming_uniform({out, in}, in, rng));
    if (with_bias) l.bias = store.add(name + ".bias", bias_uniform(out, in, rng));
    return l;
  }
  Tensor operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }
};

struct BatchNormLayer {
  Tensor gamma, beta;
  BatchNormState* state = nullptr;

  static BatchNormLayer create(ParameterStore& store, const std::string& name, std::size_t channels) {
    BatchNormLayer l;
    l.gamma = store.add(name + ".gamma", Array(Shape{channels}, 1.0));
    l.beta = store.add(name + ".beta", Array(Shape{channels}, 0.0));
    l.state = &store.add_batch_norm(name, channels);
    return l;
  }
  Tensor operator()(const Tensor& x, bool training) const { return ops::batch_norm(x, gamma, beta, *state, training); }
};

}  // namespace mstar
