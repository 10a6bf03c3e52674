#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mstar/numerics/tensor.hpp"

namespace mstar {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  bool decoupled = false;  // AdamW when true
};

// Adam with bias correction; decoupled weight decay (AdamW) when requested,
// otherwise weight decay enters the gradient (classic L2 penalty).
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
      m_.emplace_back(p.shape(), 0.0);
      v_.emplace_back(p.shape(), 0.0);
    }
  }

  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  std::size_t step_count() const { return step_; }
  const std::vector<Array>& first_moments() const { return m_; }
  const std::vector<Array>& second_moments() const { return v_; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      const Array& g = p.grad();
      Array& w = p.mutable_value();
      Array& m = m_[k];
      Array& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        double gi = g[i];
        if (!config_.decoupled && config_.weight_decay != 0.0) gi += config_.weight_decay * w[i];
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        if (config_.decoupled && config_.weight_decay != 0.0) w[i] -= config_.lr * config_.weight_decay * w[i];
        w[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
      }
    }
  }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<Array> m_, v_;
  std::size_t step_ = 0;
};

struct LrSchedule {
  enum class Kind { Constant, OneCycle };
  Kind kind = Kind::Constant;
  double max_lr = 1e-3;
  std::size_t total_steps = 1;
  double warmup_fraction = 0.3;
  double start_div = 25.0;
  double final_div = 1e4;

  static LrSchedule constant(double lr) { return {Kind::Constant, lr, 1, 0.0, 1.0, 1.0}; }
  static LrSchedule one_cycle(double max_lr, std::size_t total_steps, double warmup_fraction = 0.3,
                              double start_div = 25.0, double final_div = 1e4) {
    return {Kind::OneCycle, max_lr, total_steps, warmup_fraction, start_div, final_div};
  }
};

// One-cycle: linear ramp from max/start_div to max over the warm-up, then
// cosine annealing to max/final_div at total_steps. Steps past the end
// clamp to the final value.
inline double schedule_lr(const LrSchedule& s, std::size_t step) {
  if (s.kind == LrSchedule::Kind::Constant) return s.max_lr;
  const double total = static_cast<double>(std::max<std::size_t>(1, s.total_steps));
  const double t = std::min(static_cast<double>(step), total);
  const double warm = s.warmup_fraction * total;
  const double lo = s.max_lr / s.start_div, hi = s.max_lr, end = s.max_lr / s.final_div;
  if (t < warm) return lo + (hi - lo) * (t / warm);
  const double span = total - warm;
  if (span <= 0.0) return end;
  const double frac = (t - warm) / span;
  return end + (hi - end) * 0.5 * (1.0 + std::cos(3.141592653589793 * frac));
}

}  // namespace mstar
