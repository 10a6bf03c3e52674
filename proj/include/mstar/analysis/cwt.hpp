#pragma once

// Continuous wavelet transform with a Morlet mother wavelet:
//   CWT(a, b) = a^-1/2 * sum_n x[n] * conj(psi((n - b) / a))
//   psi(t) = pi^-1/4 * exp(i w0 t) * exp(-t^2 / 2)

#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "mstar/error.hpp"

namespace mstar {

struct CwtParams {
  std::vector<double> scales;  // ascending, positive
  double omega0 = 6.0;
  double fs = 1.0;             // samples per second, for the frequency axis
  double support = 8.0;        // |t| beyond which the Gaussian envelope is treated as zero

  void check() const {
    if (scales.empty()) throw ConfigError("cwt: no scales");
    for (std::size_t i = 0; i < scales.size(); ++i) {
      if (!(scales[i] > 0.0)) throw ConfigError("cwt: scales must be positive");
      if (i > 0 && !(scales[i] > scales[i - 1])) throw ConfigError("cwt: scales must be strictly ascending");
    }
    if (!(omega0 > 0.0) || !(fs > 0.0) || !(support > 0.0)) throw ConfigError("cwt: omega0, fs and support must be positive");
  }
};

// `count` log-spaced scales from lo to hi inclusive.
inline std::vector<double> log_scales(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0) || !(hi > lo) || count < 2) throw ConfigError("log_scales: need 0 < lo < hi and count >= 2");
  std::vector<double> s(count);
  const double step = std::log(hi / lo) / static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) s[i] = lo * std::exp(step * static_cast<double>(i));
  s.back() = hi;
  return s;
}

// Default grid: 64 scales over 2 .. L/2.
inline CwtParams default_cwt_params(std::size_t length, double fs = 1.0) {
  if (length < 8) throw ConfigError("cwt: signal too short for the default scale grid");
  CwtParams p;
  p.scales = log_scales(2.0, static_cast<double>(length) / 2.0, 64);
  p.fs = fs;
  return p;
}

// Pseudo-frequency (Hz) whose response peaks at scale a.
inline double scale_to_frequency(double a, double omega0, double fs) { return omega0 * fs / (2.0 * std::numbers::pi * a); }

struct CwtCoefficients {
  std::size_t scales = 0, length = 0;
  std::vector<std::complex<double>> values;  // row-major [scale][time]
  std::complex<double> at(std::size_t s, std::size_t t) const { return values[s * length + t]; }
};

inline CwtCoefficients cwt_complex(const std::vector<double>& x, const CwtParams& p) {
  if (x.size() < 2) throw ConfigError("cwt: signal length must be >= 2");
  p.check();
  const auto L = static_cast<long>(x.size());
  CwtCoefficients c{p.scales.size(), x.size(), std::vector<std::complex<double>>(p.scales.size() * x.size())};
  const double norm = std::pow(std::numbers::pi, -0.25);
  for (std::size_t s = 0; s < p.scales.size(); ++s) {
    const double a = p.scales[s];
    const auto half = static_cast<long>(std::ceil(p.support * a));
    // conj(psi(t)) sampled at t = k / a for k in [-half, half]
    std::vector<std::complex<double>> kernel(static_cast<std::size_t>(2 * half + 1));
    for (long k = -half; k <= half; ++k) {
      const double t = static_cast<double>(k) / a;
      kernel[static_cast<std::size_t>(k + half)] = norm * std::exp(-0.5 * t * t) * std::polar(1.0, -p.omega0 * t);
    }
    const double inv_sqrt_a = 1.0 / std::sqrt(a);
    for (long b = 0; b < L; ++b) {
      std::complex<double> acc = 0.0;
      const long lo = std::max(0L, b - half), hi = std::min(L - 1, b + half);
      for (long n = lo; n <= hi; ++n) acc += x[static_cast<std::size_t>(n)] * kernel[static_cast<std::size_t>(n - b + half)];
      c.values[s * x.size() + static_cast<std::size_t>(b)] = acc * inv_sqrt_a;
    }
  }
  return c;
}

struct Spectrogram {
  std::vector<double> scales;
  std::vector<double> frequencies;  // pseudo-frequency of each scale
  std::size_t length = 0;
  double fs = 1.0;
  std::vector<double> magnitude;  // row-major [scale][time]

  double at(std::size_t s, std::size_t t) const { return magnitude[s * length + t]; }

  std::string to_csv() const {
    std::string out;
    char buf[40];
    for (std::size_t s = 0; s < scales.size(); ++s) {
      for (std::size_t t = 0; t < length; ++t) {
        std::snprintf(buf, sizeof buf, "%.17g", at(s, t));
        out += buf;
        out += t + 1 < length ? ',' : '\n';
      }
    }
    return out;
  }

  nlohmann::json axes() const {
    return {{"rows", "scale"}, {"cols", "time"}, {"scales", scales}, {"frequencies", frequencies},
            {"length", length}, {"fs", fs}};
  }
};

inline Spectrogram cwt(const std::vector<double>& x, const CwtParams& p) {
  const auto c = cwt_complex(x, p);
  Spectrogram s;
  s.scales = p.scales;
  for (double a : p.scales) s.frequencies.push_back(scale_to_frequency(a, p.omega0, p.fs));
  s.length = x.size();
  s.fs = p.fs;
  s.magnitude.reserve(c.values.size());
  for (const auto& v : c.values) s.magnitude.push_back(std::abs(v));
  return s;
}

}  // namespace mstar
