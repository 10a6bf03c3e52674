#pragma once

// Graph variational autoencoder baseline.
//   H_0 = sum_j A_j W_enc                                  [13, h]
//   H_{i+1} = MLP(concat_j((1 + eps_i) H_{i,j} + A_j H_{i,j}))
// where H_{i,j} is the j-th quarter of H_i along the feature axis, so every
// operation channel propagates its own slice of the representation. The MLP
// is two rounds of linear, batch norm, leaky ReLU. Per-node heads give mu and
// log sigma; V = mu + sigma * eta. The decoder is
//   Z = V W_dec split into four [13, d_z] parts,  A_hat_j = ReLU(Z_j Z_j^T),
// restricted to the legal edge slots like the CAE output.

#include <memory>
#include <vector>

#include "mstar/surrogate/cae.hpp"

namespace mstar {

struct VaeConfig {
  std::size_t hidden = 128;  // divisible by 4
  std::size_t layers = 5;
  std::size_t latent = 16;
  std::size_t decoder_dim = 16;
  double kl_weight = 1.0 / 676.0;  // KL per sample is spread over the 676 reconstructed entries
};

struct VaeOutput {
  Tensor mu, log_sigma, v, recon;  // [B,13,d], [B,13,d], [B,13,d], [B,4,13,13]
};

class VaeModel {
 public:
  VaeModel() : store_(std::make_unique<ParameterStore>()) {}
  VaeModel(VaeModel&&) = default;
  VaeModel& operator=(VaeModel&&) = default;

  static VaeModel create(const VaeConfig& cfg, std::uint64_t seed) {
    if (cfg.hidden == 0 || cfg.hidden % 4 != 0) throw ConfigError("vae: hidden must be a positive multiple of 4");
    if (cfg.layers == 0 || cfg.latent == 0 || cfg.decoder_dim == 0) throw ConfigError("vae: sizes must be positive");
    VaeModel m;
    m.cfg_ = cfg;
    Rng rng = make_rng(seed, 0x766165);
    ParameterStore& s = *m.store_;
    const std::size_t h = cfg.hidden;
    m.w_enc_ = s.add("vae.w_enc", kaiming_uniform({13, h}, 13, rng));
    for (std::size_t i = 0; i < cfg.layers; ++i) {
      const std::string p = "vae.layer" + std::to_string(i);
      Layer l;
      l.eps = s.add(p + ".eps", Array(Shape{1}, 0.0));
      l.fc1 = LinearLayer::create(s, p + ".fc1", h, h, rng);
      l.bn1 = BatchNormLayer::create(s, p + ".bn1", h);
      l.fc2 = LinearLayer::create(s, p + ".fc2", h, h, rng);
      l.bn2 = BatchNormLayer::create(s, p + ".bn2", h);
      m.layers_.push_back(l);
    }
    m.mu_ = LinearLayer::create(s, "vae.mu", h, cfg.latent, rng);
    m.log_sigma_ = LinearLayer::create(s, "vae.log_sigma", h, cfg.latent, rng);
    // start near sigma = 1 so early samples do not blow up the decoder
    for (auto& v : m.log_sigma_.weight.mutable_value().storage()) v *= 0.01;
    m.log_sigma_.bias.mutable_value().fill(0.0);
    m.w_dec_ = s.add("vae.w_dec", kaiming_uniform({4 * cfg.decoder_dim, cfg.latent}, cfg.latent, rng));
    return m;
  }

  const VaeConfig& config() const { return cfg_; }
  ParameterStore& store() { return *store_; }
  const ParameterStore& store() const { return *store_; }
  const LinearLayer& mu_head() const { return mu_; }
  const LinearLayer& log_sigma_head() const { return log_sigma_; }

  // Mean and log-sigma of the latent code.
  std::pair<Tensor, Tensor> encode(const Tensor& a, bool training) const {
    if (a.rank() != 4 || a.dim(1) != 4 || a.dim(2) != 13 || a.dim(3) != 13)
      throw ShapeError("vae: expected [B,4,13,13], got " + shape_str(a.shape()));
    const std::size_t B = a.dim(0), h = cfg_.hidden, q = h / 4;
    std::vector<Tensor> adj;
    for (std::size_t j = 0; j < 4; ++j) adj.push_back(ops::reshape(ops::slice(a, 1, j, 1), {B, 13, 13}));
    // sum_j A_j W_enc, as one matmul over the summed adjacency
    Tensor a_sum = ops::reshape(ops::add_n(adj), {B * 13, 13});
    Tensor H = ops::reshape(ops::matmul(a_sum, w_enc_), {B, 13, h});
    for (const auto& l : layers_) {
      std::vector<Tensor> parts;
      for (std::size_t j = 0; j < 4; ++j) {
        Tensor hj = ops::slice(H, 2, j * q, q);
        parts.push_back(ops::add(ops::scale_by(hj, l.eps, 1.0), ops::bmm(adj[j], hj)));
      }
      Tensor x = ops::reshape(ops::concat(parts, 2), {B * 13, h});
      x = ops::leaky_relu(l.bn1(l.fc1(x), training));
      x = ops::leaky_relu(l.bn2(l.fc2(x), training));
      H = ops::reshape(x, {B, 13, h});
    }
    Tensor flat = ops::reshape(H, {B * 13, h});
    return {ops::reshape(mu_(flat), {B, 13, cfg_.latent}), ops::reshape(log_sigma_(flat), {B, 13, cfg_.latent})};
  }

  Tensor decode(const Tensor& v) const {
    const std::size_t B = v.dim(0), d = cfg_.decoder_dim;
    Tensor z = ops::reshape(ops::linear(ops::reshape(v, {B * 13, cfg_.latent}), w_dec_), {B, 13, 4 * d});
    std::vector<Tensor> recon;
    for (std::size_t j = 0; j < 4; ++j)
      recon.push_back(ops::reshape(ops::relu(ops::gram(ops::slice(z, 2, j * d, d))), {B, 1, 13, 13}));
    return ops::mul(ops::concat(recon, 1), Tensor::constant(legal_slot_mask(B)));
  }

  // `eta` (same shape as mu) is the reparameterisation noise; an undefined
  // eta means V = mu.
  VaeOutput forward(const Tensor& a, bool training, const Tensor& eta = {}) const {
    auto [mu, ls] = encode(a, training);
    Tensor v = eta.defined() ? ops::add(mu, ops::mul(ops::exp(ls), eta)) : mu;
    return {mu, ls, v, decode(v)};
  }

  Tensor loss(const Tensor& a, const Array& target, bool training, const Tensor& eta) const {
    const auto out = forward(a, training, eta);
    const double B = static_cast<double>(a.dim(0));
    return ops::add(loss::mse(out.recon, target),
                    ops::scale(loss::kl_standard_normal(out.mu, out.log_sigma), cfg_.kl_weight / B));
  }

  double reconstruction_loss(const std::vector<CellMatrix>& ms, std::size_t chunk = 256) const {
    NoGradGuard guard;
    double s = 0.0;
    for (std::size_t lo = 0; lo < ms.size(); lo += chunk) {
      const std::size_t hi = std::min(ms.size(), lo + chunk);
      std::vector<CellMatrix> part(ms.begin() + static_cast<std::ptrdiff_t>(lo), ms.begin() + static_cast<std::ptrdiff_t>(hi));
      const Array target = matrices_to_array(part);
      s += loss::mse(forward(Tensor::constant(target), false).recon, target).item() * static_cast<double>(part.size());
    }
    return ms.empty() ? 0.0 : s / static_cast<double>(ms.size());
  }

 private:
  struct Layer {
    Tensor eps;
    LinearLayer fc1, fc2;
    BatchNormLayer bn1, bn2;
  };
  std::unique_ptr<ParameterStore> store_;
  VaeConfig cfg_;
  Tensor w_enc_, w_dec_;
  std::vector<Layer> layers_;
  LinearLayer mu_, log_sigma_;
};

inline Array standard_normal_array(Shape shape, Rng& rng) {
  Array a(std::move(shape));
  for (auto& v : a.storage()) v = standard_normal(rng);
  return a;
}

struct VaeTraining {
  VaeModel model;
  std::vector<LossRecord> history;  // reconstruction L2 with V = mu
};

inline VaeTraining train_vae(const std::vector<CellMatrix>& corpus, const VaeConfig& vcfg,
                             const AutoencoderTrainConfig& cfg, const CorpusSplit* split = nullptr) {
  if (corpus.empty()) throw ConfigError("train_vae: empty corpus");
  const CorpusSplit sp = split ? *split : split_corpus(corpus.size(), cfg.test_fraction, cfg.seed);
  VaeTraining out{VaeModel::create(vcfg, cfg.seed), {}};
  VaeModel& m = out.model;
  out.history = train_autoencoder(
      m.store(), corpus, sp, cfg,
      [&](const std::vector<CellMatrix>& batch, Rng& rng) {
        const Array target = matrices_to_array(batch);
        Tensor eta = Tensor::constant(standard_normal_array({batch.size(), 13, vcfg.latent}, rng));
        return m.loss(Tensor::constant(target), target, true, eta);
      },
      [&](const std::vector<CellMatrix>& set) { return m.reconstruction_loss(set); });
  return out;
}

}  // namespace mstar
