#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mgcma/attention.hpp"
#include "mgcma/autograd.hpp"
#include "mgcma/contrastive.hpp"
#include "mgcma/error.hpp"
#include "mgcma/parameters.hpp"

namespace mgcma {

/// Lower bound added after softplus so every sigma is strictly positive.
inline constexpr double kSigmaFloor = 1e-6;

/// Diagonal Gaussian N(mu, diag(sigma^2)); sigma holds standard deviations.
struct GaussianEmbedding {
  std::vector<double> mu;
  std::vector<double> sigma;

  std::size_t dim() const { return mu.size(); }

  void validate() const {
    if (mu.size() != sigma.size()) throw DimensionError("gaussian: mu and sigma lengths differ");
    for (std::size_t i = 0; i < mu.size(); ++i) {
      if (!std::isfinite(mu[i]) || !std::isfinite(sigma[i])) throw NumericError("gaussian: non-finite entry");
      if (!(sigma[i] > 0.0)) throw ContractError("gaussian: sigma must be strictly positive");
    }
  }
};

struct ContrastiveConfig {
  double p = 1.0;  // similarity scale, > 0
  double q = 0.0;  // similarity bias
  double tau = 0.07;

  void validate() const {
    if (!(p > 0.0)) throw ConfigError("contrastive: p must be positive");
    if (!(tau > 0.0)) throw ConfigError("contrastive: tau must be positive");
  }
};

/// Squared 2-Wasserstein distance between diagonal Gaussians:
/// ||mu1 - mu2||^2 + ||sigma1 - sigma2||^2.
inline double wasserstein2_sq(const GaussianEmbedding& g1, const GaussianEmbedding& g2) {
  if (g1.dim() != g2.dim() || g1.sigma.size() != g2.sigma.size()) {
    throw DimensionError("wasserstein2_sq: dimension mismatch");
  }
  double mu_term = 0.0, sigma_term = 0.0;
  for (std::size_t i = 0; i < g1.dim(); ++i) {
    const double dm = g1.mu[i] - g2.mu[i];
    const double ds = g1.sigma[i] - g2.sigma[i];
    mu_term += dm * dm;
    sigma_term += ds * ds;
  }
  return mu_term + sigma_term;
}

inline double similarity(const GaussianEmbedding& g1, const GaussianEmbedding& g2, const ContrastiveConfig& cfg) {
  cfg.validate();
  return -cfg.p * wasserstein2_sq(g1, g2) + cfg.q;
}

/// Utterance-level Gaussian inside a graph: mu and sigma are 1 x D rows.
struct GaussianVars {
  Var mu;
  Var sigma;
};

/// Parameter names of one distribution constructor (self-attention with a
/// residual, then mu and sigma branches of `branch_layers` linears each).
struct DistributionConstructorParams {
  AttentionParams attention;
  std::vector<std::string> mu_weights, mu_biases;
  std::vector<std::string> sigma_weights, sigma_biases;
};

inline DistributionConstructorParams register_distribution_constructor(ParameterStore& store,
                                                                       const std::string& prefix,
                                                                       const AttentionConfig& attention,
                                                                       std::size_t branch_layers, Rng& rng) {
  if (branch_layers == 0) throw ConfigError("distribution constructor: branch_layers must be >= 1");
  DistributionConstructorParams params;
  params.attention = register_attention(store, prefix + ".attn", attention, rng);
  const std::size_t d = attention.model_dim;
  for (std::size_t l = 0; l < branch_layers; ++l) {
    const std::string suffix = std::to_string(l);
    params.mu_weights.push_back(store.add_weight(prefix + ".mu.w" + suffix, d, d, rng));
    params.mu_biases.push_back(store.add_bias(prefix + ".mu.b" + suffix, d));
  }
  for (std::size_t l = 0; l < branch_layers; ++l) {
    const std::string suffix = std::to_string(l);
    params.sigma_weights.push_back(store.add_weight(prefix + ".sigma.w" + suffix, d, d, rng));
    params.sigma_biases.push_back(store.add_bias(prefix + ".sigma.b" + suffix, d));
  }
  return params;
}

namespace detail {

// Linear stack; tanh between consecutive layers, none after the last.
inline Var branch(Var h, const std::vector<std::string>& weights, const std::vector<std::string>& biases,
                  ParameterBinding& bind) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (l > 0) h = tanh(h);
    h = linear(h, bind(weights[l]), bind(biases[l]));
  }
  return h;
}

}  // namespace detail

/// x (L x D) -> one utterance-level Gaussian.
///
/// h = x + MHA(x, x); mu = mean_L(branch_mu(h));
/// sigma = softplus(mean_L(branch_sigma(h))) + 1e-6.
inline GaussianVars construct_distribution(const Var& x, const DistributionConstructorParams& params,
                                           ParameterBinding& bind) {
  if (x.rows() == 0) throw EmptyInputError("construct_distribution: empty sequence");
  Var h = add(x, multi_head(x, x, params.attention, bind));
  Var mu = mean_rows(detail::branch(h, params.mu_weights, params.mu_biases, bind));
  Var sigma_raw = mean_rows(detail::branch(h, params.sigma_weights, params.sigma_biases, bind));
  return {mu, shift(softplus(sigma_raw), kSigmaFloor)};
}

inline GaussianEmbedding construct_distribution(const Tensor& x, const DistributionConstructorParams& params,
                                                const ParameterStore& store) {
  Graph graph;
  ParameterBinding bind(graph, store, false);
  GaussianVars g = construct_distribution(graph.constant(x), params, bind);
  const auto mu = g.mu.value().data();
  const auto sigma = g.sigma.value().data();
  return {{mu.begin(), mu.end()}, {sigma.begin(), sigma.end()}};
}

/// Distribution-level contrastive loss over N speech and N text Gaussians
/// stacked as N x D rows. Logits are Sim / tau with Sim = -p W + q.
inline Var distribution_contrastive_loss(const Var& mu_speech, const Var& sigma_speech, const Var& mu_text,
                                         const Var& sigma_text, const ContrastiveConfig& cfg,
                                         ContrastiveTerms* terms = nullptr) {
  cfg.validate();
  if (mu_speech.rows() == 0) throw EmptyInputError("distribution loss: empty batch");
  if (mu_speech.rows() != mu_text.rows()) throw DimensionError("distribution loss: pair count mismatch");
  Var distance = add(pairwise_sq_dist(mu_speech, mu_text), pairwise_sq_dist(sigma_speech, sigma_text));
  Var sim = shift(scale(distance, -cfg.p), cfg.q);
  return symmetric_info_nce(scale(sim, 1.0 / cfg.tau), terms);
}

inline ContrastiveTerms distribution_contrastive_loss(std::span<const GaussianEmbedding> speech,
                                                      std::span<const GaussianEmbedding> text,
                                                      const ContrastiveConfig& cfg) {
  if (speech.empty()) throw EmptyInputError("distribution loss: empty batch");
  if (speech.size() != text.size()) throw DimensionError("distribution loss: pair count mismatch");
  const std::size_t d = speech[0].dim();
  auto stack = [d](std::span<const GaussianEmbedding> gs, bool sigma) {
    Tensor t = Tensor::zeros(gs.size(), d);
    for (std::size_t i = 0; i < gs.size(); ++i) {
      gs[i].validate();
      const auto& src = sigma ? gs[i].sigma : gs[i].mu;
      if (src.size() != d) throw DimensionError("distribution loss: dimension mismatch");
      for (std::size_t j = 0; j < d; ++j) t(i, j) = src[j];
    }
    return t;
  };
  Graph graph;
  ContrastiveTerms terms;
  distribution_contrastive_loss(graph.constant(stack(speech, false)), graph.constant(stack(speech, true)),
                                graph.constant(stack(text, false)), graph.constant(stack(text, true)), cfg, &terms);
  return terms;
}

}  // namespace mgcma
