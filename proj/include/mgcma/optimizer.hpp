#pragma once

#include <cmath>
#include <vector>

#include "mgcma/error.hpp"
#include "mgcma/parameters.hpp"

namespace mgcma {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

/// One Adam update with bias correction:
///   m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
inline void adam_step(ParameterStore& params, const std::vector<Tensor>& grads, AdamState& state,
                      const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw DimensionError("adam: gradient count mismatch");
  if (state.m.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m.emplace_back(params.at(i).shape());
      state.v.emplace_back(params.at(i).shape());
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam: state size mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = params.at(p);
    const Tensor& g = grads[p];
    if (g.shape() != theta.shape()) throw DimensionError("adam: gradient shape mismatch for " + params.name(p));
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      theta[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

}  // namespace mgcma
