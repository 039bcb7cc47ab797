#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "mgcma/autograd.hpp"
#include "mgcma/parameters.hpp"

namespace mgcma {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Relative error with denominator max(|analytic|, |numeric|, 1e-8).
inline double grad_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients of a scalar computation with central
/// differences (f(theta + h) - f(theta - h)) / 2h, element by element over
/// every parameter in the store.
///
/// `loss_fn(Graph&, ParameterBinding&) -> Var` must build the same
/// computation on every call. The store is restored before returning.
template <typename LossFn>
GradCheckResult grad_check(ParameterStore& store, LossFn&& loss_fn, double h = 1e-4) {
  std::vector<Tensor> analytic;
  {
    Graph graph;
    ParameterBinding binding(graph, store);
    Var loss = loss_fn(graph, binding);
    graph.backward(loss);
    analytic = binding.gradients();
  }

  auto evaluate = [&]() {
    Graph graph;
    ParameterBinding binding(graph, store, false);
    return loss_fn(graph, binding).scalar();
  };

  GradCheckResult result;
  for (std::size_t p = 0; p < store.size(); ++p) {
    Tensor& param = store.at(p);
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double original = param[i];
      param[i] = original + h;
      const double up = evaluate();
      param[i] = original - h;
      const double down = evaluate();
      param[i] = original;

      const double numeric = (up - down) / (2.0 * h);
      const double err = grad_rel_error(analytic[p][i], numeric);
      ++result.checked;
      if (err > result.max_rel_error || result.checked == 1) {
        result.max_rel_error = err;
        result.worst_parameter = store.name(p);
        result.worst_index = i;
        result.analytic = analytic[p][i];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace mgcma
