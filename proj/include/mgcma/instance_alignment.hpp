#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "mgcma/autograd.hpp"
#include "mgcma/contrastive.hpp"
#include "mgcma/error.hpp"

namespace mgcma {

struct InstanceVector {
  std::vector<double> v;
  bool normalized = false;
};

/// Mean over tokens, optionally followed by L2 normalization. 1 x D.
inline Var pool_instance(const Var& x, bool normalize = true) {
  Var pooled = mean_rows(x);
  return normalize ? l2_normalize_rows(pooled) : pooled;
}

inline InstanceVector pool_instance(const Tensor& x) {
  Graph graph;
  Var v = pool_instance(graph.constant(x), true);
  const auto data = v.value().data();
  return {{data.begin(), data.end()}, true};
}

/// Instance-level contrastive loss over N x D speech and text rows with
/// dot-product logits S T^T / tau.
inline Var instance_contrastive_loss(const Var& speech, const Var& text, double tau,
                                     ContrastiveTerms* terms = nullptr) {
  if (!(tau > 0.0)) throw ConfigError("instance loss: tau must be positive");
  if (speech.rows() == 0) throw EmptyInputError("instance loss: empty batch");
  if (speech.rows() != text.rows()) throw DimensionError("instance loss: pair count mismatch");
  Var logits = scale(matmul(speech, transpose(text)), 1.0 / tau);
  return symmetric_info_nce(logits, terms);
}

inline ContrastiveTerms instance_contrastive_loss(std::span<const InstanceVector> speech,
                                                  std::span<const InstanceVector> text, double tau,
                                                  bool require_normalized = true) {
  if (speech.empty()) throw EmptyInputError("instance loss: empty batch");
  if (speech.size() != text.size()) throw DimensionError("instance loss: pair count mismatch");
  const std::size_t d = speech[0].v.size();
  auto stack = [d, require_normalized](std::span<const InstanceVector> xs) {
    Tensor t = Tensor::zeros(xs.size(), d);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (xs[i].v.size() != d) throw DimensionError("instance loss: dimension mismatch");
      if (require_normalized) {
        double ss = 0.0;
        for (double x : xs[i].v) ss += x * x;
        if (!xs[i].normalized || std::abs(std::sqrt(ss) - 1.0) > 1e-9) {
          throw ContractError("instance loss: input vector is not L2-normalized");
        }
      }
      for (std::size_t j = 0; j < d; ++j) t(i, j) = xs[i].v[j];
    }
    return t;
  };
  Graph graph;
  ContrastiveTerms terms;
  instance_contrastive_loss(graph.constant(stack(speech)), graph.constant(stack(text)), tau, &terms);
  return terms;
}

}  // namespace mgcma
