#pragma once

#include <numeric>
#include <vector>

#include "mgcma/autograd.hpp"

namespace mgcma {

/// Value and per-pair terms of a symmetric in-batch contrastive loss.
struct ContrastiveTerms {
  double loss = 0.0;
  std::vector<double> s2t;  // -log softmax over row i, at column i
  std::vector<double> t2s;  // -log softmax over column i, at row i
};

/// Symmetric InfoNCE over an N x N logit matrix whose (i, j) entry scores
/// speech i against text j; positives sit on the diagonal.
///
/// loss = (1/2N) sum_i (s2t_i + t2s_i)
inline Var symmetric_info_nce(const Var& logits, ContrastiveTerms* terms = nullptr) {
  const std::size_t n = logits.rows();
  if (n == 0) throw EmptyInputError("contrastive loss: empty batch");
  if (logits.cols() != n) throw DimensionError("contrastive loss: logits must be square");
  std::vector<std::size_t> diagonal(n);
  std::iota(diagonal.begin(), diagonal.end(), std::size_t{0});

  Var s2t = cross_entropy_rows(logits, diagonal);
  Var t2s = cross_entropy_rows(transpose(logits), diagonal);
  Var loss = scale(add(s2t, t2s), 0.5);

  if (terms) {
    const Tensor& z = logits.value();
    terms->loss = loss.scalar();
    terms->s2t.assign(n, 0.0);
    terms->t2s.assign(n, 0.0);
    std::vector<double> column(n);
    for (std::size_t i = 0; i < n; ++i) {
      terms->s2t[i] = kernels::log_sum_exp(z.row_span(i)) - z(i, i);
      for (std::size_t r = 0; r < n; ++r) column[r] = z(r, i);
      terms->t2s[i] = kernels::log_sum_exp(column) - z(i, i);
    }
  }
  return loss;
}

}  // namespace mgcma
