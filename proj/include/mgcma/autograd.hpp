#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgcma/error.hpp"
#include "mgcma/tensor.hpp"

namespace mgcma {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const { return value()[0]; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape of operations recorded in construction order.
///
/// Node ids are a topological order, so backward walks ids in reverse and
/// every gradient is accumulated in the same order on every run.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& upstream, const Tensor& output)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value) { return push("constant", std::move(value), false, {}); }

  Var leaf(Tensor value) { return push("leaf", std::move(value), true, {}); }

  /// Records an op output. The node needs a gradient iff any parent does.
  Var record(const char* op, Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
    return record(op, std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(fn));
  }

  Var record(const char* op, Tensor value, std::span<const Var> parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || nodes_[p.id()].requires_grad;
    return push(op, std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient slot of a parent, allocated on first touch; null when the
  /// parent does not take gradients.
  Tensor* grad_slot(const Var& v) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return nullptr;
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape());
      n.has_grad = true;
    }
    return &n.grad;
  }

  /// d(loss)/d(v) after backward; zeros when v was unreachable.
  Tensor grad(const Var& v) const {
    const Node& n = nodes_[v.id()];
    return n.has_grad ? n.grad : Tensor(n.value.shape());
  }

  void backward(const Var& loss) {
    if (loss.value().size() != 1) {
      throw ContractError("backward: loss must be a scalar, got shape " +
                          shape_string(loss.value().shape()));
    }
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    if (Tensor* seed = grad_slot(loss)) (*seed)[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.has_grad && n.backward) {
        // upstream is not touched while parents (ids < i) accumulate
        n.backward(*this, n.grad, n.value);
      }
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  Var push(const char* op, Tensor value, bool requires_grad, BackwardFn fn) {
    if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite value produced");
    value.set_requires_grad(requires_grad);
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, false, std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }

namespace kernels {

// out (MxN) += a (MxK) * b (KxN)
inline void gemm_nn(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out (MxN) += a (MxK) * b^T, b is NxK
inline void gemm_nt(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += pa[i * k + p] * pb[j * k + p];
      po[i * n + j] += s;
    }
  }
}

// out (KxN) += a^T * b, a is MxK, b is MxN
inline void gemm_tn(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = pb + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      double* orow = po + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

inline void softmax_row(std::span<const double> in, std::span<double> out) {
  const double mx = *std::max_element(in.begin(), in.end());
  double sum = 0.0;
  for (std::size_t j = 0; j < in.size(); ++j) {
    out[j] = std::exp(in[j] - mx);
    sum += out[j];
  }
  for (double& v : out) v /= sum;
}

inline double log_sum_exp(std::span<const double> in) {
  const double mx = *std::max_element(in.begin(), in.end());
  double sum = 0.0;
  for (double v : in) sum += std::exp(v - mx);
  return mx + std::log(sum);
}

// log(1 + e^x) without overflow
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace kernels

namespace detail {

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.value().shape() != b.value().shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.value().shape()) + " vs " +
                         shape_string(b.value().shape()));
  }
}

inline void accumulate(Tensor* slot, const Tensor& g, double factor = 1.0) {
  if (!slot) return;
  for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += factor * g[i];
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  detail::require_rank2(a.value(), "matmul");
  detail::require_rank2(b.value(), "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ " + shape_string(a.value().shape()) + " x " +
                         shape_string(b.value().shape()));
  }
  Tensor out = Tensor::zeros(a.rows(), b.cols());
  kernels::gemm_nn(a.value(), b.value(), out);
  return a.graph().record("matmul", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& up, const Tensor&) {
    if (Tensor* ga = g.grad_slot(a)) kernels::gemm_nt(up, b.value(), *ga);
    if (Tensor* gb = g.grad_slot(b)) kernels::gemm_tn(a.value(), up, *gb);
  });
}

inline Var transpose(const Var& a) {
  const Tensor& v = a.value();
  detail::require_rank2(v, "transpose");
  Tensor out = Tensor::zeros(v.cols(), v.rows());
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) out(j, i) = v(i, j);
  return a.graph().record("transpose", std::move(out), {a}, [a](Graph& g, const Tensor& up, const Tensor&) {
    Tensor* ga = g.grad_slot(a);
    for (std::size_t i = 0; i < up.rows(); ++i)
      for (std::size_t j = 0; j < up.cols(); ++j) (*ga)(j, i) += up(i, j);
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.graph().record("add", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& up, const Tensor&) {
    detail::accumulate(g.grad_slot(a), up);
    detail::accumulate(g.grad_slot(b), up);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.graph().record("sub", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& up, const Tensor&) {
    detail::accumulate(g.grad_slot(a), up);
    detail::accumulate(g.grad_slot(b), up, -1.0);
  });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.graph().record("mul", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& up, const Tensor&) {
    if (Tensor* ga = g.grad_slot(a))
      for (std::size_t i = 0; i < up.size(); ++i) (*ga)[i] += up[i] * b.value()[i];
    if (Tensor* gb = g.grad_slot(b))
      for (std::size_t i = 0; i < up.size(); ++i) (*gb)[i] += up[i] * a.value()[i];
  });
}

/// Adds a 1xC row to every row of an RxC matrix.
inline Var add_row(const Var& a, const Var& row) {
  detail::require_rank2(a.value(), "add_row");
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: bias " + shape_string(row.value().shape()) + " does not fit " +
                         shape_string(a.value().shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += row.value()[j];
  return a.graph().record("add_row", std::move(out), {a, row}, [a, row](Graph& g, const Tensor& up, const Tensor&) {
    detail::accumulate(g.grad_slot(a), up);
    if (Tensor* gr = g.grad_slot(row))
      for (std::size_t i = 0; i < up.rows(); ++i)
        for (std::size_t j = 0; j < up.cols(); ++j) (*gr)[j] += up(i, j);
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return a.graph().record("scale", std::move(out), {a},
                          [a, s](Graph& g, const Tensor& up, const Tensor&) { detail::accumulate(g.grad_slot(a), up, s); });
}

inline Var shift(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v += s;
  return a.graph().record("shift", std::move(out), {a},
                          [a](Graph& g, const Tensor& up, const Tensor&) { detail::accumulate(g.grad_slot(a), up); });
}

/// Row-wise softmax with per-row max subtraction.
inline Var softmax_rows(const Var& a) {
  const Tensor& v = a.value();
  detail::require_rank2(v, "softmax_rows");
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.rows(); ++i)
    kernels::softmax_row(v.row_span(i), out.data().subspan(i * v.cols(), v.cols()));
  return a.graph().record("softmax_rows", std::move(out), {a}, [a](Graph& g, const Tensor& up, const Tensor& y) {
    Tensor* ga = g.grad_slot(a);
    const std::size_t c = y.cols();
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += up(i, j) * y(i, j);
      for (std::size_t j = 0; j < c; ++j) (*ga)(i, j) += y(i, j) * (up(i, j) - dot);
    }
  });
}

/// Arithmetic mean over rows: LxD -> 1xD.
inline Var mean_rows(const Var& a) {
  const Tensor& v = a.value();
  detail::require_rank2(v, "mean_rows");
  if (v.rows() == 0) throw EmptyInputError("mean_rows: empty sequence");
  const std::size_t l = v.rows(), d = v.cols();
  Tensor out = Tensor::zeros(1, d);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += v(i, j);
  for (double& x : out.data()) x /= static_cast<double>(l);
  return a.graph().record("mean_rows", std::move(out), {a}, [a, l, d](Graph& g, const Tensor& up, const Tensor&) {
    Tensor* ga = g.grad_slot(a);
    const double inv = 1.0 / static_cast<double>(l);
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t j = 0; j < d; ++j) (*ga)(i, j) += up[j] * inv;
  });
}

/// Scales every row to unit Euclidean norm.
inline Var l2_normalize_rows(const Var& a) {
  const Tensor& v = a.value();
  detail::require_rank2(v, "l2_normalize_rows");
  const std::size_t r = v.rows(), c = v.cols();
  std::vector<double> norms(r);
  Tensor out = v;
  for (std::size_t i = 0; i < r; ++i) {
    double ss = 0.0;
    for (double x : v.row_span(i)) ss += x * x;
    norms[i] = std::sqrt(ss);
    if (!(norms[i] > 0.0)) throw DegenerateInputError("l2_normalize: zero vector");
    for (std::size_t j = 0; j < c; ++j) out(i, j) /= norms[i];
  }
  return a.graph().record("l2_normalize_rows", std::move(out), {a},
                          [a, norms](Graph& g, const Tensor& up, const Tensor& y) {
                            Tensor* ga = g.grad_slot(a);
                            for (std::size_t i = 0; i < y.rows(); ++i) {
                              double dot = 0.0;
                              for (std::size_t j = 0; j < y.cols(); ++j) dot += up(i, j) * y(i, j);
                              for (std::size_t j = 0; j < y.cols(); ++j)
                                (*ga)(i, j) += (up(i, j) - dot * y(i, j)) / norms[i];
                            }
                          });
}

inline Var softplus(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = kernels::softplus(v);
  return a.graph().record("softplus", std::move(out), {a}, [a](Graph& g, const Tensor& up, const Tensor&) {
    Tensor* ga = g.grad_slot(a);
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < up.size(); ++i) (*ga)[i] += up[i] * kernels::sigmoid(x[i]);
  });
}

inline Var tanh(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::tanh(v);
  return a.graph().record("tanh", std::move(out), {a}, [a](Graph& g, const Tensor& up, const Tensor& y) {
    Tensor* ga = g.grad_slot(a);
    for (std::size_t i = 0; i < up.size(); ++i) (*ga)[i] += up[i] * (1.0 - y[i] * y[i]);
  });
}

/// Row-wise standardization without affine parameters.
inline Var layer_norm_rows(const Var& a, double eps = 1e-5) {
  const Tensor& v = a.value();
  detail::require_rank2(v, "layer_norm_rows");
  const std::size_t r = v.rows(), c = v.cols();
  Tensor out = v;
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (double x : v.row_span(i)) mean += x;
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (double x : v.row_span(i)) var += (x - mean) * (x - mean);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) out(i, j) = (v(i, j) - mean) * inv_std[i];
  }
  return a.graph().record("layer_norm_rows", std::move(out), {a},
                          [a, inv_std](Graph& g, const Tensor& up, const Tensor& y) {
                            Tensor* ga = g.grad_slot(a);
                            const std::size_t c = y.cols();
                            const double n = static_cast<double>(c);
                            for (std::size_t i = 0; i < y.rows(); ++i) {
                              double sum_up = 0.0, sum_up_y = 0.0;
                              for (std::size_t j = 0; j < c; ++j) {
                                sum_up += up(i, j);
                                sum_up_y += up(i, j) * y(i, j);
                              }
                              for (std::size_t j = 0; j < c; ++j)
                                (*ga)(i, j) += inv_std[i] * (up(i, j) - sum_up / n - y(i, j) * sum_up_y / n);
                            }
                          });
}

/// Concatenates matrices with equal row counts along the column axis.
inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw EmptyInputError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    if (p.rows() != r) throw DimensionError("concat_cols: row counts differ");
    offsets.push_back(c);
    c += p.cols();
  }
  Tensor out = Tensor::zeros(r, c);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out(i, offsets[k] + j) = v(i, j);
  }
  std::vector<Var> owned(parts.begin(), parts.end());
  return parts[0].graph().record("concat_cols", std::move(out), parts,
                                 [owned, offsets](Graph& g, const Tensor& up, const Tensor&) {
                                   for (std::size_t k = 0; k < owned.size(); ++k) {
                                     Tensor* gk = g.grad_slot(owned[k]);
                                     if (!gk) continue;
                                     for (std::size_t i = 0; i < gk->rows(); ++i)
                                       for (std::size_t j = 0; j < gk->cols(); ++j)
                                         (*gk)(i, j) += up(i, offsets[k] + j);
                                   }
                                 });
}

/// Concatenates matrices with equal column counts along the row axis.
inline Var stack_rows(std::span<const Var> parts) {
  if (parts.empty()) throw EmptyInputError("stack_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    if (p.cols() != c) throw DimensionError("stack_rows: column counts differ");
    offsets.push_back(r);
    r += p.rows();
  }
  Tensor out = Tensor::zeros(r, c);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(offsets[k] * c));
  }
  std::vector<Var> owned(parts.begin(), parts.end());
  return parts[0].graph().record("stack_rows", std::move(out), parts,
                                 [owned, offsets, c](Graph& g, const Tensor& up, const Tensor&) {
                                   for (std::size_t k = 0; k < owned.size(); ++k) {
                                     Tensor* gk = g.grad_slot(owned[k]);
                                     if (!gk) continue;
                                     for (std::size_t i = 0; i < gk->size(); ++i)
                                       (*gk)[i] += up[offsets[k] * c + i];
                                   }
                                 });
}

/// out(i, j) = ||a_i - b_j||^2 for A (NxD), B (MxD).
inline Var pairwise_sq_dist(const Var& a, const Var& b) {
  detail::require_rank2(a.value(), "pairwise_sq_dist");
  detail::require_rank2(b.value(), "pairwise_sq_dist");
  if (a.cols() != b.cols()) throw DimensionError("pairwise_sq_dist: feature dims differ");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t n = av.rows(), m = bv.rows(), d = av.cols();
  Tensor out = Tensor::zeros(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = av(i, k) - bv(j, k);
        s += diff * diff;
      }
      out(i, j) = s;
    }
  return a.graph().record("pairwise_sq_dist", std::move(out), {a, b}, [a, b](Graph& g, const Tensor& up, const Tensor&) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor* ga = g.grad_slot(a);
    Tensor* gb = g.grad_slot(b);
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < bv.rows(); ++j) {
        const double w = 2.0 * up(i, j);
        for (std::size_t k = 0; k < av.cols(); ++k) {
          const double diff = w * (av(i, k) - bv(j, k));
          if (ga) (*ga)(i, k) += diff;
          if (gb) (*gb)(j, k) -= diff;
        }
      }
  });
}

/// Mean over rows of -log softmax(logits_i)[target_i]; returns a 1x1 node.
inline Var cross_entropy_rows(const Var& logits, std::span<const std::size_t> targets) {
  const Tensor& z = logits.value();
  detail::require_rank2(z, "cross_entropy_rows");
  if (z.rows() == 0) throw EmptyInputError("cross_entropy_rows: empty batch");
  if (targets.size() != z.rows()) throw DimensionError("cross_entropy_rows: target count mismatch");
  const std::size_t n = z.rows(), c = z.cols();
  Tensor probs(z.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= c) throw DimensionError("cross_entropy_rows: target out of range");
    total += kernels::log_sum_exp(z.row_span(i)) - z(i, targets[i]);
    kernels::softmax_row(z.row_span(i), probs.data().subspan(i * c, c));
  }
  std::vector<std::size_t> t(targets.begin(), targets.end());
  return logits.graph().record("cross_entropy_rows", Tensor({1, 1}, {total / static_cast<double>(n)}), {logits},
                               [logits, probs, t](Graph& g, const Tensor& up, const Tensor&) {
                                 Tensor* gz = g.grad_slot(logits);
                                 const double w = up[0] / static_cast<double>(probs.rows());
                                 for (std::size_t i = 0; i < probs.rows(); ++i)
                                   for (std::size_t j = 0; j < probs.cols(); ++j)
                                     (*gz)(i, j) += w * (probs(i, j) - (j == t[i] ? 1.0 : 0.0));
                               });
}

/// x W (+ b). W is Din x Dout, b is 1 x Dout.
inline Var linear(const Var& x, const Var& weight, const std::optional<Var>& bias = std::nullopt) {
  Var y = matmul(x, weight);
  return bias ? add_row(y, *bias) : y;
}

}  // namespace mgcma
