#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mgcma/autograd.hpp"
#include "mgcma/error.hpp"
#include "mgcma/parameters.hpp"
#include "mgcma/random.hpp"

namespace mgcma {

struct AttentionConfig {
  std::size_t model_dim = 64;
  std::size_t num_heads = 4;

  std::size_t head_dim() const { return model_dim / num_heads; }

  void validate() const {
    if (model_dim == 0 || num_heads == 0) throw ConfigError("attention: model_dim and num_heads must be positive");
    if (model_dim % num_heads != 0) {
      throw ConfigError("attention: model_dim " + std::to_string(model_dim) + " not divisible by num_heads " +
                        std::to_string(num_heads));
    }
  }
};

/// Parameter names of one attention instance: k (query, key, value)
/// projections of shape D x d and one D x D output projection.
struct AttentionParams {
  AttentionConfig config;
  std::vector<std::string> query;
  std::vector<std::string> key;
  std::vector<std::string> value;
  std::string output;
};

inline AttentionParams register_attention(ParameterStore& store, const std::string& prefix,
                                          const AttentionConfig& config, Rng& rng) {
  config.validate();
  AttentionParams params{config, {}, {}, {}, {}};
  const std::size_t d = config.head_dim();
  for (std::size_t h = 0; h < config.num_heads; ++h) {
    const std::string head = prefix + ".head" + std::to_string(h);
    params.query.push_back(store.add_weight(head + ".wq", config.model_dim, d, rng));
    params.key.push_back(store.add_weight(head + ".wk", config.model_dim, d, rng));
    params.value.push_back(store.add_weight(head + ".wv", config.model_dim, d, rng));
  }
  params.output = store.add_weight(prefix + ".wo", config.model_dim, config.model_dim, rng);
  return params;
}

/// softmax(Q K^T / sqrt(d)) V for Q (Lq x d), K and V (Lk x d).
inline Var scaled_dot_attention(const Var& q, const Var& k, const Var& v) {
  if (k.rows() == 0) throw EmptyInputError("attention: empty key sequence");
  if (q.cols() != k.cols()) throw DimensionError("attention: query/key dims differ");
  if (k.rows() != v.rows()) throw DimensionError("attention: key/value lengths differ");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Var weights = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d));
  return matmul(weights, v);
}

/// Multi-head attention. Self-attention when x_query and x_context are the
/// same sequence, cross-attention otherwise.
inline Var multi_head(const Var& x_query, const Var& x_context, const AttentionParams& params,
                      ParameterBinding& bind) {
  const std::size_t dim = params.config.model_dim;
  if (x_query.cols() != dim || x_context.cols() != dim) {
    throw DimensionError("multi_head: expected feature dim " + std::to_string(dim) + ", got " +
                         std::to_string(x_query.cols()) + " and " + std::to_string(x_context.cols()));
  }
  if (x_context.rows() == 0) throw EmptyInputError("multi_head: empty key sequence");
  std::vector<Var> heads;
  heads.reserve(params.query.size());
  for (std::size_t h = 0; h < params.query.size(); ++h) {
    heads.push_back(scaled_dot_attention(matmul(x_query, bind(params.query[h])),
                                         matmul(x_context, bind(params.key[h])),
                                         matmul(x_context, bind(params.value[h]))));
  }
  Var joined = heads.size() == 1 ? heads.front() : concat_cols(heads);
  return matmul(joined, bind(params.output));
}

}  // namespace mgcma
