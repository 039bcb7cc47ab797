#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mgcma/autograd.hpp"
#include "mgcma/error.hpp"
#include "mgcma/random.hpp"
#include "mgcma/tensor.hpp"

namespace mgcma {

/// Named trainable tensors in registration order.
///
/// Iteration order is the order of add() calls, which the model fixes, so
/// checkpoints, optimizer state and gradient vectors all line up by index.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t rng_seed = 0) : rng_seed_(rng_seed) {}

  std::uint64_t rng_seed() const { return rng_seed_; }

  Tensor& add(const std::string& name, Tensor value) {
    if (index_.contains(name)) throw ContractError("duplicate parameter name: " + name);
    value.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(value));
    return entries_.back().second;
  }

  /// Din x Dout matrix, uniform in [-1/sqrt(Din), 1/sqrt(Din)].
  const std::string& add_weight(const std::string& name, std::size_t din, std::size_t dout, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(din));
    Tensor w = Tensor::zeros(din, dout);
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
    add(name, std::move(w));
    return entries_.back().first;
  }

  const std::string& add_bias(const std::string& name, std::size_t dout) {
    add(name, Tensor::zeros(1, dout));
    return entries_.back().first;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }

  const Tensor& at(const std::string& name) const { return entries_[index_of(name)].second; }
  Tensor& at(const std::string& name) { return entries_[index_of(name)].second; }
  const Tensor& at(std::size_t i) const { return entries_[i].second; }
  Tensor& at(std::size_t i) { return entries_[i].second; }
  const std::string& name(std::size_t i) const { return entries_[i].first; }

  std::size_t size() const { return entries_.size(); }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t rng_seed_;
};

/// Binds store parameters into one Graph on first use.
///
/// With trainable = false parameters enter as constants and no backward
/// closures are recorded (inference mode).
class ParameterBinding {
 public:
  ParameterBinding(Graph& graph, const ParameterStore& store, bool trainable = true)
      : graph_(graph), store_(store), trainable_(trainable), bound_(store.size()) {}

  Graph& graph() const { return graph_; }

  Var operator()(const std::string& name) {
    const std::size_t i = store_.index_of(name);
    if (!bound_[i]) {
      const Tensor& t = store_.at(i);
      bound_[i] = trainable_ ? graph_.leaf(t) : graph_.constant(t);
    }
    return *bound_[i];
  }

  /// One gradient per store entry, in store order; zeros for parameters the
  /// graph never touched.
  std::vector<Tensor> gradients() const {
    std::vector<Tensor> out;
    out.reserve(store_.size());
    for (std::size_t i = 0; i < store_.size(); ++i)
      out.push_back(bound_[i] ? graph_.grad(*bound_[i]) : Tensor(store_.at(i).shape()));
    return out;
  }

 private:
  Graph& graph_;
  const ParameterStore& store_;
  bool trainable_;
  std::vector<std::optional<Var>> bound_;
};

}  // namespace mgcma
