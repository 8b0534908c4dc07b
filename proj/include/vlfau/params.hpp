#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "vlfau/autodiff.hpp"
#include "vlfau/tensor.hpp"

namespace vlfau {

using Rng = std::mt19937_64;

/// Ordered collection of named parameter tensors. Modules register their
/// tensors once and refer to them afterwards by integer slot.
template <typename T>
class ParamStore {
 public:
  int add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = static_cast<int>(values_.size());
    names_.push_back(name);
    values_.push_back(std::move(init));
    return static_cast<int>(values_.size()) - 1;
  }

  int slot(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& at(int slot) { return values_.at(static_cast<std::size_t>(slot)); }
  const Tensor<T>& at(int slot) const { return values_.at(static_cast<std::size_t>(slot)); }
  Tensor<T>& at(const std::string& name) { return at(slot(name)); }
  const Tensor<T>& at(const std::string& name) const { return at(slot(name)); }

  const std::string& name(int slot) const { return names_.at(static_cast<std::size_t>(slot)); }
  int size() const { return static_cast<int>(values_.size()); }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (int i = 0; i < size(); ++i) out.add(names_[static_cast<std::size_t>(i)], at(i).template cast<U>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::map<std::string, int> index_;
};

/// Gradient accumulators aligned slot-for-slot with a ParamStore.
template <typename T>
struct GradBuffer {
  std::vector<Tensor<T>> grads;

  explicit GradBuffer(const ParamStore<T>& store) {
    grads.reserve(static_cast<std::size_t>(store.size()));
    for (int i = 0; i < store.size(); ++i) grads.emplace_back(store.at(i).shape);
  }

  void zero() {
    for (auto& g : grads) std::fill(g.data.begin(), g.data.end(), T(0));
  }

  /// Adds the parameter gradients held by `g` after backward().
  void accumulate(ad::Graph<T>& g) {
    for (ad::Var v : g.parameters()) {
      if (!g.has_grad(v)) continue;
      const Tensor<T>& src = g.grad(v);
      Tensor<T>& dst = grads[static_cast<std::size_t>(g.param_slot(v))];
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    }
  }

  void add(const GradBuffer& o) {
    for (std::size_t s = 0; s < grads.size(); ++s)
      for (std::size_t i = 0; i < grads[s].size(); ++i) grads[s][i] += o.grads[s][i];
  }

  void scale(T f) {
    for (auto& g : grads)
      for (auto& v : g.data) v *= f;
  }
};

/// Binds ParamStore slots to graph leaves, one leaf per slot per graph.
template <typename T>
class Binder {
 public:
  Binder(ad::Graph<T>& g, const ParamStore<T>& store)
      : graph_(g), store_(store), vars_(static_cast<std::size_t>(store.size())) {}

  ad::Var operator()(int slot) {
    ad::Var& v = vars_.at(static_cast<std::size_t>(slot));
    if (!v.valid()) v = graph_.parameter(store_.at(slot), slot);
    return v;
  }

  ad::Graph<T>& graph() { return graph_; }
  const ParamStore<T>& store() const { return store_; }

 private:
  ad::Graph<T>& graph_;
  const ParamStore<T>& store_;
  std::vector<ad::Var> vars_;
};

/// Uniform(-b, b) with b = sqrt(6 / fan_in) scaled by `gain`.
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, int fan_in, Rng& rng, double gain = 1.0) {
  Tensor<T> t(std::move(shape));
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(std::max(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace vlfau
