// Named parameter storage and per-forward-pass tape bindings.
#pragma once

#include <map>
#include <random>
#include <set>
#include <string>

#include "wsfn/autodiff.hpp"

namespace wsfn {

/// Ordered collection of named tensors. Frozen entries are saved with the
/// model but never receive gradients.
template <class T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> value, bool trainable = true) {
    if (values_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    names_.push_back(name);
    if (!trainable) frozen_.insert(name);
    return values_[name] = std::move(value);
  }

  bool contains(const std::string& name) const { return values_.count(name) > 0; }
  const Tensor<T>& get(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
  }
  Tensor<T>& get_mut(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
  }
  bool trainable(const std::string& name) const { return !frozen_.count(name); }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

  std::size_t num_scalars(bool trainable_only = true) const {
    std::size_t n = 0;
    for (const auto& k : names_)
      if (!trainable_only || trainable(k)) n += values_.at(k).size();
    return n;
  }

  /// Adds every entry of `other` under `prefix`.
  void merge(const ParamStore& other, const std::string& prefix = "") {
    for (const auto& k : other.names()) add(prefix + k, other.get(k), other.trainable(k));
  }

  bool operator==(const ParamStore& o) const { return names_ == o.names_ && values_ == o.values_ && frozen_ == o.frozen_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, Tensor<T>> values_;
  std::set<std::string> frozen_;
};

/// Tape variables for one forward pass over a ParamStore.
template <class T>
class Binding {
 public:
  Binding() = default;
  Binding(const ParamStore<T>& store, bool with_grad) {
    for (const auto& k : store.names())
      vars_.emplace(k, Var<T>(store.get(k), with_grad && store.trainable(k)));
  }
  const Var<T>& operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::out_of_range("parameter not bound: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return vars_.count(name) > 0; }
  const std::map<std::string, Var<T>>& vars() const { return vars_; }

  /// View of the entries under `prefix` with the prefix stripped; the
  /// variables are shared, so gradients land in this binding too.
  Binding sub(const std::string& prefix) const {
    Binding r;
    for (const auto& [k, v] : vars_)
      if (k.compare(0, prefix.size(), prefix) == 0) r.vars_.emplace(k.substr(prefix.size()), v);
    return r;
  }

 private:
  std::map<std::string, Var<T>> vars_;
};

template <class T>
Tensor<T> normal_tensor(Shape s, T stddev, std::mt19937_64& rng) {
  Tensor<T> t(std::move(s));
  std::normal_distribution<T> nd(T(0), stddev);
  for (auto& v : t.storage()) v = nd(rng);
  return t;
}

template <class T>
Tensor<T> uniform_tensor(Shape s, T bound, std::mt19937_64& rng) {
  Tensor<T> t(std::move(s));
  std::uniform_real_distribution<T> ud(-bound, bound);
  for (auto& v : t.storage()) v = ud(rng);
  return t;
}

inline Shape identity_shape(std::size_t n) { return {n, n}; }

template <class T>
Tensor<T> identity_tensor(std::size_t n) {
  Tensor<T> t(identity_shape(n));
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] = T(1);
  return t;
}

}  // namespace wsfn
