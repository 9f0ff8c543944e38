// Weight-space features and the neuron-permutation group action.
#pragma once

#include <random>
#include <string>
#include <vector>

#include "wsfn/ops.hpp"

namespace wsfn {

/// Layer widths [n_0..n_L], optional filter widths [k_1..k_L], channel count.
struct WeightSpaceSpec {
  std::vector<std::size_t> widths;
  std::vector<std::size_t> filters;  // empty: fully connected
  std::size_t channels = 1;

  std::size_t num_layers() const { return widths.empty() ? 0 : widths.size() - 1; }
  std::size_t filter(std::size_t layer) const { return filters.empty() ? 1 : filters.at(layer); }
  std::size_t weight_channels(std::size_t layer) const { return filter(layer) * channels; }
  Shape weight_shape(std::size_t layer) const {
    return {widths[layer + 1], widths[layer], weight_channels(layer)};
  }
  Shape bias_shape(std::size_t layer) const { return {widths[layer + 1], channels}; }

  /// Σ n_i·n_{i-1}·k_i (per channel).
  std::size_t dim_w() const {
    std::size_t d = 0;
    for (std::size_t i = 0; i < num_layers(); ++i) d += widths[i + 1] * widths[i] * filter(i);
    return d;
  }
  /// dim_w + Σ n_i.
  std::size_t dim_u() const {
    std::size_t d = dim_w();
    for (std::size_t i = 1; i < widths.size(); ++i) d += widths[i];
    return d;
  }
  /// Scalar count including channels.
  std::size_t num_scalars() const {
    std::size_t d = 0;
    for (std::size_t i = 0; i < num_layers(); ++i) d += numel(weight_shape(i)) + numel(bias_shape(i));
    return d;
  }
  /// Number of weight + bias entries (each an R^c vector for uniform channels).
  std::size_t num_entries() const {
    std::size_t d = 0;
    for (std::size_t i = 0; i < num_layers(); ++i) d += widths[i + 1] * widths[i] + widths[i + 1];
    return d;
  }

  WeightSpaceSpec with_channels(std::size_t c) const {
    WeightSpaceSpec s = *this;
    s.channels = c;
    return s;
  }
  WeightSpaceSpec without_filters() const {
    WeightSpaceSpec s = *this;
    s.filters.clear();
    return s;
  }

  void validate() const {
    if (widths.size() < 2) throw std::invalid_argument("weight space needs at least one layer (two widths)");
    for (std::size_t n : widths)
      if (n == 0) throw std::invalid_argument("layer widths must be positive");
    if (!filters.empty()) {
      if (filters.size() != num_layers())
        throw std::invalid_argument("filter widths must list one entry per layer");
      for (std::size_t k : filters)
        if (k == 0) throw std::invalid_argument("filter widths must be positive");
    }
    if (channels == 0) throw std::invalid_argument("channel count must be positive");
  }

  bool operator==(const WeightSpaceSpec&) const = default;
};

inline std::string to_string(const WeightSpaceSpec& s) {
  std::string r = "widths=" + to_string(Shape(s.widths.begin(), s.widths.end()));
  if (!s.filters.empty()) r += " filters=" + to_string(Shape(s.filters.begin(), s.filters.end()));
  return r + " c=" + std::to_string(s.channels);
}

/// Weights W^(i) [n_i × n_{i-1} × k_i·c] and biases b^(i) [n_i × c], generic
/// over plain tensors and tape variables.
template <class X>
struct BasicFeature {
  WeightSpaceSpec spec;
  std::vector<X> weights;
  std::vector<X> biases;

  std::size_t num_layers() const { return weights.size(); }

  void check() const {
    spec.validate();
    if (weights.size() != spec.num_layers() || biases.size() != spec.num_layers())
      throw ShapeError("feature layer count does not match " + to_string(spec));
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i].shape() != spec.weight_shape(i))
        throw ShapeError("weight " + std::to_string(i + 1) + " has shape " + to_string(weights[i].shape()) +
                         ", expected " + to_string(spec.weight_shape(i)));
      if (biases[i].shape() != spec.bias_shape(i))
        throw ShapeError("bias " + std::to_string(i + 1) + " has shape " + to_string(biases[i].shape()) +
                         ", expected " + to_string(spec.bias_shape(i)));
    }
  }
};

template <class T>
using WeightSpaceFeature = BasicFeature<Tensor<T>>;
template <class T>
using VarFeature = BasicFeature<Var<T>>;

template <class T>
WeightSpaceFeature<T> zeros_feature(const WeightSpaceSpec& spec) {
  spec.validate();
  WeightSpaceFeature<T> u{spec, {}, {}};
  for (std::size_t i = 0; i < spec.num_layers(); ++i) {
    u.weights.emplace_back(spec.weight_shape(i));
    u.biases.emplace_back(spec.bias_shape(i));
  }
  return u;
}

template <class T>
WeightSpaceFeature<T> random_feature(const WeightSpaceSpec& spec, std::mt19937_64& rng, T stddev = T(1)) {
  auto u = zeros_feature<T>(spec);
  std::normal_distribution<T> nd(T(0), stddev);
  for (auto& w : u.weights)
    for (auto& v : w.storage()) v = nd(rng);
  for (auto& b : u.biases)
    for (auto& v : b.storage()) v = nd(rng);
  return u;
}

template <class T>
VarFeature<T> as_constant(const WeightSpaceFeature<T>& u) {
  VarFeature<T> v{u.spec, {}, {}};
  for (const auto& w : u.weights) v.weights.push_back(Var<T>::constant(w));
  for (const auto& b : u.biases) v.biases.push_back(Var<T>::constant(b));
  return v;
}

template <class T>
VarFeature<T> as_leaves(const WeightSpaceFeature<T>& u) {
  VarFeature<T> v{u.spec, {}, {}};
  for (const auto& w : u.weights) v.weights.push_back(Var<T>::leaf(w));
  for (const auto& b : u.biases) v.biases.push_back(Var<T>::leaf(b));
  return v;
}

template <class T>
WeightSpaceFeature<T> values(const VarFeature<T>& v) {
  WeightSpaceFeature<T> u{v.spec, {}, {}};
  for (const auto& w : v.weights) u.weights.push_back(w.value());
  for (const auto& b : v.biases) u.biases.push_back(b.value());
  return u;
}

template <class T>
T max_abs_diff(const WeightSpaceFeature<T>& a, const WeightSpaceFeature<T>& b) {
  if (a.spec.widths != b.spec.widths || a.weights.size() != b.weights.size())
    throw ShapeError("feature spec mismatch");
  T m = 0;
  for (std::size_t i = 0; i < a.weights.size(); ++i) {
    m = std::max(m, max_abs_diff(a.weights[i], b.weights[i]));
    m = std::max(m, max_abs_diff(a.biases[i], b.biases[i]));
  }
  return m;
}

/// Applies `f` to every weight and bias tensor of a tape feature.
template <class T, class F>
VarFeature<T> map_entries(const VarFeature<T>& u, F&& f, std::size_t out_channels) {
  VarFeature<T> r{u.spec.with_channels(out_channels).without_filters(), {}, {}};
  for (const auto& w : u.weights) r.weights.push_back(f(w));
  for (const auto& b : u.biases) r.biases.push_back(f(b));
  return r;
}

template <class T>
VarFeature<T> add(const VarFeature<T>& a, const VarFeature<T>& b) {
  VarFeature<T> r{a.spec, {}, {}};
  for (std::size_t i = 0; i < a.weights.size(); ++i) {
    r.weights.push_back(add(a.weights[i], b.weights[i]));
    r.biases.push_back(add(a.biases[i], b.biases[i]));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Neuron permutations

/// (σ_0, …, σ_L); perms[i][j] = σ_i(j).
struct NeuronPermutation {
  std::vector<std::vector<std::size_t>> perms;

  static NeuronPermutation identity(const WeightSpaceSpec& spec) {
    NeuronPermutation p;
    for (std::size_t n : spec.widths) {
      p.perms.emplace_back(n);
      std::iota(p.perms.back().begin(), p.perms.back().end(), 0);
    }
    return p;
  }

  bool valid() const {
    for (const auto& s : perms) {
      std::vector<std::size_t> sorted = s;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < sorted.size(); ++i)
        if (sorted[i] != i) return false;
    }
    return true;
  }

  bool compatible(const WeightSpaceSpec& spec) const {
    if (perms.size() != spec.widths.size()) return false;
    for (std::size_t i = 0; i < perms.size(); ++i)
      if (perms[i].size() != spec.widths[i]) return false;
    return valid();
  }

  NeuronPermutation inverse() const {
    NeuronPermutation r;
    for (const auto& s : perms) r.perms.push_back(kernels::inverse_perm(s));
    return r;
  }

  /// (this ∘ other)(j) = this(other(j)).
  NeuronPermutation compose(const NeuronPermutation& other) const {
    if (other.perms.size() != perms.size()) throw std::invalid_argument("composing permutations of different specs");
    NeuronPermutation r;
    for (std::size_t i = 0; i < perms.size(); ++i) {
      if (perms[i].size() != other.perms[i].size())
        throw std::invalid_argument("composing permutations of different specs");
      r.perms.emplace_back(perms[i].size());
      for (std::size_t j = 0; j < perms[i].size(); ++j) r.perms[i][j] = perms[i][other.perms[i][j]];
    }
    return r;
  }

  bool operator==(const NeuronPermutation&) const = default;
};

/// Uniform per-layer permutations (Fisher–Yates).
inline NeuronPermutation random_perm(const WeightSpaceSpec& spec, std::mt19937_64& rng, bool fix_io = false) {
  NeuronPermutation p = NeuronPermutation::identity(spec);
  for (std::size_t i = 0; i < p.perms.size(); ++i) {
    if (fix_io && (i == 0 || i + 1 == p.perms.size())) continue;
    auto& s = p.perms[i];
    for (std::size_t t = s.size(); t > 1; --t) {
      std::uniform_int_distribution<std::size_t> pick(0, t - 1);
      std::swap(s[t - 1], s[pick(rng)]);
    }
  }
  return p;
}

/// [σW]^(i)_{jk} = W^(i)_{σ_i⁻¹(j), σ_{i-1}⁻¹(k)}, [σb]^(i)_j = b^(i)_{σ_i⁻¹(j)}.
template <class T>
WeightSpaceFeature<T> apply_perm(const NeuronPermutation& sigma, const WeightSpaceFeature<T>& u) {
  if (!sigma.compatible(u.spec))
    throw std::invalid_argument("permutation is not compatible with feature spec " + to_string(u.spec));
  WeightSpaceFeature<T> r{u.spec, {}, {}};
  for (std::size_t i = 0; i < u.weights.size(); ++i) {
    const auto& rows = sigma.perms[i + 1];
    const auto& cols = sigma.perms[i];
    const Tensor<T>& w = u.weights[i];
    const std::size_t nr = w.dim(0), nc = w.dim(1), ch = w.dim(2);
    Tensor<T> pw(w.shape());
    for (std::size_t j = 0; j < nr; ++j)
      for (std::size_t k = 0; k < nc; ++k)
        std::copy_n(w.data().data() + (j * nc + k) * ch, ch, pw.data().data() + (rows[j] * nc + cols[k]) * ch);
    r.weights.push_back(std::move(pw));
    const Tensor<T>& b = u.biases[i];
    const std::size_t bc = b.dim(1);
    Tensor<T> pb(b.shape());
    for (std::size_t j = 0; j < nr; ++j)
      std::copy_n(b.data().data() + j * bc, bc, pb.data().data() + rows[j] * bc);
    r.biases.push_back(std::move(pb));
  }
  return r;
}

/// Layer-major, row-major: W^(1), b^(1), W^(2), b^(2), …
template <class T>
Tensor<T> flatten(const WeightSpaceFeature<T>& u) {
  std::vector<T> out;
  out.reserve(u.spec.num_scalars());
  for (std::size_t i = 0; i < u.weights.size(); ++i) {
    out.insert(out.end(), u.weights[i].data().begin(), u.weights[i].data().end());
    out.insert(out.end(), u.biases[i].data().begin(), u.biases[i].data().end());
  }
  const std::size_t n = out.size();
  return Tensor<T>(Shape{n}, std::move(out));
}

template <class T>
WeightSpaceFeature<T> unflatten(const Tensor<T>& x, const WeightSpaceSpec& spec) {
  spec.validate();
  if (x.size() != spec.num_scalars())
    throw ShapeError("unflatten: got " + std::to_string(x.size()) + " scalars, spec " + to_string(spec) + " needs " +
                     std::to_string(spec.num_scalars()));
  WeightSpaceFeature<T> u{spec, {}, {}};
  std::size_t at = 0;
  auto take = [&](const Shape& s) {
    const std::size_t n = numel(s);
    Tensor<T> t(s, std::vector<T>(x.data().begin() + at, x.data().begin() + at + n));
    at += n;
    return t;
  };
  for (std::size_t i = 0; i < spec.num_layers(); ++i) {
    u.weights.push_back(take(spec.weight_shape(i)));
    u.biases.push_back(take(spec.bias_shape(i)));
  }
  return u;
}

/// Entry i = Σ_{j,k} W^(i)_{jk}; result [L × c]. Needs uniform weight channels.
template <class T>
Tensor<T> row_col_sums(const WeightSpaceFeature<T>& u) {
  const std::size_t L = u.weights.size();
  const std::size_t c = u.weights.at(0).dim(2);
  Tensor<T> out(Shape{L, c});
  for (std::size_t i = 0; i < L; ++i) {
    const auto& w = u.weights[i];
    if (w.dim(2) != c) throw ShapeError("row_col_sums needs equal channel counts across layers");
    const std::size_t entries = w.dim(0) * w.dim(1);
    for (std::size_t e = 0; e < entries; ++e)
      for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] += w[e * c + ch];
  }
  return out;
}

}  // namespace wsfn
