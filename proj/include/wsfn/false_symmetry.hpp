// Index-space bijections on weights, the neuron-permutation membership test,
// and constructors for the three classes of false symmetry.
#pragma once

#include <optional>

#include "wsfn/weight_space.hpp"

namespace wsfn {

/// (layer, row, col), zero-based.
struct WeightIndex {
  std::size_t layer = 0, row = 0, col = 0;
  bool operator==(const WeightIndex&) const = default;
};

/// Enumerates the weight index set in layer-major, row-major order.
class IndexSpace {
 public:
  explicit IndexSpace(const WeightSpaceSpec& spec) : widths_(spec.widths) {
    spec.validate();
    offsets_.push_back(0);
    for (std::size_t i = 0; i + 1 < widths_.size(); ++i) offsets_.push_back(offsets_.back() + widths_[i + 1] * widths_[i]);
  }
  std::size_t size() const { return offsets_.back(); }
  std::size_t num_layers() const { return widths_.size() - 1; }
  std::size_t rows(std::size_t layer) const { return widths_[layer + 1]; }
  std::size_t cols(std::size_t layer) const { return widths_[layer]; }

  std::size_t flat(const WeightIndex& a) const { return offsets_[a.layer] + a.row * cols(a.layer) + a.col; }
  WeightIndex index(std::size_t flat) const {
    std::size_t l = 0;
    while (flat >= offsets_[l + 1]) ++l;
    const std::size_t r = flat - offsets_[l];
    return {l, r / cols(l), r % cols(l)};
  }

 private:
  std::vector<std::size_t> widths_;
  std::vector<std::size_t> offsets_;
};

/// A bijection τ on the weight index set; map[flat(α)] = flat(τ(α)).
struct IndexMap {
  std::vector<std::size_t> map;

  bool is_bijection() const {
    std::vector<bool> hit(map.size(), false);
    for (std::size_t t : map) {
      if (t >= map.size() || hit[t]) return false;
      hit[t] = true;
    }
    return true;
  }
  IndexMap inverse() const { return {kernels::inverse_perm(map)}; }
};

/// The index map σ(i,j,k) = (i, σ_i(j), σ_{i-1}(k)).
inline IndexMap to_index_map(const NeuronPermutation& sigma, const WeightSpaceSpec& spec) {
  IndexSpace I(spec);
  IndexMap m{std::vector<std::size_t>(I.size())};
  for (std::size_t f = 0; f < I.size(); ++f) {
    const WeightIndex a = I.index(f);
    m.map[f] = I.flat({a.layer, sigma.perms[a.layer + 1][a.row], sigma.perms[a.layer][a.col]});
  }
  return m;
}

/// Moves each weight entry α to τ(α); biases pass through unchanged.
template <class T>
WeightSpaceFeature<T> apply_index_map(const IndexMap& tau, const WeightSpaceFeature<T>& u) {
  IndexSpace I(u.spec);
  if (tau.map.size() != I.size() || !tau.is_bijection())
    throw std::invalid_argument("index map is not a bijection on the weight index set");
  const std::size_t c = u.weights.at(0).dim(2);
  for (const auto& w : u.weights)
    if (w.dim(2) != c) throw ShapeError("index maps need equal channel counts across layers");
  WeightSpaceFeature<T> r = u;
  for (std::size_t f = 0; f < I.size(); ++f) {
    const WeightIndex a = I.index(f), b = I.index(tau.map[f]);
    const auto& src = u.weights[a.layer];
    auto& dst = r.weights[b.layer];
    std::copy_n(src.data().data() + (a.row * I.cols(a.layer) + a.col) * c, c,
                dst.data().data() + (b.row * I.cols(b.layer) + b.col) * c);
  }
  return r;
}

/// True iff τ preserves layers, factors into per-layer row/column
/// permutations, and the column permutation of layer i equals the row
/// permutation of layer i−1.
inline bool is_np_member(const IndexMap& tau, const WeightSpaceSpec& spec) {
  IndexSpace I(spec);
  if (tau.map.size() != I.size() || !tau.is_bijection()) return false;
  const std::size_t L = I.num_layers();
  std::vector<std::vector<std::size_t>> row_perm(L), col_perm(L);
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t R = I.rows(l), C = I.cols(l);
    row_perm[l].resize(R);
    col_perm[l].resize(C);
    for (std::size_t j = 0; j < R; ++j) {
      const WeightIndex t = I.index(tau.map[I.flat({l, j, 0})]);
      if (t.layer != l) return false;
      row_perm[l][j] = t.row;
    }
    for (std::size_t k = 0; k < C; ++k) col_perm[l][k] = I.index(tau.map[I.flat({l, 0, k})]).col;
    for (std::size_t j = 0; j < R; ++j)
      for (std::size_t k = 0; k < C; ++k) {
        const WeightIndex t = I.index(tau.map[I.flat({l, j, k})]);
        if (t.layer != l || t.row != row_perm[l][j] || t.col != col_perm[l][k]) return false;
      }
  }
  for (std::size_t l = 1; l < L; ++l)
    if (col_perm[l] != row_perm[l - 1]) return false;
  return true;
}

enum class FalseSymmetryKind { CrossLayer, RowColDecoupled, AdjacentDecoupled };

inline const char* to_string(FalseSymmetryKind k) {
  switch (k) {
    case FalseSymmetryKind::CrossLayer: return "cross_layer";
    case FalseSymmetryKind::RowColDecoupled: return "row_col_decoupled";
    case FalseSymmetryKind::AdjacentDecoupled: return "adjacent_decoupled";
  }
  return "?";
}

struct FalseSymmetry {
  FalseSymmetryKind kind;
  IndexMap index_map;
};

template <class T>
struct FalseSymmetryCase {
  FalseSymmetry symmetry;
  WeightSpaceFeature<T> witness;
  std::vector<WeightIndex> support;  // the entries set to one in the witness
};

namespace detail {

inline std::size_t pick(std::mt19937_64* rng, std::size_t n) {
  if (!rng || n <= 1) return 0;
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(*rng);
}

inline std::size_t pick_other(std::mt19937_64* rng, std::size_t n, std::size_t avoid) {
  std::size_t v = pick(rng, n - 1);
  return v >= avoid ? v + 1 : v;
}

template <class T>
void set_entry(WeightSpaceFeature<T>& u, const WeightIndex& a, T value) {
  auto& w = u.weights[a.layer];
  const std::size_t c = w.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch) w[(a.row * w.dim(1) + a.col) * c + ch] = value;
}

}  // namespace detail

/// Builds a false symmetry of the requested class together with the input
/// used to exhibit non-equivariance. With rng == nullptr the first eligible
/// layer and the lowest indices are used.
///
///  - CrossLayer: swaps one entry of layer i with one of layer i+1. Witness is
///    a single one at the first swapped entry.
///  - RowColDecoupled: swaps (j,k) with (j',k) inside one layer. Witness is
///    zero except W_{jk} = W_{jq} = 1.
///  - AdjacentDecoupled: swaps columns k and k' of layer i while layer i−1 is
///    left alone. Witness is zero except W^(i)_{jk} = W^(i-1)_{kq} = 1.
template <class T>
FalseSymmetryCase<T> false_symmetry(FalseSymmetryKind kind, const WeightSpaceSpec& spec,
                                    std::mt19937_64* rng = nullptr) {
  spec.validate();
  IndexSpace I(spec);
  const std::size_t L = I.num_layers();
  IndexMap tau{std::vector<std::size_t>(I.size())};
  std::iota(tau.map.begin(), tau.map.end(), 0);
  auto swap_entries = [&](const WeightIndex& a, const WeightIndex& b) {
    tau.map[I.flat(a)] = I.flat(b);
    tau.map[I.flat(b)] = I.flat(a);
  };
  FalseSymmetryCase<T> out{{kind, {}}, zeros_feature<T>(spec.without_filters()), {}};

  switch (kind) {
    case FalseSymmetryKind::CrossLayer: {
      if (L < 2) throw std::invalid_argument("cross-layer false symmetry needs at least 2 layers (3 widths)");
      const std::size_t l = detail::pick(rng, L - 1);
      const WeightIndex a{l, detail::pick(rng, I.rows(l)), detail::pick(rng, I.cols(l))};
      const WeightIndex b{l + 1, detail::pick(rng, I.rows(l + 1)), detail::pick(rng, I.cols(l + 1))};
      swap_entries(a, b);
      out.support = {a};
      break;
    }
    case FalseSymmetryKind::RowColDecoupled: {
      std::vector<std::size_t> eligible;
      for (std::size_t l = 0; l < L; ++l)
        if (I.rows(l) >= 2 && I.cols(l) >= 2) eligible.push_back(l);
      if (eligible.empty())
        throw std::invalid_argument("row/column false symmetry needs some layer with n_i >= 2 and n_{i-1} >= 2");
      const std::size_t l = eligible[detail::pick(rng, eligible.size())];
      const std::size_t j = detail::pick(rng, I.rows(l));
      const std::size_t j2 = detail::pick_other(rng, I.rows(l), j);
      const std::size_t k = detail::pick(rng, I.cols(l));
      const std::size_t q = detail::pick_other(rng, I.cols(l), k);
      swap_entries({l, j, k}, {l, j2, k});
      out.support = {{l, j, k}, {l, j, q}};
      break;
    }
    case FalseSymmetryKind::AdjacentDecoupled: {
      std::vector<std::size_t> eligible;
      for (std::size_t l = 1; l < L; ++l)
        if (I.cols(l) >= 2) eligible.push_back(l);
      if (eligible.empty())
        throw std::invalid_argument("adjacent false symmetry needs 2+ layers with a hidden width n_i >= 2");
      const std::size_t l = eligible[detail::pick(rng, eligible.size())];
      const std::size_t k = detail::pick(rng, I.cols(l));
      const std::size_t k2 = detail::pick_other(rng, I.cols(l), k);
      for (std::size_t j = 0; j < I.rows(l); ++j) swap_entries({l, j, k}, {l, j, k2});
      const std::size_t j = detail::pick(rng, I.rows(l));
      const std::size_t q = detail::pick(rng, I.cols(l - 1));
      out.support = {{l, j, k}, {l - 1, k, q}};
      break;
    }
  }
  for (const auto& a : out.support) detail::set_entry(out.witness, a, T(1));
  out.symmetry.index_map = std::move(tau);
  return out;
}

}  // namespace wsfn
