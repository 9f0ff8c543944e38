#include <gtest/gtest.h>

#include <map>
#include <set>

#include "wsfn/false_symmetry.hpp"

using namespace wsfn;
using Td = Tensor<double>;

namespace {

WeightSpaceSpec spec_of(std::vector<std::size_t> w, std::size_t c = 1) { return {std::move(w), {}, c}; }

// Plain ReLU MLP evaluated from single-channel weights.
std::vector<double> mlp_forward(const WeightSpaceFeature<double>& u, std::vector<double> x) {
  const auto& n = u.spec.widths;
  for (std::size_t i = 0; i < u.num_layers(); ++i) {
    std::vector<double> y(n[i + 1]);
    for (std::size_t j = 0; j < n[i + 1]; ++j) {
      double s = u.biases[i][j];
      for (std::size_t k = 0; k < n[i]; ++k) s += u.weights[i][j * n[i] + k] * x[k];
      y[j] = (i + 1 < u.num_layers()) ? std::max(0.0, s) : s;
    }
    x = std::move(y);
  }
  return x;
}

}  // namespace

TEST(ApplyPerm, IdentityLeavesFeatureUnchanged) {
  std::mt19937_64 rng(1);
  auto spec = spec_of({2, 3, 4, 2}, 2);
  auto u = random_feature<double>(spec, rng);
  EXPECT_EQ(max_abs_diff(apply_perm(NeuronPermutation::identity(spec), u), u), 0.0);
}

TEST(ApplyPerm, HiddenSwapExample) {
  auto spec = spec_of({2, 2, 2});
  auto u = zeros_feature<double>(spec);
  u.weights[0] = Td(Shape{2, 2, 1}, {1, 2, 3, 4});
  u.weights[1] = Td(Shape{2, 2, 1}, {5, 6, 7, 8});
  auto sigma = NeuronPermutation::identity(spec);
  sigma.perms[1] = {1, 0};
  auto r = apply_perm(sigma, u);
  EXPECT_EQ(r.weights[0].storage(), (std::vector<double>{3, 4, 1, 2}));
  EXPECT_EQ(r.weights[1].storage(), (std::vector<double>{6, 5, 8, 7}));
}

TEST(ApplyPerm, LeftActionLaws) {
  std::mt19937_64 rng(2);
  for (auto widths : {std::vector<std::size_t>{2, 3, 2}, {3, 3, 3, 3}, {1, 4, 5, 2}}) {
    auto spec = spec_of(widths, 3);
    for (int t = 0; t < 20; ++t) {
      auto u = random_feature<double>(spec, rng);
      auto a = random_perm(spec, rng), b = random_perm(spec, rng);
      EXPECT_EQ(max_abs_diff(apply_perm(a, apply_perm(b, u)), apply_perm(a.compose(b), u)), 0.0);
      EXPECT_EQ(max_abs_diff(apply_perm(a.inverse(), apply_perm(a, u)), u), 0.0);
      EXPECT_EQ(a.compose(a.inverse()), NeuronPermutation::identity(spec));
    }
  }
}

TEST(ApplyPerm, SpecMismatchThrows) {
  auto u = zeros_feature<double>(spec_of({2, 3, 2}));
  EXPECT_THROW(apply_perm(NeuronPermutation::identity(spec_of({2, 2, 2})), u), std::invalid_argument);
}

TEST(ApplyPerm, BiasRidesWithOutputNeuron) {
  // Functional invariance of a ReLU MLP under hidden-layer permutations.
  std::mt19937_64 rng(3);
  auto spec = spec_of({3, 5, 4, 2});
  std::normal_distribution<double> nd;
  for (int t = 0; t < 20; ++t) {
    auto u = random_feature<double>(spec, rng);
    auto sigma = random_perm(spec, rng, /*fix_io=*/true);
    auto pu = apply_perm(sigma, u);
    for (int s = 0; s < 5; ++s) {
      std::vector<double> x{nd(rng), nd(rng), nd(rng)};
      auto a = mlp_forward(u, x), b = mlp_forward(pu, x);
      for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
    }
  }
}

TEST(RandomPerm, SingletonWidthsForceIdentity) {
  std::mt19937_64 rng(4);
  auto spec = spec_of({1, 1, 1});
  EXPECT_EQ(random_perm(spec, rng), NeuronPermutation::identity(spec));
}

TEST(RandomPerm, UniformOverS3) {
  std::mt19937_64 rng(5);
  auto spec = spec_of({3, 1});
  std::map<std::vector<std::size_t>, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) counts[random_perm(spec, rng).perms[0]]++;
  ASSERT_EQ(counts.size(), 6u);
  double chi2 = 0;
  for (auto& [p, n] : counts) {
    EXPECT_NEAR(n / double(draws), 1.0 / 6.0, 0.02);
    const double e = draws / 6.0;
    chi2 += (n - e) * (n - e) / e;
  }
  EXPECT_LT(chi2, 20.52);  // χ²(5) at p = 0.001
}

TEST(RandomPerm, SeedDeterminism) {
  auto spec = spec_of({4, 6, 5});
  std::mt19937_64 a(42), b(42);
  EXPECT_EQ(random_perm(spec, a), random_perm(spec, b));
}

TEST(Flatten, RoundTrips) {
  std::mt19937_64 rng(6);
  auto spec = spec_of({2, 3, 2});
  EXPECT_EQ(spec.num_scalars(), 17u);
  EXPECT_EQ(spec.dim_u(), 17u);
  auto u = random_feature<double>(spec, rng);
  EXPECT_EQ(max_abs_diff(unflatten(flatten(u), spec), u), 0.0);
  Td x(Shape{17});
  for (std::size_t i = 0; i < 17; ++i) x[i] = double(i);
  EXPECT_EQ(flatten(unflatten(x, spec)), x);
  // layer-major order: W1 then b1
  auto v = unflatten(x, spec);
  EXPECT_EQ(v.weights[0][0], 0.0);
  EXPECT_EQ(v.biases[0][0], 6.0);
  EXPECT_EQ(v.weights[1][0], 9.0);
  EXPECT_THROW(unflatten(Td(Shape{16}), spec), ShapeError);
}

TEST(RowColSums, Examples) {
  auto spec = spec_of({3, 2});
  auto u = zeros_feature<double>(spec);
  for (auto& v : u.weights[0].storage()) v = 1.0;
  EXPECT_EQ(row_col_sums(u)[0], 6.0);

  std::mt19937_64 rng(7);
  auto s2 = spec_of({2, 3, 4, 2}, 3);
  auto w = random_feature<double>(s2, rng);
  auto sums = row_col_sums(w);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double s = 0;
      for (std::size_t j = 0; j < s2.widths[i + 1]; ++j)
        for (std::size_t k = 0; k < s2.widths[i]; ++k) s += w.weights[i].at({j, k, ch});
      EXPECT_NEAR(sums.at({i, ch}), s, 1e-12);
    }
  for (int t = 0; t < 10; ++t)
    EXPECT_LE(max_abs_diff(row_col_sums(apply_perm(random_perm(s2, rng), w)), sums), 1e-12);
}

TEST(FalseSymmetry, CrossLayerCanonicalSwap) {
  auto spec = spec_of({2, 2, 2});
  auto fs = false_symmetry<double>(FalseSymmetryKind::CrossLayer, spec);
  IndexSpace I(spec);
  EXPECT_EQ(fs.symmetry.index_map.map[I.flat({0, 0, 0})], I.flat({1, 0, 0}));
  EXPECT_EQ(fs.symmetry.index_map.map[I.flat({1, 0, 0})], I.flat({0, 0, 0}));
  EXPECT_FALSE(is_np_member(fs.symmetry.index_map, spec));
}

TEST(FalseSymmetry, RowColWitnessSharesARow) {
  auto spec = spec_of({3, 2, 2});
  auto fs = false_symmetry<double>(FalseSymmetryKind::RowColDecoupled, spec);
  ASSERT_EQ(fs.support.size(), 2u);
  EXPECT_EQ(fs.support[0].layer, fs.support[1].layer);
  EXPECT_EQ(fs.support[0].row, fs.support[1].row);
  EXPECT_NE(fs.support[0].col, fs.support[1].col);
  double total = 0;
  for (auto& w : fs.witness.weights)
    for (double v : w.data()) total += v;
  EXPECT_EQ(total, 2.0);
  EXPECT_FALSE(is_np_member(fs.symmetry.index_map, spec));
}

TEST(FalseSymmetry, AdjacentWitnessCouplesLayers) {
  auto spec = spec_of({2, 3, 2});
  auto fs = false_symmetry<double>(FalseSymmetryKind::AdjacentDecoupled, spec);
  ASSERT_EQ(fs.support.size(), 2u);
  EXPECT_EQ(fs.support[0].layer, fs.support[1].layer + 1);
  EXPECT_EQ(fs.support[0].col, fs.support[1].row);
  EXPECT_FALSE(is_np_member(fs.symmetry.index_map, spec));
}

TEST(FalseSymmetry, InverseRoundTrip) {
  std::mt19937_64 rng(8);
  auto spec = spec_of({3, 4, 3}, 2);
  for (auto kind : {FalseSymmetryKind::CrossLayer, FalseSymmetryKind::RowColDecoupled,
                    FalseSymmetryKind::AdjacentDecoupled}) {
    auto fs = false_symmetry<double>(kind, spec, &rng);
    auto u = random_feature<double>(spec, rng);
    auto tau = fs.symmetry.index_map;
    EXPECT_EQ(max_abs_diff(apply_index_map(tau.inverse(), apply_index_map(tau, u)), u), 0.0);
    EXPECT_FALSE(is_np_member(tau, spec)) << to_string(kind);
  }
}

TEST(FalseSymmetry, SpecTooSmall) {
  EXPECT_THROW(false_symmetry<double>(FalseSymmetryKind::CrossLayer, spec_of({3, 3})), std::invalid_argument);
  EXPECT_THROW(false_symmetry<double>(FalseSymmetryKind::RowColDecoupled, spec_of({1, 1, 1})), std::invalid_argument);
  EXPECT_THROW(false_symmetry<double>(FalseSymmetryKind::AdjacentDecoupled, spec_of({2, 1, 2})), std::invalid_argument);
  try {
    false_symmetry<double>(FalseSymmetryKind::RowColDecoupled, spec_of({1, 3, 1}));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find(">= 2"), std::string::npos);
  }
}

TEST(NpMembership, PermutationMapsAreMembers) {
  std::mt19937_64 rng(9);
  for (auto widths : {std::vector<std::size_t>{2, 3, 2}, {3, 3, 3, 3}, {1, 4, 5, 2}}) {
    auto spec = spec_of(widths);
    for (int t = 0; t < 20; ++t) {
      auto sigma = random_perm(spec, rng);
      auto tau = to_index_map(sigma, spec);
      EXPECT_TRUE(is_np_member(tau, spec));
      // the index map acts like apply_perm on weights
      auto u = random_feature<double>(spec.with_channels(2), rng);
      auto a = apply_index_map(tau, u), b = apply_perm(sigma, u);
      for (std::size_t i = 0; i < u.num_layers(); ++i) EXPECT_EQ(a.weights[i], b.weights[i]);
    }
  }
}

namespace {

// Brute force: the set of index maps generated by all of S_NP.
std::set<std::vector<std::size_t>> all_np_maps(const WeightSpaceSpec& spec) {
  std::set<std::vector<std::size_t>> out;
  std::vector<std::vector<std::size_t>> cur;
  std::function<void(std::size_t)> rec = [&](std::size_t layer) {
    if (layer == spec.widths.size()) {
      out.insert(to_index_map(NeuronPermutation{cur}, spec).map);
      return;
    }
    std::vector<std::size_t> p(spec.widths[layer]);
    std::iota(p.begin(), p.end(), 0);
    do {
      cur.push_back(p);
      rec(layer + 1);
      cur.pop_back();
    } while (std::next_permutation(p.begin(), p.end()));
  };
  rec(0);
  return out;
}

}  // namespace

TEST(NpMembership, ExhaustiveOnTinySpecs) {
  for (auto widths : {std::vector<std::size_t>{1, 2, 1}, {2, 2, 2}, {1, 2, 2}}) {
    auto spec = spec_of(widths);
    const auto members = all_np_maps(spec);
    IndexSpace I(spec);
    std::vector<std::size_t> m(I.size());
    std::iota(m.begin(), m.end(), 0);
    std::size_t layer_preserving = 0, accepted = 0;
    do {
      const bool brute = members.count(m) > 0;
      EXPECT_EQ(is_np_member(IndexMap{m}, spec), brute);
      bool keeps = true;
      for (std::size_t f = 0; f < m.size(); ++f) keeps = keeps && I.index(f).layer == I.index(m[f]).layer;
      layer_preserving += keeps;
      accepted += brute;
    } while (std::next_permutation(m.begin(), m.end()));
    if (widths == std::vector<std::size_t>{1, 2, 1}) {
      EXPECT_EQ(layer_preserving, 4u);  // 2!·2!
      EXPECT_EQ(accepted, 2u);
    }
    // no single transposition of two weights is a neuron permutation here
    for (std::size_t a = 0; a < I.size(); ++a)
      for (std::size_t b = a + 1; b < I.size(); ++b) {
        std::vector<std::size_t> t(I.size());
        std::iota(t.begin(), t.end(), 0);
        std::swap(t[a], t[b]);
        EXPECT_EQ(is_np_member(IndexMap{t}, spec), members.count(t) > 0);
      }
  }
}
