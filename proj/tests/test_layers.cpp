#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "wsfn/false_symmetry.hpp"
#include "wsfn/gradcheck.hpp"
#include "wsfn/layers.hpp"
#include "wsfn/reference.hpp"

using namespace wsfn;
using Td = Tensor<double>;
using Feature = WeightSpaceFeature<double>;

namespace {

WeightSpaceSpec spec_of(std::vector<std::size_t> w, std::size_t c = 1) { return {std::move(w), {}, c}; }

template <class F>
double equivariance_gap(F&& f, const Feature& u, const NeuronPermutation& s) {
  return max_abs_diff(apply_perm(s, f(u)), f(apply_perm(s, u)));
}

struct SAFixture {
  ParamStore<double> store;
  std::size_t heads = 1;
  Term3Mode mode = Term3Mode::rowcol;

  SAFixture(std::size_t c, std::uint64_t seed, std::size_t h = 1, Term3Mode m = Term3Mode::rowcol)
      : heads(h), mode(m) {
    std::mt19937_64 rng(seed);
    SAParams<double>::init(store, "sa", c, rng);
  }
  Feature operator()(const Feature& u) const {
    Binding<double> b(store, false);
    return values(self_attention(as_constant(u), SAParams<double>::from(b, "sa", heads, mode)));
  }
  reference::Projections projections() const { return {store.get("sa.q"), store.get("sa.k"), store.get("sa.v")}; }
};

LayerEncParams<double> distinct_phi(std::size_t L, std::size_t c) {
  LayerEncParams<double> p;
  for (std::size_t i = 0; i < L; ++i)
    p.phi.push_back(Var<double>::constant(Td(Shape{c}, std::vector<double>(c, 0.5 + static_cast<double>(i)))));
  return p;
}

}  // namespace

// --- layer encoding -------------------------------------------------------

TEST(LayerEnc, ZeroEncodingIsIdentity) {
  std::mt19937_64 rng(1);
  auto spec = spec_of({2, 3, 2}, 2);
  auto u = random_feature<double>(spec, rng);
  LayerEncParams<double> p;
  for (int i = 0; i < 2; ++i) p.phi.push_back(Var<double>::constant(Td::zeros({2})));
  EXPECT_EQ(max_abs_diff(values(layer_enc(as_constant(u), p)), u), 0.0);
}

TEST(LayerEnc, AddsPerLayerVectorToWeightsAndBiases) {
  auto spec = spec_of({1, 2, 1}, 1);
  auto u = zeros_feature<double>(spec);
  auto r = values(layer_enc(as_constant(u), distinct_phi(2, 1)));
  EXPECT_EQ(r.weights[0].storage(), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(r.biases[1].storage(), (std::vector<double>{1.5}));
}

TEST(LayerEnc, EquivariantUnderNeuronPermutations) {
  std::mt19937_64 rng(2);
  auto spec = spec_of({2, 3, 4, 2}, 3);
  ParamStore<double> store;
  LayerEncParams<double>::init(store, spec, 3, rng);
  auto f = [&](const Feature& u) {
    Binding<double> b(store, false);
    return values(layer_enc(as_constant(u), LayerEncParams<double>::from(b, 3)));
  };
  for (int t = 0; t < 20; ++t) {
    auto u = random_feature<double>(spec, rng);
    EXPECT_LE(equivariance_gap(f, u, random_perm(spec, rng)), 1e-12);
  }
}

TEST(LayerEnc, IoEncodingBreaksOnlyInputOutputPermutations) {
  std::mt19937_64 rng(3);
  auto spec = spec_of({2, 3, 2}, 2);
  ParamStore<double> store;
  LayerEncParams<double>::init(store, spec, 2, rng, true);
  auto f = [&](const Feature& u) {
    Binding<double> b(store, false);
    return values(layer_enc(as_constant(u), LayerEncParams<double>::from(b, 2)));
  };
  auto u = random_feature<double>(spec, rng);
  auto hidden_only = random_perm(spec, rng, true);
  hidden_only.perms[1] = {2, 0, 1};
  EXPECT_LE(equivariance_gap(f, u, hidden_only), 1e-12);
  auto swap_in = NeuronPermutation::identity(spec);
  swap_in.perms[0] = {1, 0};
  EXPECT_GT(equivariance_gap(f, u, swap_in), 1e-3);
}

TEST(LayerEnc, CrossLayerSwapIsNotASymmetry) {
  auto spec = spec_of({2, 3, 2}, 1);
  auto fs = false_symmetry<double>(FalseSymmetryKind::CrossLayer, spec);
  auto p = distinct_phi(2, 1);
  auto f = [&](const Feature& u) { return values(layer_enc(as_constant(u), p)); };
  const auto& tau = fs.symmetry.index_map;
  EXPECT_GE(max_abs_diff(apply_index_map(tau, f(fs.witness)), f(apply_index_map(tau, fs.witness))), 1e-3);
}

// --- self-attention ---------------------------------------------------------

TEST(SelfAttention, ZeroInputGivesZeroOutput) {
  auto spec = spec_of({2, 3, 2}, 2);
  SAFixture sa(2, 4);
  auto y = sa(zeros_feature<double>(spec));
  EXPECT_EQ(max_abs(flatten(y)), 0.0);
}

TEST(SelfAttention, OutputShapesMatchInput) {
  std::mt19937_64 rng(5);
  auto spec = spec_of({3, 1, 4}, 4);
  SAFixture sa(4, 5, 2);
  auto y = sa(random_feature<double>(spec, rng));
  EXPECT_EQ(y.weights[0].shape(), (Shape{1, 3, 4}));
  EXPECT_EQ(y.weights[1].shape(), (Shape{4, 1, 4}));
  EXPECT_EQ(y.biases[1].shape(), (Shape{4, 4}));
}

TEST(SelfAttention, EquivariantForBothTerm3Modes) {
  std::mt19937_64 rng(6);
  auto spec = spec_of({2, 3, 4, 2}, 2);
  for (auto mode : {Term3Mode::exact, Term3Mode::rowcol}) {
    for (std::size_t h : {1, 2}) {
      SAFixture sa(2, 7, h, mode);
      for (int t = 0; t < 20; ++t) {
        auto u = random_feature<double>(spec, rng);
        EXPECT_LE(equivariance_gap(sa, u, random_perm(spec, rng)), 1e-10) << to_string(mode) << " heads=" << h;
      }
    }
  }
}

TEST(SelfAttention, IdentityProjectionsMatchLoopOracleUnscaled) {
  ScopedScaling off(false);
  std::mt19937_64 rng(8);
  auto spec = spec_of({1, 2, 1}, 1);
  SAFixture sa(1, 9);
  for (auto name : {"sa.q", "sa.k", "sa.v"}) sa.store.get_mut(name) = identity_tensor<double>(1);
  for (auto mode : {Term3Mode::exact, Term3Mode::rowcol}) {
    sa.mode = mode;
    auto u = random_feature<double>(spec, rng);
    auto want = reference::self_attention(u, sa.projections(), 1, mode, false);
    EXPECT_LE(max_abs_diff(sa(u), want), 1e-10) << to_string(mode);
  }
}

TEST(SelfAttention, RandomProjectionsMatchLoopOracle) {
  std::mt19937_64 rng(10);
  for (auto widths : {std::vector<std::size_t>{1, 2, 1}, {2, 3, 2}}) {
    for (std::size_t c : {1, 2}) {
      for (std::size_t h : {1, 2}) {
        if (c % h) continue;
        for (auto mode : {Term3Mode::exact, Term3Mode::rowcol}) {
          for (bool scaled : {true, false}) {
            ScopedScaling s(scaled);
            auto spec = spec_of(widths, c);
            SAFixture sa(c, rng(), h, mode);
            auto u = random_feature<double>(spec, rng);
            auto want = reference::self_attention(u, sa.projections(), h, mode, scaled);
            EXPECT_LE(max_abs_diff(sa(u), want), 1e-10)
                << to_string(spec) << " heads=" << h << " " << to_string(mode) << " scaled=" << scaled;
          }
        }
      }
    }
  }
}

TEST(SelfAttention, ExactTerm3RejectsLargeSpaces) {
  std::mt19937_64 rng(11);
  auto spec = spec_of({2, 32, 32, 1}, 1);
  ASSERT_GT(spec.num_entries(), kExactTerm3Limit);
  SAFixture sa(1, 12, 1, Term3Mode::exact);
  try {
    sa(random_feature<double>(spec, rng));
    FAIL() << "expected a size error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("512"), std::string::npos);
  }
  sa.mode = Term3Mode::rowcol;
  EXPECT_NO_THROW(sa(random_feature<double>(spec, rng)));
}

TEST(SelfAttention, RejectsChannelMismatch) {
  std::mt19937_64 rng(13);
  SAFixture sa(2, 14);
  EXPECT_THROW(sa(random_feature<double>(spec_of({2, 2}, 3), rng)), ShapeError);
  SAFixture bad_heads(3, 15, 2);
  EXPECT_THROW(bad_heads(random_feature<double>(spec_of({2, 2}, 3), rng)), ShapeError);
}

TEST(SelfAttention, BreakCouplingLosesEquivariance) {
  std::mt19937_64 rng(16);
  auto spec = spec_of({2, 3, 2}, 2);
  SAFixture sa(2, 17);
  auto broken = [&](const Feature& u) {
    Binding<double> b(sa.store, false);
    auto p = SAParams<double>::from(b, "sa", 1, Term3Mode::rowcol);
    p.break_coupling = true;
    return values(self_attention(as_constant(u), p));
  };
  double worst = 0;
  for (int t = 0; t < 5; ++t) worst = std::max(worst, equivariance_gap(broken, random_feature<double>(spec, rng), random_perm(spec, rng)));
  EXPECT_GT(worst, 1e-6);
}

TEST(SelfAttention, FalseSymmetriesAreDetected) {
  ScopedScaling off(false);
  auto spec = spec_of({2, 3, 2}, 1);
  SAFixture sa(1, 18);
  for (auto name : {"sa.q", "sa.k", "sa.v"}) sa.store.get_mut(name) = identity_tensor<double>(1);
  auto enc = distinct_phi(2, 1);
  auto f = [&](const Feature& u) { return sa(values(layer_enc(as_constant(u), enc))); };
  for (auto kind : {FalseSymmetryKind::CrossLayer, FalseSymmetryKind::RowColDecoupled,
                    FalseSymmetryKind::AdjacentDecoupled}) {
    auto fs = false_symmetry<double>(kind, spec);
    const auto& tau = fs.symmetry.index_map;
    EXPECT_FALSE(is_np_member(tau, spec));
    EXPECT_GE(max_abs_diff(apply_index_map(tau, f(fs.witness)), f(apply_index_map(tau, fs.witness))), 1e-3)
        << to_string(kind);
  }
}

// --- cross-attention ---------------------------------------------------------

TEST(CrossAttention, EqualEntriesReturnProjectedValue) {
  std::mt19937_64 rng(19);
  ParamStore<double> store;
  CAParams<double>::init(store, 3, 4, 2, rng);
  auto u = zeros_feature<double>(spec_of({2, 3, 2}, 2));
  for (auto* g : {&u.weights, &u.biases})
    for (auto& t : *g)
      for (std::size_t i = 0; i < t.size(); i += 2) t[i] = 0.3, t[i + 1] = -1.2;
  Binding<double> b(store, false);
  auto z = cross_attention(as_constant(u), CAParams<double>::from(b)).value();
  const auto& v = store.get("ca.v");
  for (std::size_t m = 0; m < 3; ++m)
    for (std::size_t a = 0; a < 4; ++a) EXPECT_NEAR(z[m * 4 + a], v[a * 2] * 0.3 + v[a * 2 + 1] * -1.2, 1e-12);
}

TEST(CrossAttention, InvariantAndMatchesLoopOracle) {
  std::mt19937_64 rng(20);
  auto spec = spec_of({2, 3, 4, 2}, 3);
  ParamStore<double> store;
  CAParams<double>::init(store, 4, 5, 3, rng);
  auto f = [&](const Feature& u) {
    Binding<double> b(store, false);
    return cross_attention(as_constant(u), CAParams<double>::from(b)).value();
  };
  for (int t = 0; t < 20; ++t) {
    auto u = random_feature<double>(spec, rng);
    EXPECT_LE(max_abs_diff(f(u), f(apply_perm(random_perm(spec, rng), u))), 1e-10);
  }
  auto u = random_feature<double>(spec, rng);
  auto want = reference::cross_attention(u, store.get("ca.e"), store.get("ca.k"), store.get("ca.v"), true);
  EXPECT_LE(max_abs_diff(f(u), want), 1e-10);
}

// --- convolutional adapters ---------------------------------------------------

TEST(ConvAdapter, UnitFilterFoldIsIdentity) {
  std::mt19937_64 rng(21);
  WeightSpaceSpec spec{{2, 3, 2}, {1, 1}, 2};
  auto dense = random_feature<double>(spec.without_filters(), rng);
  std::vector<Td> raw;
  for (std::size_t i = 0; i < 2; ++i) raw.push_back(dense.weights[i].reshaped({spec.widths[i + 1], spec.widths[i], 1, 2}));
  auto folded = conv_fold(raw, dense.biases, spec);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(folded.weights[i].storage(), dense.weights[i].storage());
}

TEST(ConvAdapter, FoldRejectsWrongShapes) {
  WeightSpaceSpec spec{{2, 3}, {3}, 1};
  EXPECT_THROW(conv_fold<double>({Td(Shape{3, 2, 2, 1})}, {Td(Shape{3, 1})}, spec), ShapeError);
}

TEST(ConvAdapter, CompositeWithSelfAttentionIsEquivariant) {
  std::mt19937_64 rng(22);
  WeightSpaceSpec spec{{2, 3, 2}, {3, 5}, 1};
  ParamStore<double> store;
  ConvAdapterParams<double>::init(store, spec, 4, rng);
  SAParams<double>::init(store, "sa", 4, rng);
  auto f = [&](const Feature& u) {
    Binding<double> b(store, false);
    auto ad = ConvAdapterParams<double>::from(b, 2);
    auto x = self_attention(conv_project(as_constant(u), ad), SAParams<double>::from(b, "sa", 2, Term3Mode::rowcol));
    return values(conv_unproject(x, ad, spec));
  };
  for (int t = 0; t < 20; ++t) {
    std::vector<Td> raw, bias;
    for (std::size_t i = 0; i < 2; ++i) {
      raw.push_back(normal_tensor<double>({spec.widths[i + 1], spec.widths[i], spec.filters[i], 1}, 1.0, rng));
      bias.push_back(normal_tensor<double>(spec.bias_shape(i), 1.0, rng));
    }
    auto u = conv_fold(raw, bias, spec);
    EXPECT_LE(equivariance_gap(f, u, random_perm(spec, rng)), 1e-10);
  }
}

TEST(ConvAdapter, PseudoInverseUnprojectionRoundTrips) {
  std::mt19937_64 rng(23);
  WeightSpaceSpec spec{{2, 3}, {3}, 1};
  ParamStore<double> store;
  ConvAdapterParams<double>::init(store, spec, 5, rng);
  // Right inverses Pᵀ(PPᵀ)⁻¹ of the (full row rank) projections.
  for (auto [p, q] : {std::pair{"conv.proj.1", "conv.unproj.1"}, {"conv.bproj.1", "conv.bunproj.1"}}) {
    const Td& P = store.get(p);
    Eigen::MatrixXd m(P.dim(0), P.dim(1));
    for (std::size_t r = 0; r < P.dim(0); ++r)
      for (std::size_t c = 0; c < P.dim(1); ++c) m(r, c) = P[r * P.dim(1) + c];
    Eigen::MatrixXd pinv = m.transpose() * (m * m.transpose()).inverse();
    Td& Q = store.get_mut(q);
    for (std::size_t r = 0; r < Q.dim(0); ++r)
      for (std::size_t c = 0; c < Q.dim(1); ++c) Q[r * Q.dim(1) + c] = pinv(r, c);
  }
  auto u = conv_fold<double>({normal_tensor<double>({3, 2, 3, 1}, 1.0, rng)}, {normal_tensor<double>({3, 1}, 1.0, rng)},
                             spec);
  Binding<double> b(store, false);
  auto ad = ConvAdapterParams<double>::from(b, 1);
  EXPECT_LE(max_abs_diff(values(conv_unproject(conv_project(as_constant(u), ad), ad, spec)), u), 1e-10);
}

// --- Fourier lift ------------------------------------------------------------

TEST(FourierLift, ZeroInputMapsToSinZeroCosOne) {
  std::mt19937_64 rng(24);
  auto lift = FourierLift<double>::make(1, 3, 3.0, rng);
  auto y = values(fourier_lift(as_constant(zeros_feature<double>(spec_of({1, 1}))), lift));
  EXPECT_EQ(y.weights[0].storage(), (std::vector<double>{0, 0, 0, 1, 1, 1}));
}

TEST(FourierLift, EquivariantAndBounded) {
  std::mt19937_64 rng(25);
  auto spec = spec_of({2, 3, 4, 2}, 2);
  auto lift = FourierLift<double>::make(2, 8, 3.0, rng);
  auto f = [&](const Feature& u) { return values(fourier_lift(as_constant(u), lift)); };
  for (int t = 0; t < 20; ++t) {
    auto u = random_feature<double>(spec, rng, 10.0);
    auto y = f(u);
    EXPECT_LE(max_abs(flatten(y)), 1.0);
    EXPECT_EQ(y.weights[0].dim(2), 16u);
    EXPECT_LE(equivariance_gap(f, u, random_perm(spec, rng)), 1e-12);
  }
}

// --- block ---------------------------------------------------------------------

namespace {

struct BlockFixture {
  ParamStore<double> store;
  std::size_t heads;
  Term3Mode mode;
  BlockFixture(std::size_t c, std::size_t hidden, std::uint64_t seed, std::size_t h = 1,
               Term3Mode m = Term3Mode::rowcol)
      : heads(h), mode(m) {
    std::mt19937_64 rng(seed);
    BlockParams<double>::init(store, "block0", c, hidden, rng);
  }
  VarFeature<double> apply(const Binding<double>& b, const VarFeature<double>& u) const {
    return nft_block(u, BlockParams<double>::from(b, "block0", heads, mode));
  }
  Feature operator()(const Feature& u) const { return values(apply(Binding<double>(store, false), as_constant(u))); }
};

}  // namespace

TEST(NftBlock, ZeroValueAndMlpOutputIsIdentity) {
  std::mt19937_64 rng(26);
  BlockFixture blk(4, 8, 27);
  blk.store.get_mut("block0.sa.v") = Td::zeros({4, 4});
  blk.store.get_mut("block0.mlp.w2") = Td::zeros({4, 8});
  auto u = random_feature<double>(spec_of({2, 3, 2}, 4), rng);
  EXPECT_LE(max_abs_diff(blk(u), u), 1e-15);
}

TEST(NftBlock, EquivariantAndShapePreserving) {
  std::mt19937_64 rng(28);
  for (auto mode : {Term3Mode::exact, Term3Mode::rowcol}) {
    BlockFixture blk(4, 8, 29, 2, mode);
    auto spec = spec_of({2, 3, 4, 2}, 4);
    for (int t = 0; t < 20; ++t) {
      auto u = random_feature<double>(spec, rng);
      auto y = blk(u);
      EXPECT_EQ(y.spec, spec);
      EXPECT_LE(equivariance_gap(blk, u, random_perm(spec, rng)), 1e-10);
    }
  }
}

TEST(NftBlock, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(30);
  auto spec = spec_of({2, 3, 2}, 4);
  for (auto mode : {Term3Mode::exact, Term3Mode::rowcol}) {
    BlockFixture blk(4, 6, 31, 2, mode);
    auto u = random_feature<double>(spec, rng);
    auto target = random_feature<double>(spec, rng);
    auto loss = [&](const Binding<double>& b) {
      auto y = blk.apply(b, as_constant(u));
      Var<double> s = Var<double>::constant(Td::scalar(0.0));
      for (std::size_t i = 0; i < y.num_layers(); ++i) {
        s = add(s, sum(square(sub(y.weights[i], Var<double>::constant(target.weights[i])))));
        s = add(s, sum(square(sub(y.biases[i], Var<double>::constant(target.biases[i])))));
      }
      return s;
    };
    for (const auto& [name, r] : check_param_gradients(loss, blk.store, 5))
      EXPECT_LE(r.rel_err, 1e-4) << name << " " << to_string(mode);
    // And with respect to the input feature itself.
    auto in_loss = [&](const std::vector<Var<double>>& xs) {
      VarFeature<double> v{spec, {xs[0], xs[1]}, {xs[2], xs[3]}};
      auto y = blk.apply(Binding<double>(blk.store, false), v);
      return sum(square(y.weights[1]));
    };
    for (const auto& r : check_gradients(in_loss, {u.weights[0], u.weights[1], u.biases[0], u.biases[1]}, 5))
      EXPECT_LE(r.rel_err, 1e-4);
  }
}
