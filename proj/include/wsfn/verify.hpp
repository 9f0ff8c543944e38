// Property suites behind `wsfn verify` and the acceptance run: equivariance
// sweeps, false-symmetry witnesses, invariance, loop-oracle agreement,
// finite-difference gradients and the attention scaling check.
#pragma once

#include <chrono>
#include <functional>
#include <sstream>

#include "wsfn/false_symmetry.hpp"
#include "wsfn/gradcheck.hpp"
#include "wsfn/inr2array.hpp"
#include "wsfn/reference.hpp"
#include "wsfn/train.hpp"

namespace wsfn::verify {

struct Record {
  std::string suite;
  std::string name;
  double tolerance = 0;
  double value = 0;
  bool pass = false;
  bool upper = true;  // value ≤ tolerance (true) or value ≥ tolerance (false)
};

inline Record upper_bound(std::string suite, std::string name, double tol, double v) {
  return {std::move(suite), std::move(name), tol, v, std::isfinite(v) && v <= tol, true};
}
inline Record lower_bound(std::string suite, std::string name, double tol, double v) {
  return {std::move(suite), std::move(name), tol, v, std::isfinite(v) && v >= tol, false};
}

inline std::string json_escape(const std::string& s) {
  std::string r;
  for (char c : s) {
    if (c == '"' || c == '\\') r += '\\';
    r += c;
  }
  return r;
}

inline std::string to_json(const Record& r) {
  std::ostringstream os;
  os.precision(6);
  os << "{\"suite\":\"" << json_escape(r.suite) << "\",\"name\":\"" << json_escape(r.name)
     << "\",\"tolerance\":" << r.tolerance << ",\"bound\":\"" << (r.upper ? "max" : "min")
     << "\",\"value\":" << (std::isfinite(r.value) ? r.value : -1) << ",\"pass\":" << (r.pass ? "true" : "false")
     << "}";
  return os.str();
}

struct Options {
  std::uint64_t seed = 0;
  std::size_t samples = 20;   // random σ per configuration
  bool break_coupling = false;
  std::vector<Term3Mode> modes{Term3Mode::exact, Term3Mode::rowcol};
  std::vector<bool> scalings{true, false};
};

using Feature = WeightSpaceFeature<double>;

inline const std::vector<std::vector<std::size_t>>& sweep_widths() {
  static const std::vector<std::vector<std::size_t>> w{{2, 3, 2}, {2, 3, 4, 2}, {3, 3, 3, 3}};
  return w;
}

inline std::string spec_label(const std::vector<std::size_t>& w) { return to_string(Shape(w.begin(), w.end())); }

template <class F>
double equivariance_gap(F&& f, const Feature& u, const NeuronPermutation& s) {
  return max_abs_diff(apply_perm(s, f(u)), f(apply_perm(s, u)));
}

/// Max over `samples` random (σ, U) pairs of ‖σ·f(U) − f(σ·U)‖_∞.
template <class F>
double worst_gap(F&& f, const WeightSpaceSpec& spec, std::mt19937_64& rng, std::size_t samples) {
  double worst = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    auto u = random_feature<double>(spec, rng);
    worst = std::max(worst, equivariance_gap(f, u, random_perm(spec, rng)));
  }
  return worst;
}

template <class F>
double worst_invariance_gap(F&& f, const WeightSpaceSpec& spec, std::mt19937_64& rng, std::size_t samples) {
  double worst = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    auto u = random_feature<double>(spec, rng);
    worst = std::max(worst, max_abs_diff(f(u), f(apply_perm(random_perm(spec, rng), u))));
  }
  return worst;
}

/// Randomizes every parameter (including zero-initialized heads, which would
/// otherwise make equivariance trivial).
inline void randomize(ParamStore<double>& p, std::mt19937_64& rng, double sd = 0.5) {
  for (const auto& n : p.names()) {
    if (!p.trainable(n)) continue;
    for (auto& v : p.get_mut(n).storage()) v = std::normal_distribution<double>(0.0, sd)(rng);
  }
}

inline std::vector<std::size_t> conv_filters(std::size_t L) {
  std::vector<std::size_t> k;
  for (std::size_t i = 0; i < L; ++i) k.push_back(i % 2 ? 5 : 3);
  return k;
}

// --- criterion-level suites ---------------------------------------------------------

/// Equivariance of LayerEnc, SA, Block, FourierLift, conv composite and a full
/// equivariant NFT over the spec × channels × heads × term3 × scaling grid.
/// Combinations where heads do not divide the channel count are skipped.
inline std::vector<Record> equivariance_suite(const Options& o, double tol = 1e-10) {
  std::vector<Record> out;
  std::mt19937_64 rng(mix_seed(o.seed, 1));
  for (const auto& widths : sweep_widths()) {
    for (std::size_t c : {1, 2, 8}) {
      for (std::size_t h : {1, 2}) {
        if (c % h) continue;
        for (auto mode : o.modes) {
          for (bool scaled : o.scalings) {
            ScopedScaling sc(scaled);
            const WeightSpaceSpec spec{widths, {}, c};
            const std::size_t L = spec.num_layers();
            std::ostringstream tag;
            tag << spec_label(widths) << " c=" << c << " heads=" << h << " term3=" << to_string(mode)
                << " scale=" << (scaled ? "on" : "off");
            auto rec = [&](const std::string& comp, double v) {
              out.push_back(upper_bound("equivariance", comp + " " + tag.str(), tol, v));
            };

            ParamStore<double> p;
            LayerEncParams<double>::init(p, spec, c, rng);
            BlockParams<double>::init(p, "block0", c, 2 * c, rng);
            auto lift = FourierLift<double>::make(c, 3, 1.0, rng);
            randomize(p, rng);
            Binding<double> b(p, false);
            auto enc = LayerEncParams<double>::from(b, L);
            auto blk = BlockParams<double>::from(b, "block0", h, mode);
            blk.sa.break_coupling = o.break_coupling;

            rec("layer_enc", worst_gap([&](const Feature& u) { return values(layer_enc(as_constant(u), enc)); },
                                       spec, rng, o.samples));
            rec("self_attention",
                worst_gap([&](const Feature& u) { return values(self_attention(as_constant(u), blk.sa)); }, spec, rng,
                          o.samples));
            rec("block", worst_gap([&](const Feature& u) { return values(nft_block(as_constant(u), blk)); }, spec, rng,
                                   o.samples));
            rec("fourier_lift", worst_gap([&](const Feature& u) { return values(fourier_lift(as_constant(u), lift)); },
                                          spec, rng, o.samples));

            // Conv composite: fold → Proj → SA → UnProj on a filtered spec.
            const WeightSpaceSpec cspec{widths, conv_filters(L), c};
            ParamStore<double> cp;
            ConvAdapterParams<double>::init(cp, cspec, 2 * c, rng);
            SAParams<double>::init(cp, "sa", 2 * c, rng);
            Binding<double> cb(cp, false);
            auto ad = ConvAdapterParams<double>::from(cb, L);
            auto csa = SAParams<double>::from(cb, "sa", h, mode);
            csa.break_coupling = o.break_coupling;
            rec("conv_composite", worst_gap(
                                      [&](const Feature& u) {
                                        auto x = self_attention(conv_project(as_constant(u), ad), csa);
                                        return values(conv_unproject(x, ad, cspec));
                                      },
                                      cspec, rng, o.samples));

            // Full equivariant NFT (Fourier lift → LayerEnc → 2 blocks → Δ head).
            NftConfig nc;
            nc.num_blocks = 2;
            nc.channels = 2 * c;
            nc.mlp_hidden = 4 * c;
            nc.heads = h;
            nc.fourier_size = c;
            nc.fourier_scale = 1.0;
            nc.term3 = mode;
            nc.head_kind = HeadKind::equivariant_delta;
            NftModel<double> nft(nc, spec, rng());
            randomize(nft.params(), rng);
            rec("nft_equivariant", worst_gap([&](const Feature& u) { return values(nft.evaluate(u, o.break_coupling).delta); },
                                             spec, rng, o.samples));
          }
        }
      }
    }
  }
  return out;
}

/// SA ∘ LayerEnc with identity projections must break each false symmetry on
/// its witness, and none of the false symmetries is an S_NP element.
inline std::vector<Record> minimal_equivariance_suite(const Options&, double min_gap = 1e-3) {
  std::vector<Record> out;
  ScopedScaling off(false);
  for (const auto& widths : sweep_widths()) {
    const WeightSpaceSpec spec{widths, {}, 1};
    ParamStore<double> p;
    p.add("sa.q", identity_tensor<double>(1));
    p.add("sa.k", identity_tensor<double>(1));
    p.add("sa.v", identity_tensor<double>(1));
    for (std::size_t i = 0; i < spec.num_layers(); ++i)
      p.add("enc.phi." + std::to_string(i + 1), Tensor<double>(Shape{1}, {0.5 + double(i)}));
    Binding<double> b(p, false);
    auto sa = SAParams<double>::from(b, "sa", 1, Term3Mode::rowcol);
    auto enc = LayerEncParams<double>::from(b, spec.num_layers());
    auto f = [&](const Feature& u) { return values(self_attention(layer_enc(as_constant(u), enc), sa)); };
    for (auto kind :
         {FalseSymmetryKind::CrossLayer, FalseSymmetryKind::RowColDecoupled, FalseSymmetryKind::AdjacentDecoupled}) {
      auto fs = false_symmetry<double>(kind, spec);
      const auto& tau = fs.symmetry.index_map;
      const double gap = max_abs_diff(apply_index_map(tau, f(fs.witness)), f(apply_index_map(tau, fs.witness)));
      const std::string name = std::string(to_string(kind)) + " " + spec_label(widths);
      out.push_back(lower_bound("minimal_equivariance", name + " gap", min_gap, gap));
      out.push_back(upper_bound("minimal_equivariance", name + " not_in_S_NP", 0, is_np_member(tau, spec) ? 1 : 0));
    }
  }
  return out;
}

/// Cross-attention and the invariant NFT heads: f(σU) = f(U).
inline std::vector<Record> invariance_suite(const Options& o, double tol = 1e-10) {
  std::vector<Record> out;
  std::mt19937_64 rng(mix_seed(o.seed, 3));
  for (const auto& widths : sweep_widths()) {
    for (std::size_t c : {1, 2, 8}) {
      for (std::size_t h : {1, 2}) {
        if (c % h) continue;
        for (auto mode : o.modes) {
          for (bool scaled : o.scalings) {
            ScopedScaling sc(scaled);
            const WeightSpaceSpec spec{widths, {}, c};
            std::ostringstream tag;
            tag << spec_label(widths) << " c=" << c << " heads=" << h << " term3=" << to_string(mode)
                << " scale=" << (scaled ? "on" : "off");
            ParamStore<double> p;
            CAParams<double>::init(p, 3, 4, c, rng);
            Binding<double> b(p, false);
            auto ca = CAParams<double>::from(b);
            out.push_back(upper_bound(
                "invariance", "cross_attention " + tag.str(), tol,
                worst_invariance_gap([&](const Feature& u) { return cross_attention(as_constant(u), ca).value(); },
                                     spec, rng, o.samples)));
            for (auto head : {HeadKind::invariant_scalar, HeadKind::invariant_array}) {
              NftConfig nc;
              nc.num_blocks = 2;
              nc.channels = 2 * c;
              nc.mlp_hidden = 4 * c;
              nc.heads = h;
              nc.fourier_size = c;
              nc.fourier_scale = 1.0;
              nc.term3 = mode;
              nc.head_kind = head;
              nc.ca_m = 3;
              nc.ca_dim = 4;
              nc.num_outputs = 3;
              nc.head_hidden = 8;
              NftModel<double> nft(nc, spec, rng());
              randomize(nft.params(), rng);
              auto f = [&](const Feature& u) {
                auto r = nft.evaluate(u, o.break_coupling);
                return head == HeadKind::invariant_scalar ? r.y.value() : r.z.value();
              };
              out.push_back(upper_bound("invariance", std::string("nft_") + to_string(head) + " " + tag.str(), tol,
                                        worst_invariance_gap(f, spec, rng, o.samples)));
            }
          }
        }
      }
    }
  }
  return out;
}

/// Vectorized SA and CA against the per-entry loop oracle.
inline std::vector<Record> oracle_suite(const Options& o, double tol = 1e-10) {
  std::vector<Record> out;
  std::mt19937_64 rng(mix_seed(o.seed, 4));
  for (const auto& widths : {std::vector<std::size_t>{1, 2, 1}, {2, 3, 2}}) {
    for (std::size_t c : {1, 2}) {
      for (std::size_t h : {1, 2}) {
        if (c % h) continue;
        for (auto mode : o.modes) {
          for (bool scaled : o.scalings) {
            ScopedScaling sc(scaled);
            const WeightSpaceSpec spec{widths, {}, c};
            ParamStore<double> p;
            SAParams<double>::init(p, "sa", c, rng);
            CAParams<double>::init(p, 2, 3, c, rng);
            Binding<double> b(p, false);
            auto sa = SAParams<double>::from(b, "sa", h, mode);
            double worst_sa = 0, worst_ca = 0;
            for (std::size_t s = 0; s < 5; ++s) {
              auto u = random_feature<double>(spec, rng);
              auto want = reference::self_attention(u, {p.get("sa.q"), p.get("sa.k"), p.get("sa.v")}, h, mode, scaled);
              worst_sa = std::max(worst_sa, max_abs_diff(values(self_attention(as_constant(u), sa)), want));
              auto cw = reference::cross_attention(u, p.get("ca.e"), p.get("ca.k"), p.get("ca.v"), scaled);
              worst_ca = std::max(worst_ca, max_abs_diff(cross_attention(as_constant(u), CAParams<double>::from(b)).value(), cw));
            }
            std::ostringstream tag;
            tag << spec_label(widths) << " c=" << c << " heads=" << h << " term3=" << to_string(mode)
                << " scale=" << (scaled ? "on" : "off");
            out.push_back(upper_bound("oracle", "self_attention " + tag.str(), tol, worst_sa));
            out.push_back(upper_bound("oracle", "cross_attention " + tag.str(), tol, worst_ca));
          }
        }
      }
    }
  }
  return out;
}

inline WeightSpaceSpec gradient_siren_spec() { return siren_spec({4, 4}); }

inline Inr2ArrayConfig gradient_inr2array_config() {
  Inr2ArrayConfig cfg;
  cfg.encoder.num_blocks = 1;
  cfg.encoder.channels = 4;
  cfg.encoder.mlp_hidden = 8;
  cfg.encoder.heads = 2;
  cfg.encoder.fourier_size = 2;
  cfg.encoder.fourier_scale = 1.0;
  cfg.encoder.ca_m = 4;
  cfg.encoder.ca_dim = 4;
  cfg.dec_hidden = 6;
  cfg.image_h = cfg.image_w = 4;
  return cfg;
}

/// Central differences for every parameter tensor of one block and of the
/// Inr2Array reconstruction loss (float64).
inline std::vector<Record> gradient_suite(const Options& o, double block_tol = 1e-4, double e2e_tol = 1e-3,
                                          std::size_t coords = 5) {
  std::vector<Record> out;
  std::mt19937_64 rng(mix_seed(o.seed, 5));
  for (auto mode : o.modes) {
    const WeightSpaceSpec spec{{2, 3, 2}, {}, 4};
    ParamStore<double> p;
    BlockParams<double>::init(p, "block0", 4, 8, rng);
    auto u = random_feature<double>(spec, rng);
    auto target = random_feature<double>(spec, rng);
    auto loss = [&](const Binding<double>& b) {
      auto y = nft_block(as_constant(u), BlockParams<double>::from(b, "block0", 2, mode));
      Var<double> s;
      for (std::size_t i = 0; i < y.num_layers(); ++i) {
        for (auto [a, t] : {std::pair{y.weights[i], &target.weights[i]}, {y.biases[i], &target.biases[i]}}) {
          Var<double> term = sum(square(sub(a, Var<double>::constant(*t))));
          s = s.defined() ? add(s, term) : term;
        }
      }
      return s;
    };
    for (const auto& [name, r] : check_param_gradients(loss, p, coords, 1e-5, mix_seed(o.seed, 6)))
      out.push_back(upper_bound("gradient", "block " + name + " term3=" + to_string(mode), block_tol, r.rel_err));
  }
  {
    // Small Inr2Array end to end.
    const WeightSpaceSpec siren = gradient_siren_spec();
    const Inr2ArrayConfig cfg = gradient_inr2array_config();
    Inr2Array<double> model(cfg, siren, rng());
    // Nonzero final hyper-layers so every decoder tensor gets a gradient.
    for (const auto& n : model.params().names())
      if (n.find(".fc2.") != std::string::npos)
        for (auto& v : model.params().get_mut(n).storage()) v = std::normal_distribution<double>(0, 0.1)(rng);
    auto init = siren_init<double>(siren, rng);
    auto loss = [&](const Binding<double>& b) { return model.loss(b, init.net); };
    for (const auto& [name, r] : check_param_gradients(loss, model.params(), coords, 1e-5, mix_seed(o.seed, 7)))
      out.push_back(upper_bound("gradient", "inr2array " + name, e2e_tol, r.rel_err));
  }
  return out;
}

struct ScalingResult {
  std::vector<std::size_t> widths;
  std::vector<double> seconds;
  std::vector<std::size_t> peak_logits, dim_w;
};

/// Times rowcol SA on spec [n, n, n, n] (c = 4) for n and 2n; records the
/// largest attention logit matrix allocated.
inline ScalingResult measure_sa_scaling(const std::vector<std::size_t>& ns, std::uint64_t seed, double min_seconds = 0.2) {
  ScalingResult r;
  std::mt19937_64 rng(seed);
  ParamStore<double> p;
  SAParams<double>::init(p, "sa", 4, rng);
  Binding<double> b(p, false);
  auto sa = SAParams<double>::from(b, "sa", 2, Term3Mode::rowcol);
  for (std::size_t n : ns) {
    const WeightSpaceSpec spec{{n, n, n, n}, {}, 4};
    auto u = as_constant(random_feature<double>(spec, rng));
    reset_attention_stats();
    self_attention(u, sa);  // warm-up, also fills the stats
    const std::size_t peak = attention_stats().peak_logits;
    std::size_t reps = 0;
    const auto t0 = std::chrono::steady_clock::now();
    double el = 0;
    do {
      self_attention(u, sa);
      ++reps;
      el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } while (el < min_seconds);
    r.widths.push_back(n);
    r.seconds.push_back(el / reps);
    r.peak_logits.push_back(peak);
    r.dim_w.push_back(spec.dim_w());
  }
  return r;
}

inline std::vector<Record> scaling_suite(const Options& o, double max_ratio = 12.0) {
  std::vector<Record> out;
  auto r = measure_sa_scaling({8, 16, 32, 64}, mix_seed(o.seed, 8));
  for (std::size_t i = 0; i + 1 < r.widths.size(); ++i)
    out.push_back(upper_bound("scaling", "t(" + std::to_string(r.widths[i + 1]) + ")/t(" + std::to_string(r.widths[i]) + ")",
                              max_ratio, r.seconds[i + 1] / r.seconds[i]));
  for (std::size_t i = 0; i < r.widths.size(); ++i) {
    const double dw = static_cast<double>(r.dim_w[i]);
    out.push_back(upper_bound("scaling", "peak attention / dim(W)^2 n=" + std::to_string(r.widths[i]), 1.0,
                              static_cast<double>(r.peak_logits[i]) / (dw * dw)));
  }
  return out;
}

/// Number of records run_all() will emit, counted from the sweep grid and
/// the parameter inventories rather than by running the suites.
inline std::size_t advertised_checks(const Options& o) {
  std::size_t configs = 0;
  for (std::size_t c : {1, 2, 8})
    for (std::size_t h : {1, 2}) configs += c % h == 0;
  configs *= sweep_widths().size() * o.modes.size() * o.scalings.size();
  std::size_t oracle = 0;
  for (std::size_t c : {1, 2})
    for (std::size_t h : {1, 2}) oracle += c % h == 0;
  oracle *= 2 * o.modes.size() * o.scalings.size();
  std::mt19937_64 rng(0);
  ParamStore<double> blk;
  BlockParams<double>::init(blk, "block0", 4, 8, rng);
  const Inr2Array<double> i2a(gradient_inr2array_config(), gradient_siren_spec(), 0);
  auto trainable = [](const ParamStore<double>& p) {
    std::size_t n = 0;
    for (const auto& k : p.names()) n += p.trainable(k);
    return n;
  };
  return configs * 6                                      // equivariance components
         + configs * 3                                    // CA + two invariant heads
         + oracle * 2                                     // SA and CA against the loop oracle
         + sweep_widths().size() * 3 * 2                  // false symmetries: gap + membership
         + trainable(blk) * o.modes.size() + trainable(i2a.params());
}

inline std::vector<Record> run_all(const Options& o) {
  std::vector<Record> all;
  for (auto* suite : {&equivariance_suite, &invariance_suite, &oracle_suite})
    for (auto& r : suite(o, 1e-10)) all.push_back(std::move(r));
  for (auto& r : minimal_equivariance_suite(o)) all.push_back(std::move(r));
  for (auto& r : gradient_suite(o)) all.push_back(std::move(r));
  return all;
}

}  // namespace wsfn::verify
