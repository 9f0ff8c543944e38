// Equivariant weight-space layers: self-attention, layer position encodings,
// invariant cross-attention, convolutional adapters, Fourier channel lift and
// the residual NFT block.
#pragma once

#include "wsfn/attention.hpp"
#include "wsfn/params.hpp"
#include "wsfn/weight_space.hpp"

namespace wsfn {

enum class Term3Mode { exact, rowcol };

inline const char* to_string(Term3Mode m) { return m == Term3Mode::exact ? "exact" : "rowcol"; }

inline Term3Mode parse_term3(const std::string& s) {
  if (s == "exact") return Term3Mode::exact;
  if (s == "rowcol" || s == "rowcol_sum") return Term3Mode::rowcol;
  throw std::invalid_argument("unknown term3 mode '" + s + "' (expected exact|rowcol)");
}

/// Largest weight-space (entries counted per channel vector) for which
/// all-pairs term-3 attention is allowed.
inline constexpr std::size_t kExactTerm3Limit = 512;

/// Optional stochastic state for a training forward pass.
struct ForwardContext {
  std::mt19937_64* rng = nullptr;
  double dropout = 0.0;
  bool active() const { return rng && dropout > 0.0; }
};

template <class T>
struct SAParams {
  Var<T> q, k, v;  // [c × c], applied as θ·u per entry
  std::size_t heads = 1;
  Term3Mode term3 = Term3Mode::rowcol;
  bool break_coupling = false;  // debug: scrambles the layer i-1 part of KV1

  static SAParams from(const Binding<T>& b, const std::string& prefix, std::size_t heads, Term3Mode mode) {
    return {b[prefix + ".q"], b[prefix + ".k"], b[prefix + ".v"], heads, mode, false};
  }
  static void init(ParamStore<T>& s, const std::string& prefix, std::size_t c, std::mt19937_64& rng) {
    const T sd = T(1) / std::sqrt(static_cast<T>(c));
    s.add(prefix + ".q", normal_tensor<T>({c, c}, sd, rng));
    s.add(prefix + ".k", normal_tensor<T>({c, c}, sd, rng));
    s.add(prefix + ".v", normal_tensor<T>({c, c}, sd, rng));
  }
};

template <class T>
struct LayerEncParams {
  std::vector<Var<T>> phi;  // one [c] per layer
  Var<T> io_in;             // [n_0 × c], added to columns of layer 1 (optional)
  Var<T> io_out;            // [n_L × c], added to rows/biases of layer L (optional)

  static LayerEncParams from(const Binding<T>& b, std::size_t L, const std::string& prefix = "enc") {
    LayerEncParams p;
    for (std::size_t i = 0; i < L; ++i) p.phi.push_back(b[prefix + ".phi." + std::to_string(i + 1)]);
    if (b.contains(prefix + ".io.in")) p.io_in = b[prefix + ".io.in"];
    if (b.contains(prefix + ".io.out")) p.io_out = b[prefix + ".io.out"];
    return p;
  }
  static void init(ParamStore<T>& s, const WeightSpaceSpec& spec, std::size_t c, std::mt19937_64& rng,
                   bool io_enc = false, const std::string& prefix = "enc") {
    for (std::size_t i = 0; i < spec.num_layers(); ++i)
      s.add(prefix + ".phi." + std::to_string(i + 1), normal_tensor<T>({c}, T(1), rng));
    if (io_enc) {
      s.add(prefix + ".io.in", normal_tensor<T>({spec.widths.front(), c}, T(1), rng));
      s.add(prefix + ".io.out", normal_tensor<T>({spec.widths.back(), c}, T(1), rng));
    }
  }
};

template <class T>
struct CAParams {
  Var<T> e;  // [M × d] learned queries
  Var<T> k;  // [d × c]
  Var<T> v;  // [d × c]

  static CAParams from(const Binding<T>& b, const std::string& prefix = "ca") {
    return {b[prefix + ".e"], b[prefix + ".k"], b[prefix + ".v"]};
  }
  static void init(ParamStore<T>& s, std::size_t M, std::size_t d, std::size_t c, std::mt19937_64& rng,
                   const std::string& prefix = "ca") {
    s.add(prefix + ".e", normal_tensor<T>({M, d}, T(1), rng));
    s.add(prefix + ".k", normal_tensor<T>({d, c}, T(1) / std::sqrt(static_cast<T>(c)), rng));
    s.add(prefix + ".v", normal_tensor<T>({d, c}, T(1) / std::sqrt(static_cast<T>(c)), rng));
  }
};

/// Per-layer maps between k_i·c folded channels and a shared width c̃.
/// Biases carry c channels and get their own c ↔ c̃ pair.
template <class T>
struct ConvAdapterParams {
  std::vector<Var<T>> proj, unproj;    // [(k_i c) × c̃], [c̃ × (k_i c)]
  std::vector<Var<T>> bproj, bunproj;  // [c × c̃], [c̃ × c]

  static ConvAdapterParams from(const Binding<T>& b, std::size_t L, const std::string& prefix = "conv") {
    ConvAdapterParams p;
    for (std::size_t i = 0; i < L; ++i) {
      const std::string s = "." + std::to_string(i + 1);
      p.proj.push_back(b[prefix + ".proj" + s]);
      p.unproj.push_back(b[prefix + ".unproj" + s]);
      p.bproj.push_back(b[prefix + ".bproj" + s]);
      p.bunproj.push_back(b[prefix + ".bunproj" + s]);
    }
    return p;
  }
  static void init(ParamStore<T>& s, const WeightSpaceSpec& spec, std::size_t shared, std::mt19937_64& rng,
                   const std::string& prefix = "conv") {
    for (std::size_t i = 0; i < spec.num_layers(); ++i) {
      const std::string sfx = "." + std::to_string(i + 1);
      const std::size_t kc = spec.weight_channels(i), c = spec.channels;
      s.add(prefix + ".proj" + sfx, normal_tensor<T>({kc, shared}, T(1) / std::sqrt(T(kc)), rng));
      s.add(prefix + ".unproj" + sfx, normal_tensor<T>({shared, kc}, T(1) / std::sqrt(T(shared)), rng));
      s.add(prefix + ".bproj" + sfx, normal_tensor<T>({c, shared}, T(1) / std::sqrt(T(c)), rng));
      s.add(prefix + ".bunproj" + sfx, normal_tensor<T>({shared, c}, T(1) / std::sqrt(T(shared)), rng));
    }
  }
};

template <class T>
struct BlockParams {
  SAParams<T> sa;
  Var<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // [c]
  Var<T> w1, b1, w2, b2;                          // [h × c], [h], [c × h], [c]

  static BlockParams from(const Binding<T>& b, const std::string& prefix, std::size_t heads, Term3Mode mode) {
    BlockParams p;
    p.sa = SAParams<T>::from(b, prefix + ".sa", heads, mode);
    p.ln1_gain = b[prefix + ".ln1.gain"];
    p.ln1_bias = b[prefix + ".ln1.bias"];
    p.ln2_gain = b[prefix + ".ln2.gain"];
    p.ln2_bias = b[prefix + ".ln2.bias"];
    p.w1 = b[prefix + ".mlp.w1"];
    p.b1 = b[prefix + ".mlp.b1"];
    p.w2 = b[prefix + ".mlp.w2"];
    p.b2 = b[prefix + ".mlp.b2"];
    return p;
  }
  static void init(ParamStore<T>& s, const std::string& prefix, std::size_t c, std::size_t hidden,
                   std::mt19937_64& rng) {
    SAParams<T>::init(s, prefix + ".sa", c, rng);
    s.add(prefix + ".ln1.gain", Tensor<T>::ones({c}));
    s.add(prefix + ".ln1.bias", Tensor<T>::zeros({c}));
    s.add(prefix + ".ln2.gain", Tensor<T>::ones({c}));
    s.add(prefix + ".ln2.bias", Tensor<T>::zeros({c}));
    s.add(prefix + ".mlp.w1", uniform_tensor<T>({hidden, c}, T(1) / std::sqrt(T(c)), rng));
    s.add(prefix + ".mlp.b1", Tensor<T>::zeros({hidden}));
    s.add(prefix + ".mlp.w2", uniform_tensor<T>({c, hidden}, T(1) / std::sqrt(T(hidden)), rng));
    s.add(prefix + ".mlp.b2", Tensor<T>::zeros({c}));
  }
};

/// Frozen random Fourier features g(u) = [sin(Bᵀu), cos(Bᵀu)].
template <class T>
struct FourierLift {
  Tensor<T> B;  // [c_in × fourier_size], entries ~ N(0, scale²)

  static FourierLift make(std::size_t c_in, std::size_t size, T scale, std::mt19937_64& rng) {
    return {normal_tensor<T>({c_in, size}, scale, rng)};
  }
  std::size_t in_channels() const { return B.dim(0); }
  std::size_t out_channels() const { return 2 * B.dim(1); }
};

// ---------------------------------------------------------------------------

namespace detail {

template <class T>
std::size_t uniform_channels(const VarFeature<T>& u) {
  const std::size_t c = u.weights.at(0).shape().back();
  for (std::size_t i = 0; i < u.weights.size(); ++i) {
    if (u.weights[i].shape().back() != c || u.biases[i].shape().back() != c)
      throw ShapeError("layer expects equal channel counts across weights and biases");
  }
  return c;
}

/// x[..., a] · m with m stored [a × b].
template <class T>
Var<T> channel_matmul(const Var<T>& x, const Var<T>& m) {
  const std::size_t a = x.shape().back();
  if (m.rank() != 2 || m.dim(0) != a)
    throw ShapeError("channel projection " + to_string(m.shape()) + " does not accept input " + to_string(x.shape()));
  Shape os = x.shape();
  os.back() = m.dim(1);
  return reshape(matmul(reshape(x, Shape{x.size() / a, a}), m), os);
}

/// Flattens every weight and bias entry into one [T × c] token matrix.
template <class T>
Var<T> tokens(const std::vector<Var<T>>& ws, const std::vector<Var<T>>& bs, std::size_t c) {
  std::vector<Var<T>> parts;
  for (const auto& w : ws) parts.push_back(reshape(w, Shape{w.size() / c, c}));
  for (const auto& b : bs) parts.push_back(reshape(b, Shape{b.size() / c, c}));
  return concat(parts, 0);
}

inline std::vector<std::size_t> reversed_index(std::size_t n) {
  std::vector<std::size_t> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = n - 1 - i;
  return r;
}

}  // namespace detail

/// W^(i) += φ^(i), b^(i) += φ^(i); optional IO encodings on the first
/// layer's columns and the last layer's rows and biases.
template <class T>
VarFeature<T> layer_enc(const VarFeature<T>& u, const LayerEncParams<T>& p) {
  const std::size_t L = u.num_layers();
  if (p.phi.size() != L)
    throw ShapeError("layer encoding has " + std::to_string(p.phi.size()) + " entries for " + std::to_string(L) +
                     " layers");
  VarFeature<T> r{u.spec, {}, {}};
  for (std::size_t i = 0; i < L; ++i) {
    const std::size_t c = u.weights[i].shape().back();
    if (p.phi[i].size() != c || u.biases[i].shape().back() != c)
      throw ShapeError("layer encoding channel mismatch at layer " + std::to_string(i + 1));
    Var<T> w = add(u.weights[i], p.phi[i]);
    Var<T> b = add(u.biases[i], p.phi[i]);
    if (p.io_in.defined() && i == 0) w = add(w, reshape(p.io_in, Shape{1, p.io_in.dim(0), c}));
    if (p.io_out.defined() && i + 1 == L) {
      w = add(w, reshape(p.io_out, Shape{p.io_out.dim(0), 1, c}));
      b = add(b, p.io_out);
    }
    r.weights.push_back(std::move(w));
    r.biases.push_back(std::move(b));
  }
  return r;
}

/// Weight-space self-attention with biases. For layer i (1-based):
///   Y^(i)_{jk} = Attn(Q^(i)_{j,:}, KV1)_k + Attn(Q^(i)_{:,k}, KV2)_j + term3
///   z^(i)_j    = Attn(q^(i), KV2)_j + term3
/// KV1 = columns of W^(i-1) ∪ rows of W^(i) ∪ {b^(i-1)};
/// KV2 = columns of W^(i) ∪ rows of W^(i+1) ∪ {b^(i)}.
/// Rows and columns are compared as whole arrays (flattened dot products).
/// Term 3 attends over every entry (exact) or over the per-layer sums of
/// weights and of biases (rowcol).
template <class T>
VarFeature<T> self_attention(const VarFeature<T>& u, const SAParams<T>& p, const ForwardContext* ctx = nullptr) {
  const std::size_t L = u.num_layers();
  const std::size_t c = detail::uniform_channels(u);
  if (p.q.shape() != Shape{c, c} || p.k.shape() != Shape{c, c} || p.v.shape() != Shape{c, c})
    throw ShapeError("SA projections must be [" + std::to_string(c) + "x" + std::to_string(c) + "]");
  const std::size_t H = p.heads;
  if (H == 0 || c % H) throw ShapeError("head count must divide the channel count");
  if (p.term3 == Term3Mode::exact && u.spec.num_entries() > kExactTerm3Limit)
    throw std::invalid_argument("exact term-3 attention is limited to " + std::to_string(kExactTerm3Limit) +
                                " entries, input has " + std::to_string(u.spec.num_entries()));
  std::mt19937_64* rng = ctx && ctx->active() ? ctx->rng : nullptr;
  const double pdrop = ctx ? ctx->dropout : 0.0;
  auto attend = [&](const Var<T>& q, const Var<T>& k, const Var<T>& v) {
    return batched_attention(q, k, v, rng, pdrop);
  };

  // θ·u per entry is u·θᵀ in row-vector layout.
  std::vector<Var<T>> QW, KW, VW, Qb, Kb, Vb;
  for (std::size_t i = 0; i < L; ++i) {
    QW.push_back(linear(u.weights[i], p.q));
    KW.push_back(linear(u.weights[i], p.k));
    VW.push_back(linear(u.weights[i], p.v));
    Qb.push_back(linear(u.biases[i], p.q));
    Kb.push_back(linear(u.biases[i], p.k));
    Vb.push_back(linear(u.biases[i], p.v));
  }
  const auto& n = u.spec.widths;

  VarFeature<T> out{u.spec, {}, {}};
  for (std::size_t i = 0; i < L; ++i) {
    const std::size_t rows = n[i + 1], cols = n[i];

    // Term 1: rows of layer i against columns of layer i-1, rows of layer i, bias i-1.
    std::vector<Var<T>> ks, vs;
    if (i > 0) {
      Var<T> kc = swap01(KW[i - 1]), vc = swap01(VW[i - 1]);
      if (p.break_coupling) {
        kc = index_select(kc, 1, detail::reversed_index(cols));
        vc = index_select(vc, 1, detail::reversed_index(cols));
      }
      ks.push_back(kc);
      vs.push_back(vc);
    }
    ks.push_back(KW[i]);
    vs.push_back(VW[i]);
    if (i > 0) {
      ks.push_back(reshape(Kb[i - 1], Shape{1, cols, c}));
      vs.push_back(reshape(Vb[i - 1], Shape{1, cols, c}));
    }
    Var<T> t1 = merge_heads(attend(split_heads(QW[i], H), split_heads(concat(ks, 0), H), split_heads(concat(vs, 0), H)),
                            cols, c);

    // Term 2: columns of layer i (and the bias vector) against columns of
    // layer i, rows of layer i+1, bias i.
    ks.clear();
    vs.clear();
    ks.push_back(swap01(KW[i]));
    vs.push_back(swap01(VW[i]));
    if (i + 1 < L) {
      ks.push_back(KW[i + 1]);
      vs.push_back(VW[i + 1]);
    }
    ks.push_back(reshape(Kb[i], Shape{1, rows, c}));
    vs.push_back(reshape(Vb[i], Shape{1, rows, c}));
    Var<T> q2 = concat(std::vector<Var<T>>{swap01(QW[i]), reshape(Qb[i], Shape{1, rows, c})}, 0);
    Var<T> t2 =
        merge_heads(attend(split_heads(q2, H), split_heads(concat(ks, 0), H), split_heads(concat(vs, 0), H)), rows, c);
    Var<T> w_out = add(t1, swap01(slice(t2, 0, 0, cols)));
    Var<T> b_out = reshape(slice(t2, 0, cols, cols + 1), Shape{rows, c});
    out.weights.push_back(std::move(w_out));
    out.biases.push_back(std::move(b_out));
  }

  // Term 3.
  Var<T> qt = detail::tokens(QW, Qb, c);
  const std::size_t T_tok = qt.dim(0);
  Var<T> kt, vt;
  if (p.term3 == Term3Mode::exact) {
    kt = detail::tokens(KW, Kb, c);
    vt = detail::tokens(VW, Vb, c);
  } else {
    std::vector<Var<T>> ksum, vsum;
    for (std::size_t i = 0; i < L; ++i) {
      ksum.push_back(reshape(sum_axis(reshape(KW[i], Shape{KW[i].size() / c, c}), 0), Shape{1, c}));
      vsum.push_back(reshape(sum_axis(reshape(VW[i], Shape{VW[i].size() / c, c}), 0), Shape{1, c}));
    }
    for (std::size_t i = 0; i < L; ++i) {
      ksum.push_back(reshape(sum_axis(Kb[i], 0), Shape{1, c}));
      vsum.push_back(reshape(sum_axis(Vb[i], 0), Shape{1, c}));
    }
    kt = concat(ksum, 0);
    vt = concat(vsum, 0);
  }
  const std::size_t nk = kt.dim(0);
  Var<T> t3 = merge_heads(attend(split_heads(reshape(qt, Shape{T_tok, 1, c}), H),
                                 split_heads(reshape(kt, Shape{nk, 1, c}), H),
                                 split_heads(reshape(vt, Shape{nk, 1, c}), H)),
                          1, c);
  t3 = reshape(t3, Shape{T_tok, c});
  std::size_t at = 0;
  for (std::size_t i = 0; i < L; ++i) {
    const std::size_t e = n[i + 1] * n[i];
    out.weights[i] = add(out.weights[i], reshape(slice(t3, 0, at, at + e), Shape{n[i + 1], n[i], c}));
    at += e;
  }
  for (std::size_t i = 0; i < L; ++i) {
    out.biases[i] = add(out.biases[i], slice(t3, 0, at, at + n[i + 1]));
    at += n[i + 1];
  }
  return out;
}

/// Row m = Attn(e_m, {(θ_K u, θ_V u)}) over every weight and bias entry u.
/// Returns [M × d].
template <class T>
Var<T> cross_attention(const VarFeature<T>& u, const CAParams<T>& p, const ForwardContext* ctx = nullptr) {
  const std::size_t c = detail::uniform_channels(u);
  if (p.k.rank() != 2 || p.k.dim(1) != c || p.v.shape() != p.k.shape())
    throw ShapeError("cross-attention projections must be [d x " + std::to_string(c) + "]");
  const std::size_t d = p.k.dim(0);
  if (p.e.rank() != 2 || p.e.dim(1) != d) throw ShapeError("cross-attention queries must be [M x d]");
  Var<T> tok = detail::tokens(u.weights, u.biases, c);
  const std::size_t Tn = tok.dim(0), M = p.e.dim(0);
  Var<T> K = reshape(linear(tok, p.k), Shape{1, Tn, d});
  Var<T> V = reshape(linear(tok, p.v), Shape{1, Tn, d});
  std::mt19937_64* rng = ctx && ctx->active() ? ctx->rng : nullptr;
  Var<T> out = batched_attention(reshape(p.e, Shape{1, M, d}), K, V, rng, ctx ? ctx->dropout : 0.0);
  return reshape(out, Shape{M, d});
}

/// Merges filter axes [n_i × n_{i-1} × k_i × c] into channels [.. × k_i·c].
template <class T>
WeightSpaceFeature<T> conv_fold(const std::vector<Tensor<T>>& raw_weights, const std::vector<Tensor<T>>& biases,
                                const WeightSpaceSpec& spec) {
  if (spec.filters.empty()) throw std::invalid_argument("conv_fold needs filter widths in the spec");
  spec.validate();
  if (raw_weights.size() != spec.num_layers() || biases.size() != spec.num_layers())
    throw ShapeError("conv_fold: layer count mismatch");
  WeightSpaceFeature<T> u{spec, {}, biases};
  for (std::size_t i = 0; i < raw_weights.size(); ++i) {
    const Shape want{spec.widths[i + 1], spec.widths[i], spec.filter(i), spec.channels};
    if (raw_weights[i].shape() != want)
      throw ShapeError("conv weight " + std::to_string(i + 1) + " has shape " + to_string(raw_weights[i].shape()) +
                       ", expected " + to_string(want));
    u.weights.push_back(raw_weights[i].reshaped(spec.weight_shape(i)));
  }
  u.check();
  return u;
}

/// Maps each layer's folded channels to the shared width c̃.
template <class T>
VarFeature<T> conv_project(const VarFeature<T>& u, const ConvAdapterParams<T>& p) {
  if (p.proj.size() != u.num_layers()) throw ShapeError("conv adapter layer count mismatch");
  const std::size_t shared = p.proj.at(0).dim(1);
  VarFeature<T> r{u.spec.with_channels(shared).without_filters(), {}, {}};
  for (std::size_t i = 0; i < u.num_layers(); ++i) {
    r.weights.push_back(detail::channel_matmul(u.weights[i], p.proj[i]));
    r.biases.push_back(detail::channel_matmul(u.biases[i], p.bproj[i]));
  }
  return r;
}

/// Restores per-layer folded channels; `spec` is the original (filtered) spec.
template <class T>
VarFeature<T> conv_unproject(const VarFeature<T>& u, const ConvAdapterParams<T>& p, const WeightSpaceSpec& spec) {
  if (p.unproj.size() != u.num_layers()) throw ShapeError("conv adapter layer count mismatch");
  VarFeature<T> r{spec, {}, {}};
  for (std::size_t i = 0; i < u.num_layers(); ++i) {
    r.weights.push_back(detail::channel_matmul(u.weights[i], p.unproj[i]));
    r.biases.push_back(detail::channel_matmul(u.biases[i], p.bunproj[i]));
  }
  r.check();
  return r;
}

template <class T>
VarFeature<T> fourier_lift(const VarFeature<T>& u, const FourierLift<T>& lift) {
  Var<T> B = Var<T>::constant(lift.B);
  auto g = [&](const Var<T>& x) {
    if (x.shape().back() != lift.in_channels())
      throw ShapeError("Fourier lift expects " + std::to_string(lift.in_channels()) + " input channels");
    Var<T> proj = detail::channel_matmul(x, B);
    return concat(std::vector<Var<T>>{sin(proj), cos(proj)}, proj.rank() - 1);
  };
  return map_entries(u, g, lift.out_channels());
}

/// Pointwise two-layer GELU MLP on the channel axis.
template <class T>
Var<T> pointwise_mlp(const Var<T>& x, const Var<T>& w1, const Var<T>& b1, const Var<T>& w2, const Var<T>& b2,
                     const ForwardContext* ctx = nullptr) {
  Var<T> h = gelu(linear(x, w1, &b1));
  if (ctx && ctx->active()) h = dropout(h, ctx->dropout, *ctx->rng);
  return linear(h, w2, &b2);
}

/// Z = U + SA(LN₁(U)); Block(U) = Z + MLP(LN₂(Z)).
template <class T>
VarFeature<T> nft_block(const VarFeature<T>& u, const BlockParams<T>& p, const ForwardContext* ctx = nullptr) {
  const std::size_t c = detail::uniform_channels(u);
  auto ln1 = [&](const Var<T>& x) { return layernorm(x, p.ln1_gain, p.ln1_bias); };
  VarFeature<T> z = add(u, self_attention(map_entries(u, ln1, c), p.sa, ctx));
  auto mlp = [&](const Var<T>& x) {
    return pointwise_mlp(layernorm(x, p.ln2_gain, p.ln2_bias), p.w1, p.b1, p.w2, p.b2, ctx);
  };
  return add(z, map_entries(z, mlp, c));
}

}  // namespace wsfn
