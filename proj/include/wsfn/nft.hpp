// Neural functional transformer stacks with equivariant or invariant heads.
#pragma once

#include <variant>

#include "wsfn/layers.hpp"

namespace wsfn {

enum class HeadKind { equivariant_delta, invariant_scalar, invariant_array };

inline const char* to_string(HeadKind h) {
  switch (h) {
    case HeadKind::equivariant_delta: return "equivariant_delta";
    case HeadKind::invariant_scalar: return "invariant_scalar";
    case HeadKind::invariant_array: return "invariant_array";
  }
  return "?";
}

inline HeadKind parse_head_kind(const std::string& s) {
  if (s == "equivariant_delta") return HeadKind::equivariant_delta;
  if (s == "invariant_scalar") return HeadKind::invariant_scalar;
  if (s == "invariant_array") return HeadKind::invariant_array;
  throw std::invalid_argument("unknown head kind '" + s + "'");
}

struct NftConfig {
  std::size_t num_blocks = 3;
  std::size_t channels = 64;
  std::size_t mlp_hidden = 128;
  std::size_t heads = 4;
  double fourier_scale = 3.0;
  std::size_t fourier_size = 32;  // 0 disables the lift (a linear map is used instead)
  double dropout_p = 0.0;
  HeadKind head_kind = HeadKind::invariant_array;
  std::size_t ca_m = 4;
  std::size_t ca_dim = 32;
  std::size_t num_outputs = 2;  // K for invariant_scalar
  std::size_t head_hidden = 64;
  Term3Mode term3 = Term3Mode::rowcol;
  bool io_enc = false;
  bool enc_every_block = false;
  std::size_t conv_shared = 8;  // c̃ when the input spec has filter widths
  double delta_scale = 1.0;     // equivariant_delta output, in units of the per-layer input std
  bool delta_skip = true;       // equivariant_delta adds a per-layer, per-channel affine map of the raw input

  bool operator==(const NftConfig&) const = default;
};

/// Result of an NFT forward pass; which member is set depends on the head.
template <class T>
struct NftOutput {
  VarFeature<T> delta;  // equivariant_delta
  Var<T> y;             // invariant_scalar, [K]
  Var<T> z;             // invariant_array, [M × d]
};

/// Fourier lift → layer encoding → blocks → head. Parameters live in a
/// ParamStore using the block{t}.*, enc.*, ca.*, conv.*, fourier.B names.
template <class T>
class NftModel {
 public:
  NftModel() = default;
  NftModel(NftConfig cfg, WeightSpaceSpec input_spec, std::uint64_t seed) : cfg_(cfg), in_spec_(std::move(input_spec)) {
    in_spec_.validate();
    if (cfg_.heads == 0 || cfg_.channels % cfg_.heads)
      throw std::invalid_argument("heads must divide channels");
    std::mt19937_64 rng(seed);
    const bool conv = !in_spec_.filters.empty();
    const std::size_t c_in = conv ? cfg_.conv_shared : in_spec_.channels;
    for (std::size_t i = 0; i < in_spec_.num_layers(); ++i) {
      store_.add(norm_name('w', i), Tensor<T>(Shape{2}, {T(0), T(1)}), false);
      store_.add(norm_name('b', i), Tensor<T>(Shape{2}, {T(0), T(1)}), false);
    }
    if (conv) ConvAdapterParams<T>::init(store_, in_spec_, cfg_.conv_shared, rng);
    if (cfg_.fourier_size > 0) {
      store_.add("fourier.B", FourierLift<T>::make(c_in, cfg_.fourier_size, T(cfg_.fourier_scale), rng).B, false);
      if (2 * cfg_.fourier_size != cfg_.channels)
        store_.add("in.w", uniform_tensor<T>({cfg_.channels, 2 * cfg_.fourier_size},
                                             T(1) / std::sqrt(T(2 * cfg_.fourier_size)), rng));
    } else {
      store_.add("in.w", uniform_tensor<T>({cfg_.channels, c_in}, T(1) / std::sqrt(T(c_in)), rng));
    }
    LayerEncParams<T>::init(store_, in_spec_, cfg_.channels, rng, cfg_.io_enc);
    for (std::size_t t = 0; t < cfg_.num_blocks; ++t)
      BlockParams<T>::init(store_, block_name(t), cfg_.channels, cfg_.mlp_hidden, rng);
    store_.add("head.ln.gain", Tensor<T>::ones({cfg_.channels}));
    store_.add("head.ln.bias", Tensor<T>::zeros({cfg_.channels}));
    switch (cfg_.head_kind) {
      case HeadKind::equivariant_delta:
        store_.add("head.out.w", Tensor<T>::zeros({c_in, cfg_.channels}));
        store_.add("head.out.b", Tensor<T>::zeros({c_in}));
        if (cfg_.delta_skip && !conv)
          for (std::size_t i = 0; i < in_spec_.num_layers(); ++i)
            for (const char* part : {"scale", "shift"}) {
              store_.add(skip_name('w', i, part), Tensor<T>::zeros({c_in}));
              store_.add(skip_name('b', i, part), Tensor<T>::zeros({c_in}));
            }
        break;
      case HeadKind::invariant_scalar: {
        CAParams<T>::init(store_, cfg_.ca_m, cfg_.ca_dim, cfg_.channels, rng);
        const std::size_t flat = cfg_.ca_m * cfg_.ca_dim;
        store_.add("head.mlp.w1", uniform_tensor<T>({cfg_.head_hidden, flat}, T(1) / std::sqrt(T(flat)), rng));
        store_.add("head.mlp.b1", Tensor<T>::zeros({cfg_.head_hidden}));
        store_.add("head.mlp.w2",
                   uniform_tensor<T>({cfg_.num_outputs, cfg_.head_hidden}, T(1) / std::sqrt(T(cfg_.head_hidden)), rng));
        store_.add("head.mlp.b2", Tensor<T>::zeros({cfg_.num_outputs}));
        break;
      }
      case HeadKind::invariant_array:
        CAParams<T>::init(store_, cfg_.ca_m, cfg_.ca_dim, cfg_.channels, rng);
        break;
    }
  }

  static std::string block_name(std::size_t t) { return "block" + std::to_string(t); }
  static std::string skip_name(char kind, std::size_t layer, const char* part) {
    return std::string("head.skip.") + kind + "." + std::to_string(layer + 1) + "." + part;
  }
  static std::string norm_name(char kind, std::size_t layer) {
    return std::string("norm.") + kind + "." + std::to_string(layer + 1);
  }

  /// Per-layer input standardization (x − mean)/std for weights and biases,
  /// estimated over a sample of inputs. A per-layer scalar affine map
  /// commutes with neuron permutations.
  void fit_input_norm(const std::vector<WeightSpaceFeature<T>>& sample) {
    if (sample.empty()) return;
    for (std::size_t i = 0; i < in_spec_.num_layers(); ++i) {
      for (char kind : {'w', 'b'}) {
        double s = 0, s2 = 0, n = 0;
        for (const auto& u : sample)
          for (T v : (kind == 'w' ? u.weights[i] : u.biases[i]).data()) s += v, s2 += double(v) * v, n += 1;
        const double mean = s / n, sd = std::sqrt(std::max(s2 / n - mean * mean, 0.0));
        store_.get_mut(norm_name(kind, i)) = Tensor<T>(Shape{2}, {T(mean), T(sd > 1e-12 ? sd : 1.0)});
      }
    }
  }

  const NftConfig& config() const { return cfg_; }
  const WeightSpaceSpec& input_spec() const { return in_spec_; }
  const ParamStore<T>& params() const { return store_; }
  ParamStore<T>& params() { return store_; }

  NftOutput<T> forward(const Binding<T>& b, const VarFeature<T>& input, const ForwardContext* ctx = nullptr,
                       bool break_coupling = false) const {
    if (input.spec.widths != in_spec_.widths || input.spec.filters != in_spec_.filters ||
        input.spec.channels != in_spec_.channels)
      throw std::invalid_argument("NFT input spec " + to_string(input.spec) + " does not match model spec " +
                                  to_string(in_spec_));
    const bool conv = !in_spec_.filters.empty();
    const std::size_t L = in_spec_.num_layers();
    VarFeature<T> x = input;
    for (std::size_t i = 0; i < L; ++i) {
      const Tensor<T>& nw = b[norm_name('w', i)].value();
      const Tensor<T>& nb = b[norm_name('b', i)].value();
      x.weights[i] = scale(add_scalar(x.weights[i], -nw[0]), T(1) / nw[1]);
      x.biases[i] = scale(add_scalar(x.biases[i], -nb[0]), T(1) / nb[1]);
    }
    ConvAdapterParams<T> adapter;
    if (conv) {
      adapter = ConvAdapterParams<T>::from(b, L);
      x = conv_project(x, adapter);
    }
    if (cfg_.fourier_size > 0) {
      x = fourier_lift(x, FourierLift<T>{b["fourier.B"].value()});
      if (b.contains("in.w")) x = map_entries(x, [&](const Var<T>& v) { return linear(v, b["in.w"]); }, cfg_.channels);
    } else {
      x = map_entries(x, [&](const Var<T>& v) { return linear(v, b["in.w"]); }, cfg_.channels);
    }
    const auto enc = LayerEncParams<T>::from(b, L);
    x = layer_enc(x, enc);
    for (std::size_t t = 0; t < cfg_.num_blocks; ++t) {
      if (t > 0 && cfg_.enc_every_block) x = layer_enc(x, enc);
      auto bp = BlockParams<T>::from(b, block_name(t), cfg_.heads, cfg_.term3);
      bp.sa.break_coupling = break_coupling;
      x = nft_block(x, bp, ctx);
    }
    x = map_entries(x, [&](const Var<T>& v) { return layernorm(v, b["head.ln.gain"], b["head.ln.bias"]); },
                    cfg_.channels);
    NftOutput<T> out;
    switch (cfg_.head_kind) {
      case HeadKind::equivariant_delta: {
        const Var<T>& w = b["head.out.w"];
        const Var<T>& bias = b["head.out.b"];
        VarFeature<T> d = map_entries(x, [&](const Var<T>& v) { return linear(v, w, &bias); }, w.dim(0));
        if (!conv) {
          // Back to raw input units, so the update is W + Δ in the caller's scale.
          for (std::size_t i = 0; i < L; ++i) {
            d.weights[i] = scale(d.weights[i], T(cfg_.delta_scale) * b[norm_name('w', i)].value()[1]);
            d.biases[i] = scale(d.biases[i], T(cfg_.delta_scale) * b[norm_name('b', i)].value()[1]);
          }
          // Per-layer affine map of the raw entries, e.g. rescaling the
          // output layer; shared across neurons, so it commutes with σ.
          if (cfg_.delta_skip)
            for (std::size_t i = 0; i < L; ++i) {
              d.weights[i] = add(d.weights[i], add(mul(input.weights[i], b[skip_name('w', i, "scale")]),
                                                   b[skip_name('w', i, "shift")]));
              d.biases[i] = add(d.biases[i], add(mul(input.biases[i], b[skip_name('b', i, "scale")]),
                                                 b[skip_name('b', i, "shift")]));
            }
        }
        out.delta = conv ? conv_unproject(d, adapter, in_spec_) : restore_spec(d);
        break;
      }
      case HeadKind::invariant_scalar: {
        Var<T> z = cross_attention(x, CAParams<T>::from(b), ctx);
        Var<T> h = reshape(z, Shape{1, z.size()});
        Var<T> b1 = b["head.mlp.b1"], b2 = b["head.mlp.b2"];
        h = gelu(linear(h, b["head.mlp.w1"], &b1));
        out.y = reshape(linear(h, b["head.mlp.w2"], &b2), Shape{cfg_.num_outputs});
        out.z = z;
        break;
      }
      case HeadKind::invariant_array:
        out.z = cross_attention(x, CAParams<T>::from(b), ctx);
        break;
    }
    return out;
  }

  /// Convenience evaluation without gradients.
  NftOutput<T> evaluate(const WeightSpaceFeature<T>& u, bool break_coupling = false) const {
    Binding<T> b(store_, false);
    return forward(b, as_constant(u), nullptr, break_coupling);
  }

 private:
  VarFeature<T> restore_spec(VarFeature<T> d) const {
    d.spec = in_spec_;
    return d;
  }

  NftConfig cfg_;
  WeightSpaceSpec in_spec_;
  ParamStore<T> store_;
};

}  // namespace wsfn
