// Inr2Array: invariant NFT encoder from SIREN weights to a spatial latent
// array, hypernetwork decoder back to per-patch SIRENs, and the patchwise
// reconstruction loss.
#pragma once

#include <cmath>

#include "wsfn/nft.hpp"
#include "wsfn/siren.hpp"

namespace wsfn {

/// M rectangular patches (gh × gw, row-major) partitioning an H×W pixel grid.
struct PatchGrid {
  std::size_t H = 0, W = 0, gh = 0, gw = 0;
  std::vector<std::vector<std::size_t>> pixels;  // flat pixel indices r·W + c per patch

  std::size_t size() const { return pixels.size(); }

  static PatchGrid make(std::size_t H, std::size_t W, std::size_t M) {
    if (M == 0) throw std::invalid_argument("patch count must be positive");
    std::size_t gh = static_cast<std::size_t>(std::sqrt(static_cast<double>(M)));
    while (M % gh) --gh;
    const std::size_t gw = M / gh;
    if (gh > H || gw > W)
      throw std::invalid_argument("cannot split a " + std::to_string(H) + "x" + std::to_string(W) + " grid into " +
                                  std::to_string(M) + " patches");
    PatchGrid g{H, W, gh, gw, std::vector<std::vector<std::size_t>>(M)};
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) g.pixels[(r * gh / H) * gw + c * gw / W].push_back(r * W + c);
    return g;
  }
};

struct Inr2ArrayConfig {
  NftConfig encoder;  // head_kind is forced to invariant_array
  std::size_t dec_hidden = 64;
  std::size_t image_h = 16, image_w = 16;
  double omega0 = 30.0;
};

/// Parameter names: "encoder." + NFT names, "dec.<W|b><i>.{fc1.w,fc1.b,fc2.w,fc2.b,base}".
template <class T>
class Inr2Array {
 public:
  Inr2Array() = default;
  Inr2Array(Inr2ArrayConfig cfg, const WeightSpaceSpec& siren, std::uint64_t seed)
      : cfg_(std::move(cfg)), siren_(siren.with_channels(1)) {
    cfg_.encoder.head_kind = HeadKind::invariant_array;
    grid_ = PatchGrid::make(cfg_.image_h, cfg_.image_w, cfg_.encoder.ca_m);
    enc_ = NftModel<T>(cfg_.encoder, siren_, seed);
    store_.merge(enc_.params(), "encoder.");
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    auto base = siren_init<T>(siren_, rng, T(cfg_.omega0));
    const std::size_t d = cfg_.encoder.ca_dim, h = cfg_.dec_hidden;
    for (std::size_t t = 0; t < 2 * siren_.num_layers(); ++t) {
      const std::string n = target_name(t);
      const Tensor<T>& b = t % 2 == 0 ? base.net.weights[t / 2] : base.net.biases[t / 2];
      store_.add(n + ".fc1.w", uniform_tensor<T>({h, d}, T(1) / std::sqrt(T(d)), rng));
      store_.add(n + ".fc1.b", Tensor<T>::zeros({h}));
      store_.add(n + ".fc2.w", Tensor<T>::zeros({b.size(), h}));
      store_.add(n + ".fc2.b", Tensor<T>::zeros({b.size()}));
      store_.add(n + ".base", b);
      // Hyper-outputs are emitted in units of the tensor's SIREN init range.
      const T fan_in = T(siren_.widths[t / 2]);
      const T gain = t % 2 ? T(1) / std::sqrt(fan_in)
                           : (t == 0 ? T(1) / fan_in : std::sqrt(T(6) / fan_in) / T(cfg_.omega0));
      store_.add(n + ".gain", Tensor<T>(Shape{1}, {gain}), false);
    }
    coords_ = pixel_grid<T>(cfg_.image_h, cfg_.image_w);
  }

  /// "dec.W1", "dec.b1", "dec.W2", … in layer-major order.
  static std::string target_name(std::size_t t) {
    return std::string("dec.") + (t % 2 == 0 ? "W" : "b") + std::to_string(t / 2 + 1);
  }

  const Inr2ArrayConfig& config() const { return cfg_; }
  const WeightSpaceSpec& siren_spec() const { return siren_; }
  const PatchGrid& grid() const { return grid_; }
  const NftModel<T>& encoder() const { return enc_; }
  const ParamStore<T>& params() const { return store_; }
  ParamStore<T>& params() { return store_; }

  /// Standardizes encoder inputs with per-layer statistics of `sample`.
  void fit_input_norm(const std::vector<WeightSpaceFeature<T>>& sample) {
    enc_.fit_input_norm(sample);
    for (const auto& n : enc_.params().names())
      if (n.rfind("norm.", 0) == 0) store_.get_mut("encoder." + n) = enc_.params().get(n);
  }

  /// z = Enc(W), [M × d].
  Var<T> encode(const Binding<T>& b, const WeightSpaceFeature<T>& net, const ForwardContext* ctx = nullptr) const {
    return enc_.forward(b.sub("encoder."), as_constant(net), ctx).z;
  }
  Tensor<T> encode(const WeightSpaceFeature<T>& net) const { return encode(Binding<T>(store_, false), net).value(); }

  /// Ŵ_i = Dec(z_i) for every row of z; returns M single-channel features.
  std::vector<VarFeature<T>> decode(const Binding<T>& b, const Var<T>& z) const {
    const std::size_t M = z.dim(0);
    std::vector<VarFeature<T>> out(M, VarFeature<T>{siren_, {}, {}});
    for (std::size_t t = 0; t < 2 * siren_.num_layers(); ++t) {
      const std::string n = target_name(t);
      const Shape shape = t % 2 == 0 ? siren_.weight_shape(t / 2) : siren_.bias_shape(t / 2);
      Var<T> h = gelu(linear(z, b[n + ".fc1.w"], &b[n + ".fc1.b"]));
      Var<T> o = scale(linear(h, b[n + ".fc2.w"], &b[n + ".fc2.b"]), b[n + ".gain"].value()[0]);  // [M × numel]
      for (std::size_t i = 0; i < M; ++i) {
        Var<T> w = add(reshape(slice(o, 0, i, i + 1), shape), b[n + ".base"]);
        (t % 2 == 0 ? out[i].weights : out[i].biases).push_back(w);
      }
    }
    return out;
  }

  /// SIREN(x; W) on the full pixel grid, [H·W × out].
  Tensor<T> target_signal(const WeightSpaceFeature<T>& net) const {
    return siren_forward(Var<T>::constant(coords_), as_constant(net), T(cfg_.omega0)).value();
  }

  /// Σ_i Σ_{x∈P_i} (SIREN(x; Ŵ_i) − SIREN(x; W))², target held constant.
  Var<T> loss(const Binding<T>& b, const WeightSpaceFeature<T>& net, const ForwardContext* ctx = nullptr,
              const Tensor<T>* target = nullptr) const {
    const Tensor<T> y = target ? *target : target_signal(net);
    return loss_from_latent(b, encode(b, net, ctx), y);
  }

  Var<T> loss_from_latent(const Binding<T>& b, const Var<T>& z, const Tensor<T>& y) const {
    auto dec = decode(b, z);
    Var<T> coords = Var<T>::constant(coords_);
    Var<T> target = Var<T>::constant(y);
    Var<T> total;
    for (std::size_t i = 0; i < grid_.size(); ++i) {
      const auto& px = grid_.pixels[i];
      Var<T> pred = siren_forward(index_select(coords, 0, px), dec[i], T(cfg_.omega0));
      Var<T> li = sum(square(sub(pred, index_select(target, 0, px))));
      total = total.defined() ? add(total, li) : li;
    }
    return total;
  }

  /// Reassembled H×W×out reconstruction from the per-patch decoded SIRENs.
  Tensor<T> reconstruct(const WeightSpaceFeature<T>& net) const {
    Binding<T> b(store_, false);
    auto dec = decode(b, encode(b, net));
    const std::size_t out_dim = siren_.widths.back();
    Tensor<T> img(Shape{cfg_.image_h, cfg_.image_w, out_dim});
    Var<T> coords = Var<T>::constant(coords_);
    for (std::size_t i = 0; i < grid_.size(); ++i) {
      const auto& px = grid_.pixels[i];
      Tensor<T> pred = siren_forward(index_select(coords, 0, px), dec[i], T(cfg_.omega0)).value();
      for (std::size_t p = 0; p < px.size(); ++p)
        for (std::size_t ch = 0; ch < out_dim; ++ch) img[px[p] * out_dim + ch] = pred[p * out_dim + ch];
    }
    return img;
  }

 private:
  Inr2ArrayConfig cfg_;
  WeightSpaceSpec siren_;
  PatchGrid grid_;
  NftModel<T> enc_;
  ParamStore<T> store_;
  Tensor<T> coords_;
};

}  // namespace wsfn
