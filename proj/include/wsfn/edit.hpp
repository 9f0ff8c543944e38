// INR editing: an equivariant NFT predicts Δ(W) and the edited network
// W + Δ(W) is fit to a transformed image.
#pragma once

#include "wsfn/nft.hpp"
#include "wsfn/siren.hpp"

namespace wsfn {

template <class T>
class EditModel {
 public:
  EditModel() = default;
  EditModel(NftConfig cfg, const WeightSpaceSpec& siren, std::uint64_t seed, T omega0 = T(30))
      : omega0_(omega0) {
    cfg.head_kind = HeadKind::equivariant_delta;
    nft_ = NftModel<T>(cfg, siren.with_channels(1), seed);
  }

  const NftModel<T>& nft() const { return nft_; }
  NftModel<T>& nft() { return nft_; }
  ParamStore<T>& params() { return nft_.params(); }
  const ParamStore<T>& params() const { return nft_.params(); }

  /// W + Δ(W) on the tape.
  VarFeature<T> edited(const Binding<T>& b, const WeightSpaceFeature<T>& w, const ForwardContext* ctx = nullptr) const {
    VarFeature<T> base = as_constant(w);
    return add(base, nft_.forward(b, base, ctx).delta);
  }

  WeightSpaceFeature<T> apply(const WeightSpaceFeature<T>& w) const {
    return values(edited(Binding<T>(nft_.params(), false), w));
  }

  /// Mean squared error between SIREN(x; W + Δ(W)) and the target image
  /// over the pixel grid.
  Var<T> loss(const Binding<T>& b, const WeightSpaceFeature<T>& w, const Tensor<T>& target,
              const ForwardContext* ctx = nullptr) const {
    const std::size_t H = target.dim(0), W = target.dim(1), C = target.dim(2);
    Var<T> pred = siren_forward(Var<T>::constant(pixel_grid<T>(H, W)), edited(b, w, ctx), omega0_);
    Var<T> diff = sub(pred, Var<T>::constant(target.reshaped({H * W, C})));
    return scale(sum(square(diff)), T(1) / static_cast<T>(H * W * C));
  }

  T omega0() const { return omega0_; }

 private:
  NftModel<T> nft_;
  T omega0_ = T(30);
};

}  // namespace wsfn
