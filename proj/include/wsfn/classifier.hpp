// Small sequence transformer over the M latent vectors of a frozen encoder.
#pragma once

#include "wsfn/layers.hpp"
#include "wsfn/params.hpp"

namespace wsfn {

struct ClassifierConfig {
  std::size_t blocks = 2;
  std::size_t heads = 2;
  std::size_t mlp_hidden = 64;
  std::size_t num_classes = 2;
  bool operator==(const ClassifierConfig&) const = default;
};

/// Inputs are standardized per latent coordinate with training-set
/// statistics (frozen "cls.norm.*"), get a learned position embedding per
/// latent slot, pass through pre-LN transformer blocks, and are mean-pooled
/// into class logits.
template <class T>
class LatentClassifier {
 public:
  LatentClassifier() = default;
  LatentClassifier(ClassifierConfig cfg, std::size_t M, std::size_t d, std::uint64_t seed) : cfg_(cfg), M_(M), d_(d) {
    if (cfg_.heads == 0 || d % cfg_.heads) throw std::invalid_argument("classifier heads must divide the latent width");
    if (cfg_.num_classes == 0) throw std::invalid_argument("classifier needs at least one class");
    std::mt19937_64 rng(seed);
    const T s = T(1) / std::sqrt(T(d));
    p_.add("cls.norm.mean", Tensor<T>::zeros({M, d}), false);
    p_.add("cls.norm.std", Tensor<T>::ones({M, d}), false);
    p_.add("cls.pos", normal_tensor<T>({M, d}, T(0.1), rng));
    for (std::size_t t = 0; t < cfg_.blocks; ++t) {
      const std::string b = "cls.block" + std::to_string(t);
      p_.add(b + ".ln1.gain", Tensor<T>::ones({d}));
      p_.add(b + ".ln1.bias", Tensor<T>::zeros({d}));
      for (const char* n : {".q", ".k", ".v", ".o"}) p_.add(b + n, uniform_tensor<T>({d, d}, s, rng));
      p_.add(b + ".ln2.gain", Tensor<T>::ones({d}));
      p_.add(b + ".ln2.bias", Tensor<T>::zeros({d}));
      p_.add(b + ".mlp.w1", uniform_tensor<T>({cfg_.mlp_hidden, d}, s, rng));
      p_.add(b + ".mlp.b1", Tensor<T>::zeros({cfg_.mlp_hidden}));
      p_.add(b + ".mlp.w2", uniform_tensor<T>({d, cfg_.mlp_hidden}, T(1) / std::sqrt(T(cfg_.mlp_hidden)), rng));
      p_.add(b + ".mlp.b2", Tensor<T>::zeros({d}));
    }
    p_.add("cls.ln.gain", Tensor<T>::ones({d}));
    p_.add("cls.ln.bias", Tensor<T>::zeros({d}));
    p_.add("cls.out.w", uniform_tensor<T>({cfg_.num_classes, d}, s, rng));
    p_.add("cls.out.b", Tensor<T>::zeros({cfg_.num_classes}));
  }

  const ClassifierConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return p_; }
  const ParamStore<T>& params() const { return p_; }

  void fit_input_norm(const std::vector<Tensor<T>>& latents) {
    if (latents.empty()) return;
    Tensor<T> mean({M_, d_}), sd({M_, d_});
    for (std::size_t j = 0; j < M_ * d_; ++j) {
      double s = 0, s2 = 0;
      for (const auto& z : latents) s += z[j], s2 += double(z[j]) * z[j];
      const double m = s / latents.size(), v = std::max(s2 / latents.size() - m * m, 0.0);
      mean[j] = T(m);
      sd[j] = T(std::sqrt(v) > 1e-8 ? std::sqrt(v) : 1.0);
    }
    p_.get_mut("cls.norm.mean") = mean;
    p_.get_mut("cls.norm.std") = sd;
  }

  /// z [M × d] → logits [K].
  Var<T> forward(const Binding<T>& b, const Tensor<T>& z, const ForwardContext* ctx = nullptr) const {
    if (z.shape() != Shape{M_, d_})
      throw ShapeError("classifier expects latents " + to_string(Shape{M_, d_}) + ", got " + to_string(z.shape()));
    Tensor<T> zn = z;
    const auto& mean = b["cls.norm.mean"].value();
    const auto& sd = b["cls.norm.std"].value();
    for (std::size_t j = 0; j < zn.size(); ++j) zn[j] = (zn[j] - mean[j]) / sd[j];
    Var<T> x = add(Var<T>::constant(std::move(zn)), b["cls.pos"]);
    const std::size_t H = cfg_.heads, dh = d_ / H;
    std::mt19937_64* rng = ctx && ctx->active() ? ctx->rng : nullptr;
    const double pd = ctx ? ctx->dropout : 0.0;
    auto heads = [&](const Var<T>& v) { return permute(reshape(v, Shape{M_, H, dh}), {1, 0, 2}); };
    for (std::size_t t = 0; t < cfg_.blocks; ++t) {
      const std::string p = "cls.block" + std::to_string(t);
      Var<T> h = layernorm(x, b[p + ".ln1.gain"], b[p + ".ln1.bias"]);
      Var<T> a = batched_attention(heads(linear(h, b[p + ".q"])), heads(linear(h, b[p + ".k"])),
                                   heads(linear(h, b[p + ".v"])), rng, pd);
      a = reshape(permute(a, {1, 0, 2}), Shape{M_, d_});
      x = add(x, linear(a, b[p + ".o"]));
      h = layernorm(x, b[p + ".ln2.gain"], b[p + ".ln2.bias"]);
      h = gelu(linear(h, b[p + ".mlp.w1"], &b[p + ".mlp.b1"]));
      if (ctx && ctx->active()) h = dropout(h, ctx->dropout, *ctx->rng);
      x = add(x, linear(h, b[p + ".mlp.w2"], &b[p + ".mlp.b2"]));
    }
    x = layernorm(x, b["cls.ln.gain"], b["cls.ln.bias"]);
    Var<T> pooled = scale(sum_axis(x, 0), T(1) / static_cast<T>(M_));
    return linear(reshape(pooled, Shape{1, d_}), b["cls.out.w"], &b["cls.out.b"]);
  }

  Tensor<T> logits(const Tensor<T>& z) const {
    return forward(Binding<T>(p_, false), z).value().reshaped({cfg_.num_classes});
  }

  int predict(const Tensor<T>& z) const {
    const auto l = logits(z);
    return static_cast<int>(std::max_element(l.data().begin(), l.data().end()) - l.data().begin());
  }

 private:
  ClassifierConfig cfg_;
  std::size_t M_ = 0, d_ = 0;
  ParamStore<T> p_;
};

/// Fraction of latents whose argmax logit equals the label.
template <class T>
double accuracy(const LatentClassifier<T>& c, const std::vector<Tensor<T>>& z, const std::vector<int>& labels) {
  if (z.size() != labels.size())
    throw std::invalid_argument("label count " + std::to_string(labels.size()) + " does not match latent count " +
                                std::to_string(z.size()));
  if (z.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < z.size(); ++i) ok += c.predict(z[i]) == labels[i];
  return static_cast<double>(ok) / static_cast<double>(z.size());
}

}  // namespace wsfn
