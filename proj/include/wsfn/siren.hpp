// Sinusoidal MLPs (SIREN): forward evaluation, initialization and fitting.
#pragma once

#include <cmath>
#include <stdexcept>

#include "wsfn/optim.hpp"
#include "wsfn/weight_space.hpp"

namespace wsfn {

/// Hidden layers compute sin(ω₀(Wx + b)); the output layer is affine.
template <class T>
struct SirenNetwork {
  WeightSpaceFeature<T> net;  // single-channel feature
  T omega0 = T(30);
  double psnr = 0.0;  // of the fit that produced it, when known
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Standard SIREN initialization: first layer U(±1/fan_in), later layers
/// U(±√(6/fan_in)/ω₀), biases U(±1/√fan_in).
template <class T>
SirenNetwork<T> siren_init(const WeightSpaceSpec& spec, std::mt19937_64& rng, T omega0 = T(30)) {
  SirenNetwork<T> s{zeros_feature<T>(spec.with_channels(1)), omega0, 0.0};
  for (std::size_t i = 0; i < spec.num_layers(); ++i) {
    const T fan_in = static_cast<T>(spec.widths[i]);
    const T bound = i == 0 ? T(1) / fan_in : std::sqrt(T(6) / fan_in) / omega0;
    std::uniform_real_distribution<T> w(-bound, bound), b(-T(1) / std::sqrt(fan_in), T(1) / std::sqrt(fan_in));
    for (auto& v : s.net.weights[i].storage()) v = w(rng);
    for (auto& v : s.net.biases[i].storage()) v = b(rng);
  }
  return s;
}

/// coords [B × n_0] → signal [B × n_L] for single-channel weights on the tape.
template <class T>
Var<T> siren_forward(const Var<T>& coords, const VarFeature<T>& net, T omega0) {
  const auto& n = net.spec.widths;
  if (coords.rank() != 2 || coords.dim(1) != n.front())
    throw ShapeError("SIREN expects coordinates [B x " + std::to_string(n.front()) + "], got " +
                     to_string(coords.shape()));
  Var<T> h = coords;
  const std::size_t L = net.num_layers();
  for (std::size_t i = 0; i < L; ++i) {
    if (net.weights[i].shape().back() != 1) throw ShapeError("SIREN weights must be single-channel");
    Var<T> w = reshape(net.weights[i], Shape{n[i + 1], n[i]});
    Var<T> b = reshape(net.biases[i], Shape{n[i + 1]});
    h = linear(h, w, &b);
    if (i + 1 < L) h = sin(scale(h, omega0));
  }
  return h;
}

template <class T>
Tensor<T> siren_forward(const Tensor<T>& coords, const SirenNetwork<T>& s) {
  return siren_forward(Var<T>::constant(coords), as_constant(s.net), s.omega0).value();
}

/// Pixel-center coordinates of an H×W grid on [-1,1]², rows of (x, y).
template <class T>
Tensor<T> pixel_grid(std::size_t H, std::size_t W) {
  Tensor<T> g(Shape{H * W, 2});
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      g[(r * W + c) * 2 + 0] = T(-1) + T(2 * c + 1) / T(W);
      g[(r * W + c) * 2 + 1] = T(-1) + T(2 * r + 1) / T(H);
    }
  return g;
}

/// PSNR in dB for signals on a unit range.
inline double psnr_from_mse(double mse) { return mse <= 0 ? 99.0 : -10.0 * std::log10(mse); }

struct FitConfig {
  std::vector<std::size_t> hidden{16, 16};
  std::size_t steps = 500;
  double lr = 1e-3;
  double omega0 = 30.0;
};

struct FitResult {
  double final_loss = 0;
  double psnr = 0;
  std::size_t steps = 0;
};

/// Full-batch Adam fit of an image [H × W × ch] starting from `init`.
template <class T>
FitResult fit_siren(SirenNetwork<T>& s, const Tensor<T>& image, const FitConfig& cfg) {
  if (image.rank() != 3 || image.dim(0) < 4 || image.dim(1) < 4)
    throw std::invalid_argument("fit_siren needs an image of at least 4x4 pixels");
  const std::size_t H = image.dim(0), W = image.dim(1), ch = image.dim(2);
  if (s.net.spec.widths.back() != ch || s.net.spec.widths.front() != 2)
    throw ShapeError("SIREN spec does not map 2-D coordinates to " + std::to_string(ch) + " channels");
  Var<T> coords = Var<T>::constant(pixel_grid<T>(H, W));
  Var<T> target = Var<T>::constant(image.reshaped({H * W, ch}));
  ParamStore<T> store;
  for (std::size_t i = 0; i < s.net.num_layers(); ++i) {
    store.add("w." + std::to_string(i + 1), s.net.weights[i]);
    store.add("b." + std::to_string(i + 1), s.net.biases[i]);
  }
  Adam<T> opt(AdamConfig{cfg.lr});
  const T inv_n = T(1) / static_cast<T>(H * W * ch);
  auto feature_of = [&](const Binding<T>& b) {
    VarFeature<T> f{s.net.spec, {}, {}};
    for (std::size_t i = 0; i < s.net.num_layers(); ++i) {
      f.weights.push_back(b["w." + std::to_string(i + 1)]);
      f.biases.push_back(b["b." + std::to_string(i + 1)]);
    }
    return f;
  };
  double loss = 0;
  for (std::size_t step = 0; step <= cfg.steps; ++step) {
    Binding<T> b(store, step < cfg.steps);
    Var<T> l = scale(sum(square(sub(siren_forward(coords, feature_of(b), s.omega0), target))), inv_n);
    loss = l.value()[0];
    if (!std::isfinite(loss))
      throw DivergenceError("SIREN fit diverged (loss is not finite); try a lower learning rate");
    if (step == cfg.steps) break;
    backward(l);
    opt.step(store, collect_grads(b));
  }
  for (std::size_t i = 0; i < s.net.num_layers(); ++i) {
    s.net.weights[i] = store.get("w." + std::to_string(i + 1));
    s.net.biases[i] = store.get("b." + std::to_string(i + 1));
  }
  s.psnr = psnr_from_mse(loss);
  return {loss, s.psnr, cfg.steps};
}

/// SIREN weight spec 2 → hidden… → out.
inline WeightSpaceSpec siren_spec(const std::vector<std::size_t>& hidden, std::size_t in = 2, std::size_t out = 1) {
  WeightSpaceSpec s;
  s.widths.push_back(in);
  s.widths.insert(s.widths.end(), hidden.begin(), hidden.end());
  s.widths.push_back(out);
  s.channels = 1;
  return s;
}

}  // namespace wsfn
