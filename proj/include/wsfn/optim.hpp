// Adam / AdamW with linear learning-rate warmup.
#pragma once

#include <cmath>
#include <map>

#include "wsfn/params.hpp"

namespace wsfn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW) when > 0
  std::size_t warmup = 0;
  std::size_t decay_steps = 0;  // cosine decay to lr·min_lr_ratio over this many updates after warmup (0 = constant)
  double min_lr_ratio = 0.0;
  double clip_norm = 0.0;       // global gradient-norm clip (0 = off)

  bool operator==(const AdamConfig&) const = default;
};

/// Learning rate used by update number `step` (1-based): linear warmup, then
/// optional cosine decay.
inline double scheduled_lr(const AdamConfig& c, std::size_t step) {
  if (c.warmup > 0 && step < c.warmup) return c.lr * static_cast<double>(step) / static_cast<double>(c.warmup);
  if (c.decay_steps == 0) return c.lr;
  const double t = std::min(1.0, static_cast<double>(step - c.warmup) / static_cast<double>(c.decay_steps));
  const double lo = c.lr * c.min_lr_ratio;
  return lo + 0.5 * (c.lr - lo) * (1.0 + std::cos(3.14159265358979323846 * t));
}

template <class T>
double global_norm(const std::map<std::string, Tensor<T>>& g) {
  double s = 0;
  for (const auto& [name, t] : g)
    for (T v : t.data()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::size_t steps() const { return step_; }

  /// Applies one update with the given gradients (by parameter name);
  /// parameters without a gradient entry are left unchanged.
  void step(ParamStore<T>& params, const std::map<std::string, Tensor<T>>& grads) {
    ++step_;
    const double lr = scheduled_lr(cfg_, step_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    double gscale = 1.0;
    if (cfg_.clip_norm > 0) {
      const double n = global_norm(grads);
      if (n > cfg_.clip_norm) gscale = cfg_.clip_norm / n;
    }
    for (const auto& name : params.names()) {
      if (!params.trainable(name)) continue;
      auto git = grads.find(name);
      if (git == grads.end()) continue;
      Tensor<T>& p = params.get_mut(name);
      const Tensor<T>& g = git->second;
      auto& m = m_.try_emplace(name, p.shape()).first->second;
      auto& v = v_.try_emplace(name, p.shape()).first->second;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = gscale * g[i];
        m[i] = static_cast<T>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi);
        v[i] = static_cast<T>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi);
        const double mh = m[i] / bc1, vh = v[i] / bc2;
        double upd = mh / (std::sqrt(vh) + cfg_.eps);
        if (cfg_.weight_decay > 0) upd += cfg_.weight_decay * p[i];
        p[i] = static_cast<T>(p[i] - lr * upd);
      }
    }
  }

  // Optimizer state for checkpointing.
  const std::map<std::string, Tensor<T>>& first_moments() const { return m_; }
  const std::map<std::string, Tensor<T>>& second_moments() const { return v_; }
  void restore(std::size_t step, std::map<std::string, Tensor<T>> m, std::map<std::string, Tensor<T>> v) {
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  AdamConfig cfg_;
  std::size_t step_ = 0;
  std::map<std::string, Tensor<T>> m_, v_;
};

/// Gradients of every trainable bound variable after backward().
template <class T>
std::map<std::string, Tensor<T>> collect_grads(const Binding<T>& b) {
  std::map<std::string, Tensor<T>> g;
  for (const auto& [name, var] : b.vars())
    if (var.requires_grad()) g.emplace(name, var.grad());
  return g;
}

template <class T>
void accumulate_grads(std::map<std::string, Tensor<T>>& into, const std::map<std::string, Tensor<T>>& g, T weight = T(1)) {
  for (const auto& [name, t] : g) {
    auto it = into.find(name);
    if (it == into.end()) it = into.emplace(name, Tensor<T>(t.shape())).first;
    for (std::size_t i = 0; i < t.size(); ++i) it->second[i] += weight * t[i];
  }
}

template <class T>
bool all_finite(const std::map<std::string, Tensor<T>>& g) {
  for (const auto& [name, t] : g)
    for (T v : t.data())
      if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace wsfn
