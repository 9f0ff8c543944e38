// Central finite-difference gradient checks.
#pragma once

#include <cmath>
#include <functional>
#include <algorithm>
#include <iterator>
#include <map>
#include <numeric>
#include <random>

#include "wsfn/params.hpp"

namespace wsfn {

struct GradCheck {
  double rel_err = 0;   // ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-8) over checked coordinates
  double max_abs = 0;
  std::size_t coords = 0;
};

/// Checks d f / d inputs[t] at `per_tensor` random coordinates (all when 0)
/// by central differences with step h.
inline std::vector<GradCheck> check_gradients(
    const std::function<Var<double>(const std::vector<Var<double>>&)>& f, std::vector<Tensor<double>> inputs,
    std::size_t per_tensor = 0, double h = 1e-5, std::uint64_t seed = 7) {
  std::vector<Var<double>> leaves;
  for (auto& t : inputs) leaves.push_back(Var<double>::leaf(t));
  Var<double> y = f(leaves);
  backward(y);
  std::mt19937_64 rng(seed);
  std::vector<GradCheck> out;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor<double> g = leaves[t].grad();
    std::vector<std::size_t> coords;
    if (per_tensor == 0 || per_tensor >= inputs[t].size()) {
      for (std::size_t i = 0; i < inputs[t].size(); ++i) coords.push_back(i);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, inputs[t].size() - 1);
      for (std::size_t i = 0; i < per_tensor; ++i) coords.push_back(pick(rng));
    }
    double num2 = 0, ana2 = 0, diff2 = 0, mx = 0;
    for (std::size_t i : coords) {
      auto eval = [&](double delta) {
        std::vector<Var<double>> xs;
        for (std::size_t s = 0; s < inputs.size(); ++s) {
          Tensor<double> v = inputs[s];
          if (s == t) v[i] += delta;
          xs.push_back(Var<double>::constant(std::move(v)));
        }
        return f(xs).value()[0];
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double d = numeric - g[i];
      num2 += numeric * numeric;
      ana2 += g[i] * g[i];
      diff2 += d * d;
      mx = std::max(mx, std::abs(d));
    }
    const double denom = std::max({std::sqrt(num2), std::sqrt(ana2), 1e-8});
    out.push_back({std::sqrt(diff2) / denom, mx, coords.size()});
  }
  return out;
}

/// Same, over every trainable tensor of a parameter store.
inline std::map<std::string, GradCheck> check_param_gradients(
    const std::function<Var<double>(const Binding<double>&)>& f, const ParamStore<double>& store,
    std::size_t per_tensor = 5, double h = 1e-5, std::uint64_t seed = 11) {
  Binding<double> b(store, true);
  Var<double> y = f(b);
  backward(y);
  std::mt19937_64 rng(seed);
  std::map<std::string, GradCheck> out;
  for (const auto& name : store.names()) {
    if (!store.trainable(name)) continue;
    const Tensor<double> g = b[name].grad();
    const std::size_t n = store.get(name).size();
    std::vector<std::size_t> coords;
    if (per_tensor == 0 || per_tensor >= n) {
      for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      std::vector<std::size_t> all(n);
      std::iota(all.begin(), all.end(), 0);
      std::sample(all.begin(), all.end(), std::back_inserter(coords), per_tensor, rng);  // distinct coordinates
    }
    double num2 = 0, ana2 = 0, diff2 = 0, mx = 0;
    for (std::size_t i : coords) {
      auto eval = [&](double delta) {
        ParamStore<double> s = store;
        s.get_mut(name)[i] += delta;
        return f(Binding<double>(s, false)).value()[0];
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double d = numeric - g[i];
      num2 += numeric * numeric;
      ana2 += g[i] * g[i];
      diff2 += d * d;
      mx = std::max(mx, std::abs(d));
    }
    const double denom = std::max({std::sqrt(num2), std::sqrt(ana2), 1e-8});
    out[name] = {std::sqrt(diff2) / denom, mx, coords.size()};
  }
  return out;
}

}  // namespace wsfn
