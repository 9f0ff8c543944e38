// Per-entry reference evaluation of weight-space self- and cross-attention.
// Plain nested loops over the formula, no tape and no batching; used only to
// cross-check the vectorized layers.
#pragma once

#include <cmath>
#include <vector>

#include "wsfn/attention.hpp"
#include "wsfn/layers.hpp"

namespace wsfn::reference {

using Array = std::vector<std::vector<double>>;  // [len][c]

struct Projections {
  Tensor<double> q, k, v;  // [c × c]
};

inline std::vector<double> project(const Tensor<double>& m, const double* u, std::size_t c) {
  std::vector<double> r(m.dim(0), 0.0);
  for (std::size_t a = 0; a < m.dim(0); ++a)
    for (std::size_t b = 0; b < c; ++b) r[a] += m[a * c + b] * u[b];
  return r;
}

/// Attention of one array-valued query over array-valued key/value pairs;
/// channels are split into `heads` contiguous groups.
inline Array attend(const Array& query, const std::vector<Array>& keys, const std::vector<Array>& vals,
                    std::size_t heads, bool scaled) {
  const std::size_t len = query.size(), c = query.at(0).size(), dh = c / heads;
  const std::size_t vlen = vals.at(0).size();
  Array out(vlen, std::vector<double>(c, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<double> logits(keys.size());
    for (std::size_t p = 0; p < keys.size(); ++p) {
      double s = 0;
      for (std::size_t m = 0; m < len; ++m)
        for (std::size_t ch = h * dh; ch < (h + 1) * dh; ++ch) s += query[m][ch] * keys[p][m][ch];
      logits[p] = scaled ? s / std::sqrt(static_cast<double>(len * dh)) : s;
    }
    double mx = logits[0];
    for (double l : logits) mx = std::max(mx, l);
    double z = 0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (std::size_t p = 0; p < keys.size(); ++p)
      for (std::size_t m = 0; m < vlen; ++m)
        for (std::size_t ch = h * dh; ch < (h + 1) * dh; ++ch) out[m][ch] += logits[p] / z * vals[p][m][ch];
  }
  return out;
}

/// SA output computed entry by entry from the three-term definition with biases.
inline WeightSpaceFeature<double> self_attention(const WeightSpaceFeature<double>& u, const Projections& th,
                                                 std::size_t heads, Term3Mode mode, bool scaled) {
  const auto& n = u.spec.widths;
  const std::size_t L = u.num_layers();
  const std::size_t c = u.weights.at(0).dim(2);

  // Projected entries: P[kind][layer][row][col] -> vector<c>.
  auto proj_w = [&](const Tensor<double>& m, std::size_t i, std::size_t j, std::size_t k) {
    return project(m, u.weights[i].data().data() + (j * n[i] + k) * c, c);
  };
  auto proj_b = [&](const Tensor<double>& m, std::size_t i, std::size_t j) {
    return project(m, u.biases[i].data().data() + j * c, c);
  };
  auto row = [&](const Tensor<double>& m, std::size_t i, std::size_t j) {
    Array a;
    for (std::size_t k = 0; k < n[i]; ++k) a.push_back(proj_w(m, i, j, k));
    return a;
  };
  auto col = [&](const Tensor<double>& m, std::size_t i, std::size_t k) {
    Array a;
    for (std::size_t j = 0; j < n[i + 1]; ++j) a.push_back(proj_w(m, i, j, k));
    return a;
  };
  auto bias = [&](const Tensor<double>& m, std::size_t i) {
    Array a;
    for (std::size_t j = 0; j < n[i + 1]; ++j) a.push_back(proj_b(m, i, j));
    return a;
  };
  auto kv1 = [&](std::size_t i, const Tensor<double>& m) {
    std::vector<Array> s;
    if (i > 0)
      for (std::size_t q = 0; q < n[i - 1]; ++q) s.push_back(col(m, i - 1, q));
    for (std::size_t p = 0; p < n[i + 1]; ++p) s.push_back(row(m, i, p));
    if (i > 0) s.push_back(bias(m, i - 1));
    return s;
  };
  auto kv2 = [&](std::size_t i, const Tensor<double>& m) {
    std::vector<Array> s;
    for (std::size_t q = 0; q < n[i]; ++q) s.push_back(col(m, i, q));
    if (i + 1 < L)
      for (std::size_t p = 0; p < n[i + 2]; ++p) s.push_back(row(m, i + 1, p));
    s.push_back(bias(m, i));
    return s;
  };
  // Term-3 key/value tokens, each a length-1 array.
  std::vector<Array> k3, v3;
  if (mode == Term3Mode::exact) {
    for (std::size_t s = 0; s < L; ++s)
      for (std::size_t p = 0; p < n[s + 1]; ++p)
        for (std::size_t q = 0; q < n[s]; ++q) {
          k3.push_back({proj_w(th.k, s, p, q)});
          v3.push_back({proj_w(th.v, s, p, q)});
        }
    for (std::size_t s = 0; s < L; ++s)
      for (std::size_t p = 0; p < n[s + 1]; ++p) {
        k3.push_back({proj_b(th.k, s, p)});
        v3.push_back({proj_b(th.v, s, p)});
      }
  } else {
    auto add_sum = [&](bool weights, std::size_t s) {
      std::vector<double> ks(c, 0.0), vs(c, 0.0);
      for (std::size_t p = 0; p < n[s + 1]; ++p) {
        if (weights) {
          for (std::size_t q = 0; q < n[s]; ++q) {
            auto a = proj_w(th.k, s, p, q), b = proj_w(th.v, s, p, q);
            for (std::size_t ch = 0; ch < c; ++ch) ks[ch] += a[ch], vs[ch] += b[ch];
          }
        } else {
          auto a = proj_b(th.k, s, p), b = proj_b(th.v, s, p);
          for (std::size_t ch = 0; ch < c; ++ch) ks[ch] += a[ch], vs[ch] += b[ch];
        }
      }
      k3.push_back({ks});
      v3.push_back({vs});
    };
    for (std::size_t s = 0; s < L; ++s) add_sum(true, s);
    for (std::size_t s = 0; s < L; ++s) add_sum(false, s);
  }

  WeightSpaceFeature<double> out = zeros_feature<double>(u.spec);
  for (std::size_t i = 0; i < L; ++i) {
    const auto K1 = kv1(i, th.k), V1 = kv1(i, th.v), K2 = kv2(i, th.k), V2 = kv2(i, th.v);
    for (std::size_t j = 0; j < n[i + 1]; ++j)
      for (std::size_t k = 0; k < n[i]; ++k) {
        const Array t1 = attend(row(th.q, i, j), K1, V1, heads, scaled);
        const Array t2 = attend(col(th.q, i, k), K2, V2, heads, scaled);
        const Array t3 = attend({proj_w(th.q, i, j, k)}, k3, v3, heads, scaled);
        for (std::size_t ch = 0; ch < c; ++ch)
          out.weights[i][(j * n[i] + k) * c + ch] = t1[k][ch] + t2[j][ch] + t3[0][ch];
      }
    const Array tb = attend(bias(th.q, i), K2, V2, heads, scaled);
    for (std::size_t j = 0; j < n[i + 1]; ++j) {
      const Array t3 = attend({proj_b(th.q, i, j)}, k3, v3, heads, scaled);
      for (std::size_t ch = 0; ch < c; ++ch) out.biases[i][j * c + ch] = tb[j][ch] + t3[0][ch];
    }
  }
  return out;
}

/// CA row m via a flat loop over every entry.
inline Tensor<double> cross_attention(const WeightSpaceFeature<double>& u, const Tensor<double>& e,
                                      const Tensor<double>& k, const Tensor<double>& v, bool scaled) {
  const std::size_t M = e.dim(0), d = e.dim(1), c = k.dim(1);
  std::vector<std::vector<double>> keys, vals;
  for (const auto* group : {&u.weights, &u.biases})
    for (const auto& t : *group)
      for (std::size_t at = 0; at < t.size(); at += c) {
        keys.push_back(project(k, t.data().data() + at, c));
        vals.push_back(project(v, t.data().data() + at, c));
      }
  Tensor<double> out(Shape{M, d});
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<double> logit(keys.size());
    double mx = -1e300;
    for (std::size_t p = 0; p < keys.size(); ++p) {
      double s = 0;
      for (std::size_t a = 0; a < d; ++a) s += e[m * d + a] * keys[p][a];
      logit[p] = scaled ? s / std::sqrt(static_cast<double>(d)) : s;
      mx = std::max(mx, logit[p]);
    }
    double z = 0;
    for (double& l : logit) z += (l = std::exp(l - mx));
    for (std::size_t p = 0; p < keys.size(); ++p)
      for (std::size_t a = 0; a < d; ++a) out[m * d + a] += logit[p] / z * vals[p][a];
  }
  return out;
}

}  // namespace wsfn::reference
