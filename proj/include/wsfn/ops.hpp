// Differentiable tensor operations.
#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "wsfn/autodiff.hpp"

namespace wsfn {

namespace detail {

template <class T>
Node<T>& parent(Node<T>& n, std::size_t i) {
  return *n.parents[i];
}

template <class T>
void accumulate(Node<T>& p, const Tensor<T>& g) {
  if (!p.requires_grad) return;
  auto& buf = p.grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

// Adds g (shaped like `big`) into p, summing over broadcast axes of p.
template <class T>
void accumulate_reduced(Node<T>& p, const Tensor<T>& g, const std::vector<std::size_t>& map) {
  if (!p.requires_grad) return;
  auto& buf = p.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[map[i]] += g[i];
}

enum class BinOp { add, sub, mul };

template <class T>
Var<T> binary(const Var<T>& a, const Var<T>& b, BinOp op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool swap = false;
  if (sa == sb || broadcastable_to(sb, sa)) {
  } else if (broadcastable_to(sa, sb)) {
    swap = true;
  } else {
    throw ShapeError("elementwise op shape mismatch: " + to_string(sa) + " vs " + to_string(sb));
  }
  const Shape& out_shape = swap ? sb : sa;
  const bool same = sa == sb;
  std::vector<std::size_t> map_a, map_b;
  if (!same) {
    if (swap) map_a = broadcast_index(sa, sb);
    else map_b = broadcast_index(sb, sa);
  }
  Tensor<T> out(out_shape);
  const auto& va = a.value();
  const auto& vb = b.value();
  const std::size_t n = out.size();
  auto ia = [&](std::size_t i) { return map_a.empty() ? i : map_a[i]; };
  auto ib = [&](std::size_t i) { return map_b.empty() ? i : map_b[i]; };
  switch (op) {
    case BinOp::add: for (std::size_t i = 0; i < n; ++i) out[i] = va[ia(i)] + vb[ib(i)]; break;
    case BinOp::sub: for (std::size_t i = 0; i < n; ++i) out[i] = va[ia(i)] - vb[ib(i)]; break;
    case BinOp::mul: for (std::size_t i = 0; i < n; ++i) out[i] = va[ia(i)] * vb[ib(i)]; break;
  }
  return make_result(std::move(out), {a, b},
                     [op, map_a = std::move(map_a), map_b = std::move(map_b)](Node<T>& self) {
                       Node<T>& pa = parent(self, 0);
                       Node<T>& pb = parent(self, 1);
                       const Tensor<T>& g = self.grad;
                       const std::size_t n = g.size();
                       auto ia = [&](std::size_t i) { return map_a.empty() ? i : map_a[i]; };
                       auto ib = [&](std::size_t i) { return map_b.empty() ? i : map_b[i]; };
                       if (pa.requires_grad) {
                         auto& ga = pa.grad_buffer();
                         if (op == BinOp::mul)
                           for (std::size_t i = 0; i < n; ++i) ga[ia(i)] += g[i] * pb.value[ib(i)];
                         else
                           for (std::size_t i = 0; i < n; ++i) ga[ia(i)] += g[i];
                       }
                       if (pb.requires_grad) {
                         auto& gb = pb.grad_buffer();
                         if (op == BinOp::mul)
                           for (std::size_t i = 0; i < n; ++i) gb[ib(i)] += g[i] * pa.value[ia(i)];
                         else if (op == BinOp::sub)
                           for (std::size_t i = 0; i < n; ++i) gb[ib(i)] -= g[i];
                         else
                           for (std::size_t i = 0; i < n; ++i) gb[ib(i)] += g[i];
                       }
                     });
}

// Pointwise map with derivative f'(x, y) expressed from input and output.
template <class T, class F, class DF>
Var<T> unary(const Var<T>& x, F f, DF df) {
  Tensor<T> out(x.shape());
  const auto& v = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(v[i]);
  return make_result(std::move(out), {x}, [df](Node<T>& self) {
    Node<T>& p = parent(self, 0);
    auto& gp = p.grad_buffer();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

}  // namespace detail

template <class T> Var<T> add(const Var<T>& a, const Var<T>& b) { return detail::binary(a, b, detail::BinOp::add); }
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b) { return detail::binary(a, b, detail::BinOp::sub); }
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b) { return detail::binary(a, b, detail::BinOp::mul); }
template <class T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <class T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <class T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }

template <class T>
Var<T> scale(const Var<T>& x, T s) {
  return detail::unary(x, [s](T v) { return s * v; }, [s](T, T) { return s; });
}

template <class T>
Var<T> add_scalar(const Var<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
Var<T> square(const Var<T>& x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Var<T> sin(const Var<T>& x) {
  return detail::unary(x, [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); });
}

template <class T>
Var<T> cos(const Var<T>& x) {
  return detail::unary(x, [](T v) { return std::cos(v); }, [](T v, T) { return -std::sin(v); });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return detail::unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

// Exact (erf) GELU.
template <class T>
Var<T> gelu(const Var<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return detail::unary(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) { return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v); });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  kernels::acc_t<T> s = 0;
  for (T v : x.value().data()) s += v;
  return make_result(Tensor<T>::scalar(static_cast<T>(s)), {x}, [](Node<T>& self) {
    Node<T>& p = detail::parent(self, 0);
    auto& gp = p.grad_buffer();
    const T g = self.grad[0];
    for (auto& v : gp.storage()) v += g;
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// Sum over one axis (removed from the shape; a rank-1 input yields shape [1]).
template <class T>
Var<T> sum_axis(const Var<T>& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("sum_axis: axis out of range for " + to_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape os;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) os.push_back(s[i]);
  if (os.empty()) os.push_back(1);
  std::vector<kernels::acc_t<T>> acc(outer * inner, 0);
  const auto& v = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < len; ++a)
      for (std::size_t i = 0; i < inner; ++i) acc[o * inner + i] += v[(o * len + a) * inner + i];
  Tensor<T> out(os);
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<T>(acc[i]);
  return make_result(std::move(out), {x}, [outer, inner, len](Node<T>& self) {
    auto& gp = detail::parent(self, 0).grad_buffer();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t a = 0; a < len; ++a)
        for (std::size_t i = 0; i < inner; ++i) gp[(o * len + a) * inner + i] += self.grad[o * inner + i];
  });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape s) {
  Tensor<T> out = x.value().reshaped(std::move(s));
  return make_result(std::move(out), {x}, [](Node<T>& self) {
    detail::accumulate(detail::parent(self, 0), self.grad);
  });
}

template <class T>
Var<T> permute(const Var<T>& x, std::vector<std::size_t> perm) {
  Tensor<T> out = kernels::permute(x.value(), perm);
  return make_result(std::move(out), {x}, [perm = std::move(perm)](Node<T>& self) {
    detail::accumulate(detail::parent(self, 0), kernels::permute(self.grad, kernels::inverse_perm(perm)));
  });
}

/// Swaps the first two axes.
template <class T>
Var<T> swap01(const Var<T>& x) {
  std::vector<std::size_t> p(x.rank());
  std::iota(p.begin(), p.end(), 0);
  std::swap(p[0], p[1]);
  return permute(x, p);
}

/// op(a)·op(b) for 2-D operands.
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul expects 2-D operands, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t k = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  if (k != kb)
    throw ShapeError("matmul inner extent mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Tensor<T> out(Shape{m, n});
  kernels::gemm(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n, trans_a, trans_b, false);
  return make_result(std::move(out), {a, b}, [m, k, n, trans_a, trans_b](Node<T>& self) {
    Node<T>& pa = detail::parent(self, 0);
    Node<T>& pb = detail::parent(self, 1);
    const T* g = self.grad.data().data();
    if (pa.requires_grad) {
      T* ga = pa.grad_buffer().data().data();
      // C = A B: dA = G Bᵀ ; with transposes handled by storage layout
      if (!trans_a) kernels::gemm(g, pb.value.data().data(), ga, m, n, k, false, !trans_b, true);
      else kernels::gemm(pb.value.data().data(), g, ga, k, n, m, trans_b, true, true);
    }
    if (pb.requires_grad) {
      T* gb = pb.grad_buffer().data().data();
      if (!trans_b) kernels::gemm(pa.value.data().data(), g, gb, k, m, n, !trans_a, false, true);
      else kernels::gemm(g, pa.value.data().data(), gb, n, m, k, true, trans_a, true);
    }
  });
}

/// Batched op(a)·op(b) over a shared leading axis.
template <class T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
    throw ShapeError("bmm expects [B,m,k]x[B,k,n], got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const std::size_t B = a.dim(0);
  const std::size_t m = trans_a ? a.dim(2) : a.dim(1);
  const std::size_t k = trans_a ? a.dim(1) : a.dim(2);
  const std::size_t kb = trans_b ? b.dim(2) : b.dim(1);
  const std::size_t n = trans_b ? b.dim(1) : b.dim(2);
  if (k != kb)
    throw ShapeError("bmm inner extent mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Tensor<T> out(Shape{B, m, n});
  const std::size_t sa = m * k, sb = k * n, sc = m * n;
  for (std::size_t t = 0; t < B; ++t)
    kernels::gemm(a.value().data().data() + t * sa, b.value().data().data() + t * sb, out.data().data() + t * sc, m,
                  k, n, trans_a, trans_b, false);
  return make_result(std::move(out), {a, b}, [=](Node<T>& self) {
    Node<T>& pa = detail::parent(self, 0);
    Node<T>& pb = detail::parent(self, 1);
    for (std::size_t t = 0; t < B; ++t) {
      const T* g = self.grad.data().data() + t * sc;
      const T* av = pa.value.data().data() + t * sa;
      const T* bv = pb.value.data().data() + t * sb;
      if (pa.requires_grad) {
        T* ga = pa.grad_buffer().data().data() + t * sa;
        if (!trans_a) kernels::gemm(g, bv, ga, m, n, k, false, !trans_b, true);
        else kernels::gemm(bv, g, ga, k, n, m, trans_b, true, true);
      }
      if (pb.requires_grad) {
        T* gb = pb.grad_buffer().data().data() + t * sb;
        if (!trans_b) kernels::gemm(av, g, gb, k, m, n, !trans_a, false, true);
        else kernels::gemm(g, av, gb, n, m, k, true, trans_a, true);
      }
    }
  });
}

/// x[..., in] · wᵀ (+ b), with w stored [out × in].
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>* b = nullptr) {
  const std::size_t in = x.shape().back();
  if (w.rank() != 2 || w.dim(1) != in)
    throw ShapeError("linear: weight " + to_string(w.shape()) + " incompatible with input " + to_string(x.shape()));
  Shape os = x.shape();
  os.back() = w.dim(0);
  Var<T> y = matmul(reshape(x, Shape{x.size() / in, in}), w, false, true);
  if (b) y = add(y, *b);
  return reshape(y, os);
}

/// Concatenation along `axis`; all other extents must agree.
template <class T>
Var<T> concat(const std::vector<Var<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) throw ShapeError("concat shape mismatch: " + to_string(s0) + " vs " + to_string(s));
    lens.push_back(s[axis]);
    total += s[axis];
  }
  Shape os = s0;
  os[axis] = total;
  Tensor<T> out(os);
  std::size_t at = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const auto& v = xs[t].value();
    const std::size_t chunk = lens[t] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data().data() + o * chunk, chunk, out.data().data() + o * total * inner + at * inner);
    at += lens[t];
  }
  return make_result_n(std::move(out), xs, [outer, inner, total, lens](Node<T>& self) {
    std::size_t at = 0;
    for (std::size_t t = 0; t < lens.size(); ++t) {
      Node<T>& p = detail::parent(self, t);
      const std::size_t chunk = lens[t] * inner;
      if (p.requires_grad) {
        auto& gp = p.grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += self.grad[o * total * inner + at * inner + i];
      }
      at += lens[t];
    }
  });
}

/// Rows `begin..end` along `axis`.
template <class T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin > end || end > s[axis])
    throw ShapeError("slice out of range on shape " + to_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis], cnt = end - begin;
  Shape os = s;
  os[axis] = cnt;
  Tensor<T> out(os);
  const auto& v = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(v.data().data() + (o * len + begin) * inner, cnt * inner, out.data().data() + o * cnt * inner);
  return make_result(std::move(out), {x}, [outer, inner, len, begin, cnt](Node<T>& self) {
    auto& gp = detail::parent(self, 0).grad_buffer();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < cnt * inner; ++i) gp[(o * len + begin) * inner + i] += self.grad[o * cnt * inner + i];
  });
}

/// Gathers entries `index[t]` along `axis`.
template <class T>
Var<T> index_select(const Var<T>& x, std::size_t axis, std::vector<std::size_t> index) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("index_select: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  for (std::size_t i : index)
    if (i >= len) throw ShapeError("index_select: index out of range");
  Shape os = s;
  os[axis] = index.size();
  Tensor<T> out(os);
  const auto& v = x.value();
  const std::size_t cnt = index.size();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t t = 0; t < cnt; ++t)
      std::copy_n(v.data().data() + (o * len + index[t]) * inner, inner, out.data().data() + (o * cnt + t) * inner);
  return make_result(std::move(out), {x}, [outer, inner, len, index = std::move(index)](Node<T>& self) {
    auto& gp = detail::parent(self, 0).grad_buffer();
    const std::size_t cnt = index.size();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t t = 0; t < cnt; ++t)
        for (std::size_t i = 0; i < inner; ++i)
          gp[(o * len + index[t]) * inner + i] += self.grad[(o * cnt + t) * inner + i];
  });
}

/// Softmax over the last axis, max-shifted.
template <class T>
Var<T> softmax(const Var<T>& x) {
  const std::size_t n = x.shape().back();
  if (n == 0) throw ShapeError("softmax over an empty axis");
  const std::size_t rows = x.size() / n;
  Tensor<T> out(x.shape());
  const auto& v = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = v.data().data() + r * n;
    T* o = out.data().data() + r * n;
    T mx = *std::max_element(in, in + n);
    kernels::acc_t<T> z = 0;
    for (std::size_t i = 0; i < n; ++i) z += (o[i] = std::exp(in[i] - mx));
    for (std::size_t i = 0; i < n; ++i) o[i] = static_cast<T>(o[i] / z);
  }
  return make_result(std::move(out), {x}, [rows, n](Node<T>& self) {
    auto& gp = detail::parent(self, 0).grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data().data() + r * n;
      const T* g = self.grad.data().data() + r * n;
      T dot = 0;
      for (std::size_t i = 0; i < n; ++i) dot += y[i] * g[i];
      for (std::size_t i = 0; i < n; ++i) gp[r * n + i] += y[i] * (g[i] - dot);
    }
  });
}

/// Softmax along an explicit axis.
template <class T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  if (axis + 1 == x.rank()) return softmax(x);
  if (axis >= x.rank()) throw ShapeError("softmax: axis out of range");
  std::vector<std::size_t> p(x.rank());
  std::iota(p.begin(), p.end(), 0);
  std::swap(p[axis], p.back());
  return permute(softmax(permute(x, p)), p);
}

/// Normalizes over the last axis, then applies gain/bias.
template <class T>
Var<T> layernorm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  const std::size_t c = x.shape().back();
  if (c == 0) throw ShapeError("layernorm over an empty axis");
  if (gain.size() != c || bias.size() != c)
    throw ShapeError("layernorm affine params must have " + std::to_string(c) + " entries");
  const std::size_t rows = x.size() / c;
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(rows);
  const auto& v = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = v.data().data() + r * c;
    T mu = 0;
    for (std::size_t i = 0; i < c; ++i) mu += in[i];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t i = 0; i < c; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<T>(c);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < c; ++i) xhat[r * c + i] = (in[i] - mu) * inv_std[r];
  }
  Tensor<T> out(x.shape());
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < c; ++i) out[r * c + i] = xhat[r * c + i] * gv[i] + bv[i];
  return make_result(std::move(out), {x, gain, bias},
                     [rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                       Node<T>& px = detail::parent(self, 0);
                       Node<T>& pg = detail::parent(self, 1);
                       Node<T>& pb = detail::parent(self, 2);
                       const auto& g = self.grad;
                       if (pg.requires_grad) {
                         auto& gg = pg.grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t i = 0; i < c; ++i) gg[i] += g[r * c + i] * xhat[r * c + i];
                       }
                       if (pb.requires_grad) {
                         auto& gb = pb.grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t i = 0; i < c; ++i) gb[i] += g[r * c + i];
                       }
                       if (px.requires_grad) {
                         auto& gx = px.grad_buffer();
                         const auto& gv = pg.value;
                         for (std::size_t r = 0; r < rows; ++r) {
                           T m1 = 0, m2 = 0;
                           for (std::size_t i = 0; i < c; ++i) {
                             const T d = g[r * c + i] * gv[i];
                             m1 += d;
                             m2 += d * xhat[r * c + i];
                           }
                           m1 /= static_cast<T>(c);
                           m2 /= static_cast<T>(c);
                           for (std::size_t i = 0; i < c; ++i) {
                             const T d = g[r * c + i] * gv[i];
                             gx[r * c + i] += inv_std[r] * (d - m1 - xhat[r * c + i] * m2);
                           }
                         }
                       }
                     });
}

/// Inverted dropout with a caller-supplied generator; identity when p == 0.
template <class T>
Var<T> dropout(const Var<T>& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  Tensor<T> mask(x.shape());
  const T s = T(1) / T(1.0 - p);
  for (auto& m : mask.storage()) m = keep(rng) ? s : T(0);
  return mul(x, Var<T>::constant(std::move(mask)));
}

/// Mean cross-entropy of logits [B×K] against integer labels.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ShapeError("cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  Tensor<T> prob(logits.shape());
  T loss = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= K) throw std::out_of_range("label out of range");
    const T* in = logits.value().data().data() + b * K;
    const T mx = *std::max_element(in, in + K);
    T z = 0;
    for (std::size_t k = 0; k < K; ++k) z += (prob[b * K + k] = std::exp(in[k] - mx));
    for (std::size_t k = 0; k < K; ++k) prob[b * K + k] /= z;
    loss -= (in[labels[b]] - mx) - std::log(z);
  }
  loss /= static_cast<T>(B);
  return make_result(Tensor<T>::scalar(loss), {logits}, [B, K, labels, prob = std::move(prob)](Node<T>& self) {
    auto& gp = detail::parent(self, 0).grad_buffer();
    const T g = self.grad[0] / static_cast<T>(B);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < K; ++k)
        gp[b * K + k] += g * (prob[b * K + k] - (static_cast<int>(k) == labels[b] ? T(1) : T(0)));
  });
}

}  // namespace wsfn
