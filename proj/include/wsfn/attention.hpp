// Dot-product attention, single-query and batched multi-head forms.
#pragma once

#include <atomic>
#include <cmath>

#include "wsfn/ops.hpp"

namespace wsfn {

/// Global switch for 1/sqrt(d) logit scaling (on by default).
inline std::atomic<bool>& scaled_dot_product() {
  static std::atomic<bool> flag{true};
  return flag;
}

/// Restores the previous scaling mode on destruction.
class ScopedScaling {
 public:
  explicit ScopedScaling(bool on) : prev_(scaled_dot_product().exchange(on)) {}
  ~ScopedScaling() { scaled_dot_product().store(prev_); }
  ScopedScaling(const ScopedScaling&) = delete;
  ScopedScaling& operator=(const ScopedScaling&) = delete;

 private:
  bool prev_;
};

template <class T>
T logit_scale(std::size_t dim) {
  return scaled_dot_product().load() ? T(1) / std::sqrt(static_cast<T>(dim)) : T(1);
}

/// Instrumentation: largest attention logit matrix (heads × queries × keys)
/// materialized on this thread since the last reset.
struct AttentionStats {
  std::size_t peak_logits = 0;
  std::size_t calls = 0;
};

inline AttentionStats& attention_stats() {
  thread_local AttentionStats stats;
  return stats;
}

inline void reset_attention_stats() { attention_stats() = {}; }

/// Attn(q, {(k_p, v_p)}) = Σ_p v_p softmax_p(scale · q·k_p), with q and k_p
/// compared by flattened dot product.
template <class T>
Var<T> attn(const Var<T>& q, const std::vector<std::pair<Var<T>, Var<T>>>& kv) {
  if (kv.empty()) throw ShapeError("attention over an empty key-value set");
  const Shape& vs = kv.front().second.shape();
  std::vector<Var<T>> keys, values;
  for (const auto& [k, v] : kv) {
    if (k.shape() != q.shape())
      throw ShapeError("attention key shape " + to_string(k.shape()) + " differs from query " + to_string(q.shape()));
    if (v.shape() != vs) throw ShapeError("attention values must share one shape");
    keys.push_back(reshape(k, Shape{1, k.size()}));
    values.push_back(reshape(v, Shape{1, v.size()}));
  }
  Var<T> K = concat(keys, 0);
  Var<T> V = concat(values, 0);
  Var<T> logits = scale(matmul(reshape(q, Shape{1, q.size()}), K, false, true), logit_scale<T>(q.size()));
  Var<T> out = matmul(softmax(logits), V);
  return reshape(out, vs);
}

/// Multi-head variant: the trailing channel axis of q, k, v is split into
/// `heads` groups, each group attends separately, and results are concatenated.
template <class T>
Var<T> attn_multihead(const Var<T>& q, const std::vector<std::pair<Var<T>, Var<T>>>& kv, std::size_t heads) {
  if (heads == 1) return attn(q, kv);
  const std::size_t c = q.shape().back();
  if (c % heads) throw ShapeError("head count must divide the channel axis");
  const std::size_t dh = c / heads;
  std::vector<Var<T>> outs;
  const std::size_t vc = kv.empty() ? 0 : kv.front().second.shape().back();
  if (vc % heads) throw ShapeError("head count must divide the value channel axis");
  const std::size_t dv = vc / heads;
  const std::size_t qa = q.rank() - 1;
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<std::pair<Var<T>, Var<T>>> sub;
    for (const auto& [k, v] : kv)
      sub.emplace_back(slice(k, k.rank() - 1, h * dh, (h + 1) * dh), slice(v, v.rank() - 1, h * dv, (h + 1) * dv));
    outs.push_back(attn(slice(q, qa, h * dh, (h + 1) * dh), sub));
  }
  return concat(outs, outs.front().rank() - 1);
}

/// Batched attention: q [H×Nq×D], k [H×Nk×D], v [H×Nk×Dv] → [H×Nq×Dv].
/// Keys are compared by their full flattened length D.
template <class T>
Var<T> batched_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::mt19937_64* rng = nullptr,
                         double dropout_p = 0.0) {
  if (k.dim(1) == 0) throw ShapeError("attention over an empty key-value set");
  auto& st = attention_stats();
  st.peak_logits = std::max(st.peak_logits, q.dim(0) * q.dim(1) * k.dim(1));
  ++st.calls;
  Var<T> a = softmax(scale(bmm(q, k, false, true), logit_scale<T>(q.dim(2))));
  if (rng && dropout_p > 0.0) a = dropout(a, dropout_p, *rng);
  return bmm(a, v);
}

/// [N, len, c] → [H, N, len·c/H]: per-head flattening of whole arrays.
template <class T>
Var<T> split_heads(const Var<T>& x, std::size_t heads) {
  const std::size_t N = x.dim(0), len = x.dim(1), c = x.dim(2);
  if (c % heads) throw ShapeError("head count " + std::to_string(heads) + " must divide channels " + std::to_string(c));
  const std::size_t dh = c / heads;
  if (heads == 1) return reshape(x, Shape{1, N, len * c});
  Var<T> r = permute(reshape(x, Shape{N, len, heads, dh}), {2, 0, 1, 3});
  return reshape(r, Shape{heads, N, len * dh});
}

/// Inverse of split_heads.
template <class T>
Var<T> merge_heads(const Var<T>& x, std::size_t len, std::size_t c) {
  const std::size_t heads = x.dim(0), N = x.dim(1);
  if (heads == 1) return reshape(x, Shape{N, len, c});
  const std::size_t dh = c / heads;
  Var<T> r = permute(reshape(x, Shape{heads, N, len, dh}), {1, 2, 0, 3});
  return reshape(r, Shape{N, len, c});
}

}  // namespace wsfn
