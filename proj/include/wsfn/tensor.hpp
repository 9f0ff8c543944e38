// Dense row-major tensors with value semantics.
#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace wsfn {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline Shape row_major_strides(const Shape& s) {
  Shape st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel(shape_) != data_.size())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s), T(0)); }
  static Tensor ones(Shape s) { return Tensor(std::move(s), T(1)); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }
  static Tensor vector(std::initializer_list<T> v) { return Tensor(Shape{v.size()}, std::vector<T>(v)); }
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    std::vector<T> d;
    const std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw ShapeError("ragged matrix literal");
      d.insert(d.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), cols}, std::move(d));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw ShapeError("index rank mismatch for shape " + to_string(shape_));
    std::size_t off = 0, d = 0;
    for (std::size_t i : idx) {
      if (i >= shape_[d]) throw std::out_of_range("tensor index out of range");
      off = off * shape_[d] + i;
      ++d;
    }
    return off;
  }
  T& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
  const T& at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

  Tensor reshaped(Shape s) const& {
    Tensor r = *this;
    r.reshape(std::move(s));
    return r;
  }
  Tensor reshaped(Shape s) && {
    reshape(std::move(s));
    return std::move(*this);
  }
  void reshape(Shape s) {
    if (numel(s) != data_.size())
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(s));
    shape_ = std::move(s);
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max<T>(m, std::abs(a[i] - b[i]));
  return m;
}

template <class T>
T max_abs(const Tensor<T>& a) {
  T m = 0;
  for (T v : a.data()) m = std::max<T>(m, std::abs(v));
  return m;
}

namespace kernels {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MMap = Eigen::Map<RowMat<T>>;

/// Accumulator for reductions: float sums run in double, so a reduction's
/// rounded result does not depend on the order of its terms.
template <class T>
using acc_t = std::conditional_t<std::is_same_v<T, float>, double, T>;

/// out[m×n] (+)= op(a) · op(b); a is stored [m×k] (or [k×m] when trans_a).
template <class T>
void gemm(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n, bool trans_a,
          bool trans_b, bool accumulate) {
  if constexpr (!std::is_same_v<acc_t<T>, T>) {
    if (!accumulate) {
      // Forward products: float × float is exact in double.
      std::vector<acc_t<T>> ad(a, a + m * k), bd(b, b + k * n), od(m * n);
      gemm(ad.data(), bd.data(), od.data(), m, k, n, trans_a, trans_b, false);
      std::transform(od.begin(), od.end(), out, [](acc_t<T> v) { return static_cast<T>(v); });
      return;
    }
  }
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  MMap<T> C(out, ei(m), ei(n));
  if (!trans_a && !trans_b) {
    CMap<T> A(a, ei(m), ei(k)), B(b, ei(k), ei(n));
    if (accumulate) C.noalias() += A * B; else C.noalias() = A * B;
  } else if (trans_a && !trans_b) {
    CMap<T> A(a, ei(k), ei(m)), B(b, ei(k), ei(n));
    if (accumulate) C.noalias() += A.transpose() * B; else C.noalias() = A.transpose() * B;
  } else if (!trans_a && trans_b) {
    CMap<T> A(a, ei(m), ei(k)), B(b, ei(n), ei(k));
    if (accumulate) C.noalias() += A * B.transpose(); else C.noalias() = A * B.transpose();
  } else {
    CMap<T> A(a, ei(k), ei(m)), B(b, ei(n), ei(k));
    if (accumulate) C.noalias() += A.transpose() * B.transpose(); else C.noalias() = A.transpose() * B.transpose();
  }
}

// Generic axis permutation: out.shape[i] = in.shape[perm[i]].
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) throw ShapeError("permute: axis count mismatch for " + to_string(x.shape()));
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (perm[i] >= r || seen[perm[i]]) throw ShapeError("permute: invalid axis permutation");
    seen[perm[i]] = true;
    out_shape[i] = x.dim(perm[i]);
  }
  const Shape in_strides = row_major_strides(x.shape());
  Shape src_strides(r);
  for (std::size_t i = 0; i < r; ++i) src_strides[i] = in_strides[perm[i]];
  Tensor<T> out(out_shape);
  if (out.size() == 0) return out;
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  const T* in = x.data().data();
  T* o = out.data().data();
  const std::size_t inner = r ? out_shape[r - 1] : 1;
  const std::size_t inner_stride = r ? src_strides[r - 1] : 0;
  for (std::size_t flat = 0; flat < out.size(); flat += inner) {
    for (std::size_t t = 0; t < inner; ++t) o[flat + t] = in[src + t * inner_stride];
    // advance the multi-index, skipping the innermost axis
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      src += src_strides[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_strides[d] * idx[d];
      idx[d] = 0;
    }
  }
  return out;
}

inline std::vector<std::size_t> inverse_perm(const std::vector<std::size_t>& p) {
  std::vector<std::size_t> inv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) inv[p[i]] = i;
  return inv;
}

}  // namespace kernels

/// Shape of `small` right-aligned against `big`; every axis equal or 1.
inline bool broadcastable_to(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  const std::size_t off = big.size() - small.size();
  for (std::size_t i = 0; i < small.size(); ++i)
    if (small[i] != big[off + i] && small[i] != 1) return false;
  return true;
}

/// For each flat index of `big`, the flat index into the broadcast `small`.
inline std::vector<std::size_t> broadcast_index(const Shape& small, const Shape& big) {
  const std::size_t n = numel(big);
  std::vector<std::size_t> map(n);
  const std::size_t off = big.size() - small.size();
  Shape sstr(big.size(), 0);
  const Shape raw = row_major_strides(small);
  for (std::size_t i = 0; i < small.size(); ++i) sstr[off + i] = small[i] == 1 ? 0 : raw[i];
  std::vector<std::size_t> idx(big.size(), 0);
  std::size_t s = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = s;
    for (std::size_t d = big.size(); d-- > 0;) {
      ++idx[d];
      s += sstr[d];
      if (idx[d] < big[d]) break;
      s -= sstr[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace wsfn
