// Copyright 2026 The vilas Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vilas/numerics/tensor.hpp"
#include "vilas/rng.hpp"

// Differentiable ops. Layout conventions: sequences are [time, channels],
// 2-D convolution works on [channels, height, width], "last axis" ops
// (softmax, layer_norm) normalize over the trailing extent.
namespace vilas {

namespace detail {

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

[[noreturn]] inline void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

inline std::size_t prod(const Shape& s, std::size_t b, std::size_t e) {
  std::size_t p = 1;
  for (std::size_t i = b; i < e; ++i) p *= s[i];
  return p;
}

// Elementwise binary op where one operand's shape is a suffix of the other's
// (broadcast over leading axes).
template <class T, class F, class GA, class GB>
Tensor<T> broadcast_binary(const char* op, const Tensor<T>& a,
                           const Tensor<T>& b, F f, GA ga, GB gb) {
  const bool a_big = is_suffix(b.shape(), a.shape());
  if (!a_big && !is_suffix(a.shape(), b.shape())) {
    shape_fail(op, "cannot broadcast " + shape_str(a.shape()) + " with " +
                       shape_str(b.shape()));
  }
  const Shape out_shape = a_big ? a.shape() : b.shape();
  const std::size_t n = shape_numel(out_shape);
  const std::size_t na = a.numel(), nb = b.numel();
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i % na], bv[i % nb]);
  return make_result<T>(
      op, out_shape, std::move(out), {&a, &b},
      [n, na, nb, ga, gb](Node<T>& self) {
        const auto& x = self.parents[0]->value;
        const auto& y = self.parents[1]->value;
        auto* gx = parent_grad(self, 0);
        auto* gy = parent_grad(self, 1);
        for (std::size_t i = 0; i < n; ++i) {
          const T g = self.grad[i];
          const T xv = x[i % na], yv = y[i % nb];
          if (gx) (*gx)[i % na] += ga(xv, yv, g);
          if (gy) (*gy)[i % nb] += gb(xv, yv, g);
        }
      });
}

template <class T, class F, class DF>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, DF df) {
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result<T>(op, x.shape(), std::move(out), {&x},
                        [df](Node<T>& self) {
                          const auto& xv = self.parents[0]->value;
                          auto* gx = parent_grad(self, 0);
                          if (!gx) return;
                          for (std::size_t i = 0; i < xv.size(); ++i) {
                            (*gx)[i] += self.grad[i] * df(xv[i], self.value[i]);
                          }
                        });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T g) { return g; }, [](T, T, T g) { return g; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T g) { return g; }, [](T, T, T g) { return -g; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T, T y, T g) { return g * y; }, [](T x, T, T g) { return g * x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T, T y, T g) { return g / y; },
      [](T x, T y, T g) { return -g * x / (y * y); });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return detail::unary(
      "scale", x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary(
      "add_scalar", x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      "sigmoid", x,
      [](T v) {
        return v >= 0 ? T(1) / (T(1) + std::exp(-v))
                      : std::exp(v) / (T(1) + std::exp(v));
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      "relu", x, [](T v) { return v > 0 ? v : T(0); },
      [](T v, T) { return v > 0 ? T(1) : T(0); });
}

// x * sigmoid(x)
template <class T>
Tensor<T> swish(const Tensor<T>& x) {
  return detail::unary(
      "swish", x,
      [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(
      "tanh", x, [](T v) { return std::tanh(v); },
      [](T, T y) { return T(1) - y * y; });
}

// Subgradient 0 at the origin.
template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); });
}

// ----------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.values()) s += v;
  return detail::make_result<T>("sum", Shape{}, {s}, {&x},
                                [](detail::Node<T>& self) {
                                  if (auto* gx = detail::parent_grad(self, 0)) {
                                    for (auto& g : *gx) g += self.grad[0];
                                  }
                                });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) detail::shape_fail("mean", "empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// Sum over the leading axis weighted by w: out = sum_n w[n] * x[n, ...].
template <class T>
Tensor<T> weighted_sum(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.rank() < 1 || w.rank() != 1 || w.dim(0) != x.dim(0)) {
    detail::shape_fail("weighted_sum", "x " + shape_str(x.shape()) +
                                           " vs weights " + shape_str(w.shape()));
  }
  const std::size_t n = x.dim(0), inner = x.numel() / std::max<std::size_t>(n, 1);
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  std::vector<T> out(shape_numel(out_shape), T(0));
  const auto& xv = x.values();
  const auto& wv = w.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < inner; ++j) out[j] += wv[i] * xv[i * inner + j];
  return detail::make_result<T>(
      "weighted_sum", out_shape, std::move(out), {&x, &w},
      [n, inner](detail::Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        const auto& wv = self.parents[1]->value;
        auto* gx = detail::parent_grad(self, 0);
        auto* gw = detail::parent_grad(self, 1);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < inner; ++j) {
            if (gx) (*gx)[i * inner + j] += wv[i] * self.grad[j];
            if (gw) (*gw)[i] += xv[i * inner + j] * self.grad[j];
          }
      });
}

// ------------------------------------------------------------- linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    detail::shape_fail("matmul", shape_str(a.shape()) + " x " +
                                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  const T* A = a.values().data();
  const T* B = b.values().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      if (av == T(0)) continue;
      T* row = &out[i * n];
      const T* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  return detail::make_result<T>(
      "matmul", Shape{m, n}, std::move(out), {&a, &b},
      [m, k, n](detail::Node<T>& self) {
        const T* A = self.parents[0]->value.data();
        const T* B = self.parents[1]->value.data();
        const T* G = self.grad.data();
        if (auto* ga = detail::parent_grad(self, 0)) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              T s = 0;
              for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
              (*ga)[i * k + p] += s;
            }
        }
        if (auto* gb = detail::parent_grad(self, 1)) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const T av = A[i * k + p];
              T* grow = &(*gb)[p * n];
              for (std::size_t j = 0; j < n; ++j) grow[j] += av * G[i * n + j];
            }
        }
      });
}

// x [n, in] . w [in, out] + b [out]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0) || b.rank() != 1 ||
      b.dim(0) != w.dim(1)) {
    detail::shape_fail("linear", "x " + shape_str(x.shape()) + ", w " +
                                     shape_str(w.shape()) + ", b " +
                                     shape_str(b.shape()));
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  std::vector<T> out(m * n);
  const T* X = x.values().data();
  const T* W = w.values().data();
  const T* Bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = &out[i * n];
    for (std::size_t j = 0; j < n; ++j) row[j] = Bv[j];
    for (std::size_t p = 0; p < k; ++p) {
      const T xv = X[i * k + p];
      if (xv == T(0)) continue;
      const T* wrow = W + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += xv * wrow[j];
    }
  }
  return detail::make_result<T>(
      "linear", Shape{m, n}, std::move(out), {&x, &w, &b},
      [m, k, n](detail::Node<T>& self) {
        const T* X = self.parents[0]->value.data();
        const T* W = self.parents[1]->value.data();
        const T* G = self.grad.data();
        if (auto* gx = detail::parent_grad(self, 0)) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              T s = 0;
              const T* wrow = W + p * n;
              for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * wrow[j];
              (*gx)[i * k + p] += s;
            }
        }
        if (auto* gw = detail::parent_grad(self, 1)) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const T xv = X[i * k + p];
              if (xv == T(0)) continue;
              T* grow = &(*gw)[p * n];
              for (std::size_t j = 0; j < n; ++j) grow[j] += xv * G[i * n + j];
            }
        }
        if (auto* gb = detail::parent_grad(self, 2)) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*gb)[j] += G[i * n + j];
        }
      });
}

// -------------------------------------------------------------- shape ops

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    detail::shape_fail("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return detail::make_result<T>("reshape", std::move(shape), x.values(), {&x},
                                [](detail::Node<T>& self) {
                                  if (auto* gx = detail::parent_grad(self, 0)) {
                                    for (std::size_t i = 0; i < gx->size(); ++i)
                                      (*gx)[i] += self.grad[i];
                                  }
                                });
}

// General axis permutation: out.shape[i] = x.shape[perm[i]].
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) detail::shape_fail("permute", "rank mismatch");
  std::vector<bool> used(r, false);
  for (auto p : perm) {
    if (p >= r || used[p]) detail::shape_fail("permute", "invalid permutation");
    used[p] = true;
  }
  Shape out_shape(r);
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dim(i);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(perm[i]);
  const std::size_t n = x.numel();
  // map[out_flat] = in_flat
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t in = 0;
    for (std::size_t i = 0; i < r; ++i) in += idx[i] * in_stride[perm[i]];
    map[o] = in;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<T> out(n);
  for (std::size_t o = 0; o < n; ++o) out[o] = x.values()[map[o]];
  return detail::make_result<T>("permute", out_shape, std::move(out), {&x},
                                [map = std::move(map)](detail::Node<T>& self) {
                                  if (auto* gx = detail::parent_grad(self, 0)) {
                                    for (std::size_t o = 0; o < map.size(); ++o)
                                      (*gx)[map[o]] += self.grad[o];
                                  }
                                });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) detail::shape_fail("transpose", "expects rank 2, got " + shape_str(x.shape()));
  return permute(x, {1, 0});
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) detail::shape_fail("concat", "no inputs");
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size()) detail::shape_fail("concat", "axis out of range");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) ok = false;
    if (!ok) {
      detail::shape_fail("concat", "extent mismatch " + shape_str(s0) + " vs " +
                                       shape_str(s) + " on axis " +
                                       std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = detail::prod(s0, 0, axis);
  const std::size_t inner = detail::prod(s0, axis + 1, s0.size());
  const std::size_t out_mid = out_shape[axis];
  std::vector<T> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const std::size_t mid = x.dim(axis);
    const auto& v = x.values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.begin() + o * mid * inner, mid * inner,
                  out.begin() + (o * out_mid + off) * inner);
    off += mid;
  }
  return detail::make_result<T>(
      "concat", out_shape, std::move(out), xs,
      [outer, inner, out_mid, offsets = std::move(offsets)](detail::Node<T>& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
          auto* g = detail::parent_grad(self, k);
          if (!g) continue;
          const std::size_t mid = g->size() / std::max<std::size_t>(outer * inner, 1);
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < mid * inner; ++i)
              (*g)[o * mid * inner + i] +=
                  self.grad[(o * out_mid + offsets[k]) * inner + i];
        }
      });
}

// Elements [begin, end) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin,
                std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    detail::shape_fail("slice", "range [" + std::to_string(begin) + "," +
                                    std::to_string(end) + ") on axis " +
                                    std::to_string(axis) + " of " + shape_str(s));
  }
  const std::size_t outer = detail::prod(s, 0, axis);
  const std::size_t inner = detail::prod(s, axis + 1, s.size());
  const std::size_t mid = s[axis], len = end - begin;
  Shape out_shape = s;
  out_shape[axis] = len;
  std::vector<T> out(outer * len * inner);
  const auto& v = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(v.begin() + (o * mid + begin) * inner, len * inner,
                out.begin() + o * len * inner);
  return detail::make_result<T>(
      "slice", out_shape, std::move(out), {&x},
      [outer, inner, mid, begin, len](detail::Node<T>& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < len * inner; ++i)
              (*g)[(o * mid + begin) * inner + i] += self.grad[o * len * inner + i];
        }
      });
}

// Rows of `table` [V, d] selected by ids -> [n, d].
template <class T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) detail::shape_fail("embedding", "table must be rank 2");
  const std::size_t V = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V) {
      detail::shape_fail("embedding", "id " + std::to_string(ids[i]) +
                                          " outside table of " + std::to_string(V));
    }
    std::copy_n(table.values().begin() + ids[i] * d, d, out.begin() + i * d);
  }
  return detail::make_result<T>("embedding", Shape{ids.size(), d}, std::move(out),
                                {&table}, [ids, d](detail::Node<T>& self) {
                                  if (auto* g = detail::parent_grad(self, 0)) {
                                    for (std::size_t i = 0; i < ids.size(); ++i)
                                      for (std::size_t j = 0; j < d; ++j)
                                        (*g)[ids[i] * d + j] += self.grad[i * d + j];
                                  }
                                });
}

// Constant tensor where masked positions hold a large negative number; added
// to attention logits.
template <class T>
Tensor<T> causal_mask(std::size_t n) {
  std::vector<T> m(n * n, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = T(-1e9);
  return Tensor<T>(Shape{n, n}, std::move(m));
}

// -------------------------------------------------------------- normalizers

template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() == 0) detail::shape_fail("softmax", "scalar input");
  const std::size_t d = x.shape().back(), rows = d ? x.numel() / d : 0;
  std::vector<T> out(x.numel());
  const auto& v = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = v[r * d];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, v[r * d + j]);
    T s = 0;
    for (std::size_t j = 0; j < d; ++j) s += out[r * d + j] = std::exp(v[r * d + j] - mx);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= s;
  }
  return detail::make_result<T>("softmax", x.shape(), std::move(out), {&x},
                                [rows, d](detail::Node<T>& self) {
                                  auto* g = detail::parent_grad(self, 0);
                                  if (!g) return;
                                  const auto& y = self.value;
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    T dot = 0;
                                    for (std::size_t j = 0; j < d; ++j)
                                      dot += self.grad[r * d + j] * y[r * d + j];
                                    for (std::size_t j = 0; j < d; ++j)
                                      (*g)[r * d + j] += y[r * d + j] * (self.grad[r * d + j] - dot);
                                  }
                                });
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  if (x.rank() == 0) detail::shape_fail("log_softmax", "scalar input");
  const std::size_t d = x.shape().back(), rows = d ? x.numel() / d : 0;
  std::vector<T> out(x.numel());
  const auto& v = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = v[r * d];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, v[r * d + j]);
    T s = 0;
    for (std::size_t j = 0; j < d; ++j) s += std::exp(v[r * d + j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = v[r * d + j] - lse;
  }
  return detail::make_result<T>("log_softmax", x.shape(), std::move(out), {&x},
                                [rows, d](detail::Node<T>& self) {
                                  auto* g = detail::parent_grad(self, 0);
                                  if (!g) return;
                                  const auto& y = self.value;
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    T gs = 0;
                                    for (std::size_t j = 0; j < d; ++j) gs += self.grad[r * d + j];
                                    for (std::size_t j = 0; j < d; ++j)
                                      (*g)[r * d + j] += self.grad[r * d + j] - std::exp(y[r * d + j]) * gs;
                                  }
                                });
}

// Normalizes over the last axis, then applies gamma/beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  if (x.rank() == 0 || gamma.shape() != Shape{x.shape().back()} ||
      beta.shape() != gamma.shape()) {
    detail::shape_fail("layer_norm", "x " + shape_str(x.shape()) + ", gamma " +
                                         shape_str(gamma.shape()) + ", beta " +
                                         shape_str(beta.shape()));
  }
  const std::size_t d = x.shape().back(), rows = x.numel() / d;
  std::vector<T> out(x.numel()), xhat(x.numel()), inv_std(rows);
  const auto& v = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (std::size_t r = 0; r < rows; ++r) {
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += v[r * d + j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const T c = v[r * d + j] - mu;
      var += c * c;
    }
    var /= static_cast<T>(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (v[r * d + j] - mu) * inv_std[r];
      out[r * d + j] = gv[j] * xhat[r * d + j] + bv[j];
    }
  }
  return detail::make_result<T>(
      "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
        const auto& gv = self.parents[1]->value;
        auto* gx = detail::parent_grad(self, 0);
        auto* gg = detail::parent_grad(self, 1);
        auto* gb = detail::parent_grad(self, 2);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* G = &self.grad[r * d];
          const T* xh = &xhat[r * d];
          if (gg)
            for (std::size_t j = 0; j < d; ++j) (*gg)[j] += G[j] * xh[j];
          if (gb)
            for (std::size_t j = 0; j < d; ++j) (*gb)[j] += G[j];
          if (gx) {
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const T dxh = G[j] * gv[j];
              m1 += dxh;
              m2 += dxh * xh[j];
            }
            m1 /= static_cast<T>(d);
            m2 /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j)
              (*gx)[r * d + j] += inv_std[r] * (G[j] * gv[j] - m1 - xh[j] * m2);
          }
        }
      });
}

// ------------------------------------------------------------- convolutions

// x [T, Cin], w [Cout, Cin/groups, K], b [Cout] -> [T', Cout],
// T' = floor((T + 2*padding - K) / stride) + 1.
template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::size_t stride = 1, std::size_t padding = 0,
                 std::size_t groups = 1) {
  if (x.rank() != 2 || w.rank() != 3 || b.rank() != 1 || stride == 0 || groups == 0) {
    detail::shape_fail("conv1d", "x " + shape_str(x.shape()) + ", w " +
                                     shape_str(w.shape()) + ", b " + shape_str(b.shape()));
  }
  const std::size_t Tn = x.dim(0), Cin = x.dim(1), Cout = w.dim(0), Cg = w.dim(1),
                    K = w.dim(2);
  if (Cin % groups || Cout % groups || Cg != Cin / groups || b.dim(0) != Cout ||
      Tn + 2 * padding < K) {
    detail::shape_fail("conv1d", "x " + shape_str(x.shape()) + ", w " +
                                     shape_str(w.shape()) + ", groups " +
                                     std::to_string(groups) + ", padding " +
                                     std::to_string(padding));
  }
  const std::size_t To = (Tn + 2 * padding - K) / stride + 1;
  const std::size_t Og = Cout / groups;
  std::vector<T> out(To * Cout);
  const auto& X = x.values();
  const auto& W = w.values();
  const auto& B = b.values();
  for (std::size_t t = 0; t < To; ++t)
    for (std::size_t co = 0; co < Cout; ++co) {
      const std::size_t g = co / Og;
      T s = B[co];
      for (std::size_t k = 0; k < K; ++k) {
        const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(t * stride + k) -
                                  static_cast<std::ptrdiff_t>(padding);
        if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(Tn)) continue;
        for (std::size_t c = 0; c < Cg; ++c)
          s += W[(co * Cg + c) * K + k] * X[ti * Cin + g * Cg + c];
      }
      out[t * Cout + co] = s;
    }
  return detail::make_result<T>(
      "conv1d", Shape{To, Cout}, std::move(out), {&x, &w, &b},
      [=](detail::Node<T>& self) {
        const auto& X = self.parents[0]->value;
        const auto& W = self.parents[1]->value;
        auto* gx = detail::parent_grad(self, 0);
        auto* gw = detail::parent_grad(self, 1);
        auto* gb = detail::parent_grad(self, 2);
        for (std::size_t t = 0; t < To; ++t)
          for (std::size_t co = 0; co < Cout; ++co) {
            const T G = self.grad[t * Cout + co];
            if (G == T(0)) continue;
            const std::size_t g = co / Og;
            if (gb) (*gb)[co] += G;
            for (std::size_t k = 0; k < K; ++k) {
              const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(t * stride + k) -
                                        static_cast<std::ptrdiff_t>(padding);
              if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(Tn)) continue;
              for (std::size_t c = 0; c < Cg; ++c) {
                const std::size_t wi = (co * Cg + c) * K + k;
                const std::size_t xi = ti * Cin + g * Cg + c;
                if (gw) (*gw)[wi] += G * X[xi];
                if (gx) (*gx)[xi] += G * W[wi];
              }
            }
          }
      });
}

// x [Cin, H, W], w [Cout, Cin, KH, KW], b [Cout] -> [Cout, H', W'].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::size_t stride = 1, std::size_t padding = 0) {
  if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1 || stride == 0 ||
      w.dim(1) != x.dim(0) || b.dim(0) != w.dim(0) ||
      x.dim(1) + 2 * padding < w.dim(2) || x.dim(2) + 2 * padding < w.dim(3)) {
    detail::shape_fail("conv2d", "x " + shape_str(x.shape()) + ", w " +
                                     shape_str(w.shape()) + ", b " + shape_str(b.shape()));
  }
  const std::size_t Cin = x.dim(0), H = x.dim(1), Wd = x.dim(2);
  const std::size_t Cout = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const std::size_t Ho = (H + 2 * padding - KH) / stride + 1;
  const std::size_t Wo = (Wd + 2 * padding - KW) / stride + 1;
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  std::vector<T> out(Cout * Ho * Wo);
  const auto& X = x.values();
  const auto& Wt = w.values();
  const auto& B = b.values();
  for (std::size_t co = 0; co < Cout; ++co)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        T s = B[co];
        for (std::size_t ci = 0; ci < Cin; ++ci)
          for (std::size_t kh = 0; kh < KH; ++kh) {
            const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(i * stride + kh) - pad;
            if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kw = 0; kw < KW; ++kw) {
              const std::ptrdiff_t wi = static_cast<std::ptrdiff_t>(j * stride + kw) - pad;
              if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(Wd)) continue;
              s += Wt[((co * Cin + ci) * KH + kh) * KW + kw] * X[(ci * H + hi) * Wd + wi];
            }
          }
        out[(co * Ho + i) * Wo + j] = s;
      }
  return detail::make_result<T>(
      "conv2d", Shape{Cout, Ho, Wo}, std::move(out), {&x, &w, &b},
      [=](detail::Node<T>& self) {
        const auto& X = self.parents[0]->value;
        const auto& Wt = self.parents[1]->value;
        auto* gx = detail::parent_grad(self, 0);
        auto* gw = detail::parent_grad(self, 1);
        auto* gb = detail::parent_grad(self, 2);
        for (std::size_t co = 0; co < Cout; ++co)
          for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
              const T G = self.grad[(co * Ho + i) * Wo + j];
              if (G == T(0)) continue;
              if (gb) (*gb)[co] += G;
              for (std::size_t ci = 0; ci < Cin; ++ci)
                for (std::size_t kh = 0; kh < KH; ++kh) {
                  const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(i * stride + kh) - pad;
                  if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(H)) continue;
                  for (std::size_t kw = 0; kw < KW; ++kw) {
                    const std::ptrdiff_t wi = static_cast<std::ptrdiff_t>(j * stride + kw) - pad;
                    if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(Wd)) continue;
                    const std::size_t widx = ((co * Cin + ci) * KH + kh) * KW + kw;
                    const std::size_t xidx = (ci * H + hi) * Wd + wi;
                    if (gw) (*gw)[widx] += G * X[xidx];
                    if (gx) (*gx)[xidx] += G * Wt[widx];
                  }
                }
            }
      });
}

// Max over time windows of x [T, C]. The last window may be partial, so the
// output length is ceil((T - kernel) / stride) + 1 (ceil(T / k) for k == s).
template <class T>
Tensor<T> max_pool1d(const Tensor<T>& x, std::size_t kernel, std::size_t stride) {
  if (x.rank() != 2 || kernel == 0 || stride == 0 || x.dim(0) == 0) {
    detail::shape_fail("max_pool1d", "x " + shape_str(x.shape()));
  }
  const std::size_t Tn = x.dim(0), C = x.dim(1);
  const std::size_t To = Tn <= kernel ? 1 : (Tn - kernel + stride - 1) / stride + 1;
  std::vector<T> out(To * C);
  std::vector<std::size_t> arg(To * C);
  const auto& X = x.values();
  for (std::size_t t = 0; t < To; ++t) {
    const std::size_t lo = t * stride, hi = std::min(Tn, lo + kernel);
    for (std::size_t c = 0; c < C; ++c) {
      std::size_t best = lo * C + c;
      for (std::size_t s = lo + 1; s < hi; ++s)
        if (X[s * C + c] > X[best]) best = s * C + c;
      out[t * C + c] = X[best];
      arg[t * C + c] = best;
    }
  }
  return detail::make_result<T>("max_pool1d", Shape{To, C}, std::move(out), {&x},
                                [arg = std::move(arg)](detail::Node<T>& self) {
                                  if (auto* g = detail::parent_grad(self, 0)) {
                                    for (std::size_t i = 0; i < arg.size(); ++i)
                                      (*g)[arg[i]] += self.grad[i];
                                  }
                                });
}

// Inverted dropout driven by an explicit stream; identity for p == 0.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw NumericError("dropout: rate must be < 1");
  const T keep_scale = T(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng.bernoulli(p) ? T(0) : keep_scale;
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * mask[i];
  return detail::make_result<T>("dropout", x.shape(), std::move(out), {&x},
                                [mask = std::move(mask)](detail::Node<T>& self) {
                                  if (auto* g = detail::parent_grad(self, 0)) {
                                    for (std::size_t i = 0; i < mask.size(); ++i)
                                      (*g)[i] += self.grad[i] * mask[i];
                                  }
                                });
}

}  // namespace vilas
