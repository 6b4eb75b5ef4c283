#pragma once

// Differentiable operations over scd::Tensor.
//
// Broadcasting is limited to leading axes: a binary op accepts either equal
// shapes or a right operand whose shape is a suffix of the left operand's.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "scd/blas.hpp"
#include "scd/tensor.hpp"

namespace scd {

namespace detail {

inline bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

/// Sizes of (outer, axis, inner) when viewing `shape` around `axis`.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

template <typename T>
void check_broadcast(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!is_suffix(a.shape(), b.shape())) {
    throw DimensionError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()) + " are not broadcastable");
  }
}

template <typename T, typename Fwd, typename Da, typename Db>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, Da da,
                 Db db) {
  check_broadcast(a, b, name);
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<T> out(n);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(pa[i], pb[i % m]);
  return make_result<T>(a.shape(), std::move(out), {a, b}, [n, m, da, db](Node<T>& o) {
    const T* g = o.grad.data();
    const T* xa = o.inputs[0]->data.data();
    const T* xb = o.inputs[1]->data.data();
    if (T* ga = input_grad(o, 0)) {
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * da(xa[i], xb[i % m]);
    }
    if (T* gb = input_grad(o, 1)) {
      for (std::size_t i = 0; i < n; ++i) gb[i % m] += g[i] * db(xa[i], xb[i % m]);
    }
  });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const std::size_t n = x.size();
  std::vector<T> out(n);
  const T* px = x.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(px[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, [n, deriv](Node<T>& o) {
    const T* g = o.grad.data();
    const T* xi = o.inputs[0]->data.data();
    const T* yo = o.data.data();
    if (T* gx = input_grad(o, 0)) {
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * deriv(xi[i], yo[i]);
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!detail::is_suffix(a.shape(), b.shape()) && detail::is_suffix(b.shape(), a.shape())) {
    return add(b, a);
  }
  return detail::binary<T>(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{1}; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{-1}; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (!detail::is_suffix(a.shape(), b.shape()) && detail::is_suffix(b.shape(), a.shape())) {
    return mul(b, a);
  }
  return detail::binary<T>(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T{1} / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return detail::unary<T>(
      x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> shift(const Tensor<T>& x, T offset) {
  return detail::unary<T>(
      x, [offset](T v) { return v + offset; }, [](T, T) { return T{1}; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return T{1} / (T{1} + std::exp(-v)); },
      [](T, T y) { return y * (T{1} - y); });
}

/// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return detail::unary<T>(
      x, [](T v) { return T(0.5) * v * (T{1} + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        return T(0.5) * (T{1} + std::erf(v * inv_sqrt2)) +
               v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x.data()[i] > T{0})) {
      throw DomainError("log of non-positive value " + std::to_string(x.data()[i]) +
                        " at flat index " + std::to_string(i));
    }
  }
  return detail::unary<T>(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

/// Gradient passes only where lo <= x <= hi.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  if (lo > hi) throw ParameterError("clamp: lo > hi");
  return detail::unary<T>(
      x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T{1} : T{0}; });
}

/// Identity forward, zero gradient backward.
template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
  return x.detach();
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " +
                         to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  const std::size_t n = x.size();
  return detail::make_result<T>(std::move(shape), std::move(out), {x}, [n](Node<T>& o) {
    if (T* gx = detail::input_grad(o, 0)) {
      for (std::size_t i = 0; i < n; ++i) gx[i] += o.grad[i];
    }
  });
}

/// General axis permutation: out.shape[i] = x.shape[perm[i]].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) throw DimensionError("permute: permutation rank mismatch");
  std::vector<bool> used(r, false);
  for (auto p : perm) {
    if (p >= r || used[p]) throw IndexError("permute: invalid permutation");
    used[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[perm[i]];
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.shape()[i];

  // map[out_flat] = in_flat
  const std::size_t n = x.size();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[perm[i]];
    map[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<T> out(n);
  const T* px = x.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = px[map[i]];
  return detail::make_result<T>(std::move(out_shape), std::move(out), {x},
                                [map = std::move(map)](Node<T>& o) {
                                  if (T* gx = detail::input_grad(o, 0)) {
                                    for (std::size_t i = 0; i < map.size(); ++i)
                                      gx[map[i]] += o.grad[i];
                                  }
                                });
}

/// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  const std::size_t r = x.rank();
  if (r < 2) throw DimensionError("transpose needs rank >= 2, got " + to_string(x.shape()));
  std::vector<std::size_t> perm(r);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::swap(perm[r - 1], perm[r - 2]);
  return permute(x, perm);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const std::size_t r = parts[0].rank();
  const std::size_t ax = detail::normalize_axis(axis, r);
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == r;
    for (std::size_t i = 0; ok && i < r; ++i) {
      if (i != ax && p.shape()[i] != parts[0].shape()[i]) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat: shape " + to_string(p.shape()) + " incompatible with " +
                           to_string(parts[0].shape()) + " along axis " + std::to_string(ax));
    }
    out_shape[ax] += p.shape()[ax];
  }
  const auto view = detail::axis_view(out_shape, ax);
  std::vector<std::size_t> widths;  // contiguous chunk per outer index
  for (const auto& p : parts) widths.push_back(p.shape()[ax] * view.inner);
  const std::size_t row = view.extent * view.inner;
  std::vector<T> out(numel(out_shape));
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].data().data();
    for (std::size_t o = 0; o < view.outer; ++o) {
      std::copy_n(src + o * widths[k], widths[k], out.data() + o * row + col);
    }
    col += widths[k];
  }
  return detail::make_result<T>(std::move(out_shape), std::move(out), parts,
                                [widths, row, outer = view.outer](Node<T>& o) {
                                  std::size_t c = 0;
                                  for (std::size_t k = 0; k < widths.size(); ++k) {
                                    if (T* g = detail::input_grad(o, k)) {
                                      for (std::size_t i = 0; i < outer; ++i)
                                        for (std::size_t j = 0; j < widths[k]; ++j)
                                          g[i * widths[k] + j] += o.grad[i * row + c + j];
                                    }
                                    c += widths[k];
                                  }
                                });
}

/// Repeats a tensor whose leading extent is 1 `count` times along axis 0.
template <typename T>
Tensor<T> expand_rows(const Tensor<T>& x, std::size_t count) {
  if (x.rank() == 0 || x.shape()[0] != 1) {
    throw DimensionError("expand_rows expects leading extent 1, got " + to_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[0] = count;
  const std::size_t w = x.size();
  std::vector<T> out(count * w);
  for (std::size_t i = 0; i < count; ++i) std::copy_n(x.data().data(), w, out.data() + i * w);
  return detail::make_result<T>(std::move(shape), std::move(out), {x}, [count, w](Node<T>& o) {
    if (T* g = detail::input_grad(o, 0)) {
      for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < w; ++j) g[j] += o.grad[i * w + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

/// Sum over `axis`, keeping it with extent 1.
template <typename T>
Tensor<T> sum(const Tensor<T>& x, int axis) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  const auto v = detail::axis_view(x.shape(), ax);
  Shape shape = x.shape();
  shape[ax] = 1;
  std::vector<T> out(v.outer * v.inner, T{0});
  const T* px = x.data().data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t a = 0; a < v.extent; ++a)
      for (std::size_t i = 0; i < v.inner; ++i)
        out[o * v.inner + i] += px[(o * v.extent + a) * v.inner + i];
  return detail::make_result<T>(std::move(shape), std::move(out), {x}, [v](Node<T>& o) {
    if (T* g = detail::input_grad(o, 0)) {
      for (std::size_t oo = 0; oo < v.outer; ++oo)
        for (std::size_t a = 0; a < v.extent; ++a)
          for (std::size_t i = 0; i < v.inner; ++i)
            g[(oo * v.extent + a) * v.inner + i] += o.grad[oo * v.inner + i];
    }
  });
}

/// Mean over `axis`, keeping it with extent 1 (AvgPool over tokens for axis 0).
template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x, int axis) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  const std::size_t n = x.shape()[ax];
  if (n == 0) throw DimensionError("mean_pool over empty axis");
  return scale(sum(x, axis), T{1} / static_cast<T>(n));
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc{0};
  for (T v : x.data()) acc += v;
  const std::size_t n = x.size();
  return detail::make_result<T>(Shape{}, {acc}, {x}, [n](Node<T>& o) {
    if (T* g = detail::input_grad(o, 0)) {
      for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[0];
    }
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T{1} / static_cast<T>(x.size()));
}

// ---------------------------------------------------------------------------
// Linear algebra

/// a[..., m, k] x b[..., k, n]. `b` may be rank 2 and shared across a's batch.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  auto fail = [&] {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) fail();
  const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k) fail();
  const std::size_t batch = a.size() / (m * k);
  const bool shared_b = b.rank() == 2;
  if (!shared_b) {
    if (b.rank() != a.rank()) fail();
    for (std::size_t i = 0; i + 2 < a.rank(); ++i)
      if (a.shape()[i] != b.shape()[i]) fail();
  }
  Shape shape = a.shape();
  shape.back() = n;
  std::vector<T> out(batch * m * n, T{0});
  // A shared right operand folds the batch into the row dimension.
  const std::size_t groups = shared_b ? 1 : batch;
  const std::size_t rows = shared_b ? batch * m : m;
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t g = 0; g < groups; ++g)
    blas::gemm(false, false, rows, n, k, T{1}, pa + g * rows * k, k, pb + g * k * n, n, T{0},
               out.data() + g * rows * n, n);
  return detail::make_result<T>(
      std::move(shape), std::move(out), {a, b}, [groups, rows, k, n, shared_b](Node<T>& o) {
        const T* G = o.grad.data();
        const T* pa = o.inputs[0]->data.data();
        const T* pb = o.inputs[1]->data.data();
        T* ga = detail::input_grad(o, 0);
        T* gb = detail::input_grad(o, 1);
        for (std::size_t g = 0; g < groups; ++g) {
          const T* Gg = G + g * rows * n;
          const T* B = pb + (shared_b ? 0 : g * k * n);
          if (ga) blas::gemm(false, true, rows, k, n, T{1}, Gg, n, B, n, T{1}, ga + g * rows * k, k);
          if (gb)
            blas::gemm(true, false, k, n, rows, T{1}, pa + g * rows * k, k, Gg, n, T{1},
                       gb + (shared_b ? 0 : g * k * n), n);
        }
      });
}

/// x·W + b over the last axis of x.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return add(matmul(x, weight), bias);
}

// ---------------------------------------------------------------------------
// Normalization

/// Softmax of x/temperature along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1, T temperature = T{1}) {
  if (!(temperature > T{0})) {
    throw ParameterError("softmax temperature must be > 0, got " + std::to_string(temperature));
  }
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  const auto v = detail::axis_view(x.shape(), ax);
  std::vector<T> out(x.size());
  const T* px = x.data().data();
  const T inv_t = T{1} / temperature;
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.extent * v.inner + i;
      T mx = px[base];
      for (std::size_t a = 1; a < v.extent; ++a) mx = std::max(mx, px[base + a * v.inner]);
      T total{0};
      for (std::size_t a = 0; a < v.extent; ++a) {
        const T e = std::exp((px[base + a * v.inner] - mx) * inv_t);
        out[base + a * v.inner] = e;
        total += e;
      }
      for (std::size_t a = 0; a < v.extent; ++a) out[base + a * v.inner] /= total;
    }
  return detail::make_result<T>(x.shape(), std::move(out), {x}, [v, inv_t](Node<T>& o) {
    T* g = detail::input_grad(o, 0);
    if (!g) return;
    const T* y = o.data.data();
    const T* dy = o.grad.data();
    for (std::size_t oo = 0; oo < v.outer; ++oo)
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = oo * v.extent * v.inner + i;
        T dot{0};
        for (std::size_t a = 0; a < v.extent; ++a) {
          const std::size_t k = base + a * v.inner;
          dot += dy[k] * y[k];
        }
        for (std::size_t a = 0; a < v.extent; ++a) {
          const std::size_t k = base + a * v.inner;
          g[k] += y[k] * (dy[k] - dot) * inv_t;
        }
      }
  });
}

/// Normalizes the last axis to zero mean / unit (population) variance, then
/// applies gain and bias of shape [C].
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (!(eps > T{0})) throw ParameterError("layernorm eps must be > 0");
  const std::size_t c = x.dim(-1);
  if (gain.shape() != Shape{c} || bias.shape() != Shape{c}) {
    throw DimensionError("layernorm: gain/bias " + to_string(gain.shape()) + "/" +
                         to_string(bias.shape()) + " do not match last axis of " +
                         to_string(x.shape()));
  }
  const std::size_t rows = x.size() / c;
  std::vector<T> out(x.size());
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(rows);
  const T* px = x.data().data();
  const T* pg = gain.data().data();
  const T* pb = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = px + r * c;
    T mean{0};
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<T>(c);
    T var{0};
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(c);
    const T is = T{1} / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (row[j] - mean) * is;
      xhat[r * c + j] = h;
      out[r * c + j] = h * pg[j] + pb[j];
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& o) {
        const T* dy = o.grad.data();
        const T* pg = o.inputs[1]->data.data();
        T* gx = detail::input_grad(o, 0);
        T* gg = detail::input_grad(o, 1);
        T* gbias = detail::input_grad(o, 2);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* d = dy + r * c;
          const T* h = xhat.data() + r * c;
          if (gg)
            for (std::size_t j = 0; j < c; ++j) gg[j] += d[j] * h[j];
          if (gbias)
            for (std::size_t j = 0; j < c; ++j) gbias[j] += d[j];
          if (gx) {
            T mean_dh{0}, mean_dh_h{0};
            for (std::size_t j = 0; j < c; ++j) {
              const T dh = d[j] * pg[j];
              mean_dh += dh;
              mean_dh_h += dh * h[j];
            }
            mean_dh /= static_cast<T>(c);
            mean_dh_h /= static_cast<T>(c);
            for (std::size_t j = 0; j < c; ++j) {
              const T dh = d[j] * pg[j];
              gx[r * c + j] += inv_std[r] * (dh - mean_dh - h[j] * mean_dh_h);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Row indexing (axis 0)

namespace detail {
inline void check_indices(const std::vector<std::size_t>& indices, std::size_t limit,
                          const char* op) {
  std::vector<bool> seen(limit, false);
  for (auto i : indices) {
    if (i >= limit) {
      throw IndexError(std::string(op) + ": index " + std::to_string(i) + " out of range [0, " +
                       std::to_string(limit) + ")");
    }
    if (seen[i]) throw IndexError(std::string(op) + ": duplicate index " + std::to_string(i));
    seen[i] = true;
  }
}
}  // namespace detail

/// Selects rows (axis 0) in the given order.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& indices) {
  if (x.rank() == 0) throw DimensionError("gather_rows on a scalar");
  detail::check_indices(indices, x.shape()[0], "gather_rows");
  const std::size_t w = x.size() / x.shape()[0];
  Shape shape = x.shape();
  shape[0] = indices.size();
  std::vector<T> out(indices.size() * w);
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(x.data().data() + indices[r] * w, w, out.data() + r * w);
  return detail::make_result<T>(std::move(shape), std::move(out), {x},
                                [indices, w](Node<T>& o) {
                                  if (T* g = detail::input_grad(o, 0)) {
                                    for (std::size_t r = 0; r < indices.size(); ++r)
                                      for (std::size_t j = 0; j < w; ++j)
                                        g[indices[r] * w + j] += o.grad[r * w + j];
                                  }
                                });
}

/// Places row r of x at row indices[r] of a zero tensor with `rows` rows.
template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& x, const std::vector<std::size_t>& indices,
                       std::size_t rows) {
  if (x.rank() == 0 || x.shape()[0] != indices.size()) {
    throw DimensionError("scatter_rows: " + std::to_string(indices.size()) +
                         " indices for tensor " + to_string(x.shape()));
  }
  detail::check_indices(indices, rows, "scatter_rows");
  const std::size_t w = indices.empty() ? numel(Shape(x.shape().begin() + 1, x.shape().end()))
                                        : x.size() / indices.size();
  Shape shape = x.shape();
  shape[0] = rows;
  std::vector<T> out(rows * w, T{0});
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(x.data().data() + r * w, w, out.data() + indices[r] * w);
  return detail::make_result<T>(std::move(shape), std::move(out), {x},
                                [indices, w](Node<T>& o) {
                                  if (T* g = detail::input_grad(o, 0)) {
                                    for (std::size_t r = 0; r < indices.size(); ++r)
                                      for (std::size_t j = 0; j < w; ++j)
                                        g[r * w + j] += o.grad[indices[r] * w + j];
                                  }
                                });
}

/// y[i, ...] = x[i, ...] * s[i].
template <typename T>
Tensor<T> row_scale(const Tensor<T>& x, const Tensor<T>& s) {
  if (x.rank() == 0 || s.size() != x.shape()[0]) {
    throw DimensionError("row_scale: scales " + to_string(s.shape()) + " for rows of " +
                         to_string(x.shape()));
  }
  const std::size_t rows = s.size();
  const std::size_t w = rows ? x.size() / rows : 0;
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = x.data()[r * w + j] * s.data()[r];
  return detail::make_result<T>(x.shape(), std::move(out), {x, s}, [rows, w](Node<T>& o) {
    const T* px = o.inputs[0]->data.data();
    const T* ps = o.inputs[1]->data.data();
    T* gx = detail::input_grad(o, 0);
    T* gs = detail::input_grad(o, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      T acc{0};
      for (std::size_t j = 0; j < w; ++j) {
        const T d = o.grad[r * w + j];
        if (gx) gx[r * w + j] += d * ps[r];
        acc += d * px[r * w + j];
      }
      if (gs) gs[r] += acc;
    }
  });
}

// ---------------------------------------------------------------------------
// Volumetric ops on channel-last grids [d0, d1, d2, C]

namespace detail {
template <typename T>
void check_volume(const Tensor<T>& x, const char* op) {
  if (x.rank() != 4) {
    throw DimensionError(std::string(op) + " expects [d0, d1, d2, C], got " +
                         to_string(x.shape()));
  }
}
}  // namespace detail

/// Same-padded 3D convolution with cubic kernel (extent 1 or 3).
/// Weights are laid out [k*k*k, C_in, C_out], tap order (dz0, dz1, dz2) row-major.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w) {
  detail::check_volume(x, "conv3d");
  const std::size_t d0 = x.shape()[0], d1 = x.shape()[1], d2 = x.shape()[2];
  const std::size_t ci = x.shape()[3];
  if (w.rank() != 3 || w.shape()[1] != ci) {
    throw DimensionError("conv3d: weight " + to_string(w.shape()) + " does not fit input " +
                         to_string(x.shape()));
  }
  const std::size_t taps = w.shape()[0];
  const std::size_t co = w.shape()[2];
  std::size_t k = 0;
  if (taps == 1) k = 1;
  else if (taps == 27) k = 3;
  else throw DimensionError("conv3d: only 1x1x1 and 3x3x3 kernels are supported");
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);

  const std::size_t vox = d0 * d1 * d2;
  const std::size_t width = taps * ci;

  // im2col: row v holds the (tap, channel) neighbourhood of voxel v, zeros outside.
  std::vector<std::size_t> source;  // flat index into x, or npos for padding
  source.reserve(vox * taps);
  {
    const auto D0 = static_cast<std::ptrdiff_t>(d0), D1 = static_cast<std::ptrdiff_t>(d1),
               D2 = static_cast<std::ptrdiff_t>(d2), K = static_cast<std::ptrdiff_t>(k);
    for (std::ptrdiff_t a = 0; a < D0; ++a)
      for (std::ptrdiff_t b = 0; b < D1; ++b)
        for (std::ptrdiff_t c = 0; c < D2; ++c)
          for (std::ptrdiff_t p = 0; p < K; ++p)
            for (std::ptrdiff_t q = 0; q < K; ++q)
              for (std::ptrdiff_t r = 0; r < K; ++r) {
                const auto ia = a + p - pad, ib = b + q - pad, ic = c + r - pad;
                const bool inside = ia >= 0 && ia < D0 && ib >= 0 && ib < D1 && ic >= 0 && ic < D2;
                source.push_back(inside ? static_cast<std::size_t>((ia * D1 + ib) * D2 + ic) * ci
                                        : static_cast<std::size_t>(-1));
              }
  }
  std::vector<T> cols(vox * width, T{0});
  const T* px = x.data().data();
  for (std::size_t j = 0; j < source.size(); ++j)
    if (source[j] != static_cast<std::size_t>(-1)) std::copy_n(px + source[j], ci, cols.data() + j * ci);

  std::vector<T> out(vox * co, T{0});
  blas::gemm(false, false, vox, co, width, T{1}, cols.data(), width, w.data().data(), co, T{0}, out.data(), co);
  return detail::make_result<T>(
      Shape{d0, d1, d2, co}, std::move(out), {x, w},
      [vox, width, ci, co, source = std::move(source), cols = std::move(cols)](Node<T>& node) {
        const T* dy = node.grad.data();
        if (T* gw = detail::input_grad(node, 1))
          blas::gemm(true, false, width, co, vox, T{1}, cols.data(), width, dy, co, T{1}, gw, co);
        if (T* gx = detail::input_grad(node, 0)) {
          std::vector<T> dcols(vox * width, T{0});
          blas::gemm(false, true, vox, width, co, T{1}, dy, co, node.inputs[1]->data.data(), co, T{0},
                     dcols.data(), width);
          for (std::size_t j = 0; j < source.size(); ++j) {
            if (source[j] == static_cast<std::size_t>(-1)) continue;
            const T* src = dcols.data() + j * ci;
            T* dst = gx + source[j];
            for (std::size_t i = 0; i < ci; ++i) dst[i] += src[i];
          }
        }
      });
}

/// Nearest-neighbour upsampling of the three spatial axes by `factor`.
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor) {
  detail::check_volume(x, "upsample_nearest");
  if (factor == 0) throw ParameterError("upsample factor must be >= 1");
  const std::size_t d0 = x.shape()[0], d1 = x.shape()[1], d2 = x.shape()[2], c = x.shape()[3];
  const std::size_t e0 = d0 * factor, e1 = d1 * factor, e2 = d2 * factor;
  std::vector<std::size_t> src(e0 * e1 * e2);
  for (std::size_t a = 0; a < e0; ++a)
    for (std::size_t b = 0; b < e1; ++b)
      for (std::size_t s = 0; s < e2; ++s)
        src[(a * e1 + b) * e2 + s] = ((a / factor) * d1 + b / factor) * d2 + s / factor;
  std::vector<T> out(src.size() * c);
  const T* px = x.data().data();
  for (std::size_t v = 0; v < src.size(); ++v) std::copy_n(px + src[v] * c, c, out.data() + v * c);
  return detail::make_result<T>(Shape{e0, e1, e2, c}, std::move(out), {x},
                                [src = std::move(src), c](Node<T>& o) {
                                  if (T* g = detail::input_grad(o, 0)) {
                                    for (std::size_t v = 0; v < src.size(); ++v)
                                      for (std::size_t j = 0; j < c; ++j)
                                        g[src[v] * c + j] += o.grad[v * c + j];
                                  }
                                });
}

}  // namespace scd
