#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "aigen/core/tape.hpp"

namespace aigen::ops {

namespace kernel {
// c[n×m] += a[n×k] · b[k×m]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    T* ci = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      if (aip == T{0}) continue;
      const T* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[n×m] += a[n×k] · b[m×k]ᵀ
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* ai = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const T* bj = b + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * m + j] += acc;
    }
  }
}

// c[k×m] += a[n×k]ᵀ · b[n×m]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* bi = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      if (aip == T{0}) continue;
      T* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += aip * bi[j];
    }
  }
}
}  // namespace kernel

/// Row-major boolean attention mask, entry (query, key).
struct AttentionMask {
  std::size_t size = 0;
  std::vector<std::uint8_t> allowed;

  bool operator()(std::size_t query, std::size_t key) const {
    return allowed[query * size + key] != 0;
  }
  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;
};

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  detail::require(b.rows() == k, "matmul: inner dimensions differ");
  Tensor<T> out(n, m);
  kernel::gemm_nn(a.value().data.data(), b.value().data.data(), out.data.data(), n, k, m);
  return a.tape->record(std::move(out), {a, b}, [a, b, n, k, m](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id))
      kernel::gemm_nt(g.data(), t.value(b.id).data.data(), t.grad(a.id).data(), n, m, k);
    if (t.requires_grad(b.id))
      kernel::gemm_tn(t.value(a.id).data.data(), g.data(), t.grad(b.id).data(), n, k, m);
  });
}

/// a · bᵀ, used for the tied output head.
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  detail::require(b.cols() == k, "matmul_nt: inner dimensions differ");
  Tensor<T> out(n, m);
  kernel::gemm_nt(a.value().data.data(), b.value().data.data(), out.data.data(), n, k, m);
  return a.tape->record(std::move(out), {a, b}, [a, b, n, k, m](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id))
      kernel::gemm_nn(g.data(), t.value(b.id).data.data(), t.grad(a.id).data(), n, m, k);
    if (t.requires_grad(b.id))
      kernel::gemm_tn(g.data(), t.value(a.id).data.data(), t.grad(b.id).data(), n, m, k);
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require(a.value().same_shape(b.value()), "add: shape mismatch");
  Tensor<T> out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (auto id : {a.id, b.id}) {
      if (!t.requires_grad(id)) continue;
      auto& gi = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

/// Adds a 1×m row to every row of an n×m matrix.
template <class T>
Var<T> add_row(Var<T> a, Var<T> row) {
  const std::size_t n = a.rows(), m = a.cols();
  detail::require(row.rows() == 1 && row.cols() == m, "add_row: bias shape mismatch");
  Tensor<T> out = a.value();
  const auto& r = row.value().data;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.data[i * m + j] += r[j];
  return a.tape->record(std::move(out), {a, row}, [a, row, n, m](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id)) {
      auto& ga = t.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(row.id)) {
      auto& gr = t.grad(row.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gr[j] += g[i * m + j];
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v *= factor;
  return a.tape->record(std::move(out), {a}, [a, factor](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  return add_row(matmul(x, weight), bias);
}

/// Row-wise layer normalisation with learned gain and bias (both 1×m).
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  const std::size_t n = x.rows(), m = x.cols();
  detail::require(gain.cols() == m && bias.cols() == m, "layer_norm: parameter width mismatch");
  auto normed = std::make_shared<std::vector<T>>(n * m);
  auto rstd = std::make_shared<std::vector<T>>(n);
  Tensor<T> out(n, m);
  const auto& xv = x.value().data;
  const auto& gv = gain.value().data;
  const auto& bv = bias.value().data;
  for (std::size_t i = 0; i < n; ++i) {
    T mean{0};
    for (std::size_t j = 0; j < m; ++j) mean += xv[i * m + j];
    mean /= T(m);
    T var{0};
    for (std::size_t j = 0; j < m; ++j) {
      const T d = xv[i * m + j] - mean;
      var += d * d;
    }
    var /= T(m);
    const T r = T{1} / std::sqrt(var + eps);
    (*rstd)[i] = r;
    for (std::size_t j = 0; j < m; ++j) {
      const T h = (xv[i * m + j] - mean) * r;
      (*normed)[i * m + j] = h;
      out.data[i * m + j] = h * gv[j] + bv[j];
    }
  }
  return x.tape->record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, n, m, normed, rstd](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& gv = t.value(gain.id).data;
        if (t.requires_grad(gain.id) || t.requires_grad(bias.id)) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
              if (t.requires_grad(gain.id)) t.grad(gain.id)[j] += g[i * m + j] * (*normed)[i * m + j];
              if (t.requires_grad(bias.id)) t.grad(bias.id)[j] += g[i * m + j];
            }
        }
        if (!t.requires_grad(x.id)) return;
        auto& gx = t.grad(x.id);
        std::vector<T> dh(m);
        for (std::size_t i = 0; i < n; ++i) {
          T mean_dh{0}, mean_dh_h{0};
          for (std::size_t j = 0; j < m; ++j) {
            dh[j] = g[i * m + j] * gv[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * (*normed)[i * m + j];
          }
          mean_dh /= T(m);
          mean_dh_h /= T(m);
          for (std::size_t j = 0; j < m; ++j)
            gx[i * m + j] += (*rstd)[i] * (dh[j] - mean_dh - (*normed)[i * m + j] * mean_dh_h);
        }
      });
}

/// GELU, tanh approximation.
template <class T>
Var<T> gelu(Var<T> x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = T(0.044715);
  Tensor<T> out = x.value();
  for (auto& v : out.data) v = T(0.5) * v * (T{1} + std::tanh(c * (v + a * v * v * v)));
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(x.id).data;
    auto& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xv[i];
      const T th = std::tanh(c * (v + a * v * v * v));
      const T d = T(0.5) * (T{1} + th) +
                  T(0.5) * v * (T{1} - th * th) * c * (T{1} + T(3) * a * v * v);
      gx[i] += g[i] * d;
    }
  });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data) v = v >= 0 ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self).data;
    auto& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T{1} - y[i]);
  });
}

/// Clamps into [lo, hi]; gradient passes only where the input was inside.
template <class T>
Var<T> clamp(Var<T> x, T lo, T hi) {
  Tensor<T> out = x.value();
  for (auto& v : out.data) v = std::clamp(v, lo, hi);
  return x.tape->record(std::move(out), {x}, [x, lo, hi](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(x.id).data;
    auto& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] >= lo && xv[i] <= hi) gx[i] += g[i];
  });
}

/// Elementwise −ln(x).
template <class T>
Var<T> neg_log(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data) v = -std::log(v);
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(x.id).data;
    auto& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i] / xv[i];
  });
}

/// Elementwise −ln(1 − x).
template <class T>
Var<T> neg_log1m(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data) v = -std::log1p(-v);
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(x.id).data;
    auto& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / (T{1} - xv[i]);
  });
}

/// Sum of all entries weighted by a constant tensor of the same shape.
template <class T>
Var<T> weighted_sum(Var<T> x, Tensor<T> weights) {
  detail::require(x.value().same_shape(weights), "weighted_sum: shape mismatch");
  T acc{0};
  for (std::size_t i = 0; i < weights.size(); ++i) acc += x.value().data[i] * weights.data[i];
  auto w = std::make_shared<Tensor<T>>(std::move(weights));
  return x.tape->record(Tensor<T>(1, 1, acc), {x}, [x, w](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    auto& gx = t.grad(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * w->data[i];
  });
}

/// Arithmetic mean of 1×1 nodes.
template <class T>
Var<T> mean(const std::vector<Var<T>>& scalars) {
  detail::require(!scalars.empty(), "mean: no inputs");
  T acc{0};
  for (const auto& s : scalars) acc += s.item();
  const T inv = T{1} / T(scalars.size());
  return scalars.front().tape->record(
      Tensor<T>(1, 1, acc * inv), scalars, [scalars, inv](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0] * inv;
        for (const auto& s : scalars)
          if (t.requires_grad(s.id)) t.grad(s.id)[0] += g;
      });
}

/// Row-wise softmax.
template <class T>
Var<T> softmax_rows(Var<T> x) {
  const std::size_t n = x.rows(), m = x.cols();
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    T* r = out.data.data() + i * m;
    const T mx = *std::max_element(r, r + m);
    T z{0};
    for (std::size_t j = 0; j < m; ++j) z += (r[j] = std::exp(r[j] - mx));
    for (std::size_t j = 0; j < m; ++j) r[j] /= z;
  }
  return x.tape->record(std::move(out), {x}, [x, n, m](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self).data;
    auto& gx = t.grad(x.id);
    for (std::size_t i = 0; i < n; ++i) {
      T dot{0};
      for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
      for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += y[i * m + j] * (g[i * m + j] - dot);
    }
  });
}

/// Straight-through one-hot: the forward value is the per-row argmax (ties to
/// the lowest index) as a one-hot row; the backward pass is the identity.
template <class T>
Var<T> straight_through(Var<T> soft) {
  const std::size_t n = soft.rows(), m = soft.cols();
  Tensor<T> out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = soft.value().row(i);
    const auto best = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    out(i, best) = T{1};
  }
  return soft.tape->record(std::move(out), {soft}, [soft](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gs = t.grad(soft.id);
    for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
  });
}

/// Rows of a table selected by index (embedding lookup).
template <class T>
Var<T> gather_rows(Var<T> table, std::vector<std::size_t> indices) {
  const std::size_t m = table.cols();
  detail::require(!indices.empty(), "gather_rows: no indices");
  Tensor<T> out(indices.size(), m);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    detail::require(indices[i] < table.rows(), "gather_rows: index out of range");
    const auto src = table.value().row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return table.tape->record(std::move(out), {table},
                            [table, idx = std::move(indices), m](Tape<T>& t, std::size_t self) {
                              const auto& g = t.grad(self);
                              auto& gt = t.grad(table.id);
                              for (std::size_t i = 0; i < idx.size(); ++i)
                                for (std::size_t j = 0; j < m; ++j) gt[idx[i] * m + j] += g[i * m + j];
                            });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_rows: no parts");
  const std::size_t m = parts.front().cols();
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::require(p.cols() == m, "concat_rows: column mismatch");
    n += p.rows();
  }
  Tensor<T> out(n, m);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + offset);
    offset += p.value().size();
  }
  return parts.front().tape->record(std::move(out), parts, [parts](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t count = t.value(p.id).size();
      if (t.requires_grad(p.id)) {
        auto& gp = t.grad(p.id);
        for (std::size_t i = 0; i < count; ++i) gp[i] += g[offset + i];
      }
      offset += count;
    }
  });
}

template <class T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count) {
  const std::size_t m = x.cols();
  detail::require(count > 0 && begin + count <= x.rows(), "slice_rows: range out of bounds");
  Tensor<T> out(count, m);
  std::copy_n(x.value().data.begin() + begin * m, count * m, out.data.begin());
  return x.tape->record(std::move(out), {x}, [x, begin, m](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * m + i] += g[i];
  });
}

/// Column means: n×m → 1×m.
template <class T>
Var<T> mean_rows(Var<T> x) {
  const std::size_t n = x.rows(), m = x.cols();
  Tensor<T> out(1, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.data[j] += x.value().data[i * m + j];
  for (auto& v : out.data) v /= T(n);
  return x.tape->record(std::move(out), {x}, [x, n, m](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(x.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[j] / T(n);
  });
}

/// Multi-head scaled dot-product attention over n×d query/key/value matrices.
/// Heads split the columns into equal contiguous groups.
template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads,
                 std::shared_ptr<const AttentionMask> mask) {
  const std::size_t n = q.rows(), d = q.cols();
  detail::require(k.rows() == n && v.rows() == n && k.cols() == d && v.cols() == d,
                  "attention: q/k/v shape mismatch");
  detail::require(heads > 0 && d % heads == 0, "attention: width not divisible by heads");
  detail::require(mask && mask->size == n, "attention: mask size mismatch");
  const std::size_t dh = d / heads;
  const T inv_sqrt = T{1} / std::sqrt(T(dh));
  auto probs = std::make_shared<std::vector<T>>(heads * n * n, T{0});
  Tensor<T> out(n, d);
  const T* qv = q.value().data.data();
  const T* kv = k.value().data.data();
  const T* vv = v.value().data.data();
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < n; ++i) {
      T* p = probs->data() + (h * n + i) * n;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (!(*mask)(i, j)) continue;
        T s{0};
        for (std::size_t c = 0; c < dh; ++c) s += qv[i * d + off + c] * kv[j * d + off + c];
        p[j] = s * inv_sqrt;
        mx = std::max(mx, p[j]);
      }
      T z{0};
      for (std::size_t j = 0; j < n; ++j) {
        if (!(*mask)(i, j)) continue;
        z += (p[j] = std::exp(p[j] - mx));
      }
      if (z == T{0}) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (!(*mask)(i, j)) continue;
        p[j] /= z;
        for (std::size_t c = 0; c < dh; ++c) out.data[i * d + off + c] += p[j] * vv[j * d + off + c];
      }
    }
  }
  return q.tape->record(
      std::move(out), {q, k, v},
      [q, k, v, heads, mask, probs, n, d, dh, inv_sqrt](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const T* qv = t.value(q.id).data.data();
        const T* kv = t.value(k.id).data.data();
        const T* vv = t.value(v.id).data.data();
        std::vector<T> scratch_q, scratch_k, scratch_v;
        auto target = [&](Var<T> x, std::vector<T>& scratch) -> T* {
          if (t.requires_grad(x.id)) return t.grad(x.id).data();
          scratch.assign(n * d, T{0});
          return scratch.data();
        };
        T* gq = target(q, scratch_q);
        T* gk = target(k, scratch_k);
        T* gv = target(v, scratch_v);
        std::vector<T> dp(n);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * dh;
          for (std::size_t i = 0; i < n; ++i) {
            const T* p = probs->data() + (h * n + i) * n;
            T dot{0};
            for (std::size_t j = 0; j < n; ++j) {
              dp[j] = T{0};
              if (!(*mask)(i, j)) continue;
              T s{0};
              for (std::size_t c = 0; c < dh; ++c) {
                s += g[i * d + off + c] * vv[j * d + off + c];
                gv[j * d + off + c] += p[j] * g[i * d + off + c];
              }
              dp[j] = s;
              dot += p[j] * s;
            }
            for (std::size_t j = 0; j < n; ++j) {
              if (!(*mask)(i, j)) continue;
              const T ds = p[j] * (dp[j] - dot) * inv_sqrt;
              for (std::size_t c = 0; c < dh; ++c) {
                gq[i * d + off + c] += ds * kv[j * d + off + c];
                gk[j * d + off + c] += ds * qv[i * d + off + c];
              }
            }
          }
        }
      });
}

/// Mean over unmasked rows of −log softmax(logits)[target]. Rows whose mask
/// entry is zero are ignored; an all-zero mask yields 0 and no gradient.
template <class T>
Var<T> cross_entropy(Var<T> logits, std::vector<std::size_t> targets, std::vector<std::uint8_t> mask) {
  const std::size_t n = logits.rows(), m = logits.cols();
  detail::require(targets.size() == n && mask.size() == n, "cross_entropy: target/mask length mismatch");
  auto probs = std::make_shared<std::vector<T>>(n * m);
  std::size_t count = 0;
  T total{0};
  const auto& lv = logits.value().data;
  for (std::size_t i = 0; i < n; ++i) {
    const T* r = lv.data() + i * m;
    const T mx = *std::max_element(r, r + m);
    T z{0};
    for (std::size_t j = 0; j < m; ++j) z += ((*probs)[i * m + j] = std::exp(r[j] - mx));
    for (std::size_t j = 0; j < m; ++j) (*probs)[i * m + j] /= z;
    if (!mask[i]) continue;
    detail::require(targets[i] < m, "cross_entropy: target id out of range");
    total += -(r[targets[i]] - mx - std::log(z));
    ++count;
  }
  const T inv = count ? T{1} / T(count) : T{0};
  return logits.tape->record(
      Tensor<T>(1, 1, total * inv), {logits},
      [logits, probs, tg = std::move(targets), mk = std::move(mask), n, m, inv](Tape<T>& t,
                                                                               std::size_t self) {
        const T g = t.grad(self)[0] * inv;
        auto& gl = t.grad(logits.id);
        for (std::size_t i = 0; i < n; ++i) {
          if (!mk[i]) continue;
          for (std::size_t j = 0; j < m; ++j) gl[i * m + j] += g * (*probs)[i * m + j];
          gl[i * m + tg[i]] -= g;
        }
      });
}

}  // namespace aigen::ops
