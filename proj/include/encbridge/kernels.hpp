#pragma once

// Dense kernels used by the autograd ops.
//
// Two implementations share one signature set:
//   reference::  plain loops, no threading; kept as the oracle for tests
//   parallel::   OpenMP over independent output rows with cache-friendly
//                loop order
//
// Every parallel kernel assigns each output element to exactly one thread and
// accumulates it in a fixed order, so results do not depend on thread count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace encbridge::kernels {

/// Attention mask description shared by both kernel sets.
/// key_valid is batch x key_len (nonzero = attendable); empty means all valid.
struct AttentionMask {
    std::span<const std::uint8_t> key_valid;
    bool causal = false;

    bool allowed(std::size_t b, std::size_t q, std::size_t k, std::size_t key_len) const {
        if (causal && k > q) return false;
        return key_valid.empty() || key_valid[b * key_len + k] != 0;
    }
};

/// Geometry of a multi-head attention call. Q is batch x q_len x width,
/// K/V are batch x k_len x width, width = heads * head_dim.
struct AttentionShape {
    std::size_t batch = 0;
    std::size_t q_len = 0;
    std::size_t k_len = 0;
    std::size_t heads = 0;
    std::size_t head_dim = 0;

    std::size_t width() const { return heads * head_dim; }
    std::size_t prob_size() const { return batch * heads * q_len * k_len; }
};

namespace reference {

// c[m x n] (+)= a[m x k] * b[k x n]
template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            T sum = accumulate ? c[i * n + j] : T(0);
            for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[p * n + j];
            c[i * n + j] = sum;
        }
}

// c[m x n] (+)= a[m x k] * b[n x k]^T
template <typename T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            T sum = accumulate ? c[i * n + j] : T(0);
            for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[j * k + p];
            c[i * n + j] = sum;
        }
}

// c[m x n] (+)= a[k x m]^T * b[k x n]
template <typename T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            T sum = accumulate ? c[i * n + j] : T(0);
            for (std::size_t p = 0; p < k; ++p) sum += a[p * m + i] * b[p * n + j];
            c[i * n + j] = sum;
        }
}

// Softmax over contiguous rows of width n.
template <typename T>
void softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t n) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.data() + r * n;
        T* out = y.data() + r * n;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[j]);
        T total = 0;
        for (std::size_t j = 0; j < n; ++j) {
            out[j] = std::exp(in[j] - mx);
            total += out[j];
        }
        for (std::size_t j = 0; j < n; ++j) out[j] /= total;
    }
}

// Normalizes each row to zero mean / unit variance, then applies gain and offset.
// mean and rstd (one per row) are written for the backward pass.
template <typename T>
void layer_norm_rows(std::span<const T> x, std::span<const T> gain, std::span<const T> offset,
                     std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t rows,
                     std::size_t n, T eps) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.data() + r * n;
        T mu = 0;
        for (std::size_t j = 0; j < n; ++j) mu += in[j];
        mu /= T(n);
        T var = 0;
        for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= T(n);
        const T rs = T(1) / std::sqrt(var + eps);
        mean[r] = mu;
        rstd[r] = rs;
        for (std::size_t j = 0; j < n; ++j) y[r * n + j] = (in[j] - mu) * rs * gain[j] + offset[j];
    }
}

// Scaled dot-product attention per (batch, head). probs receives the
// normalized attention weights (batch x heads x q_len x k_len); fully masked
// rows produce zero output.
template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<T> out, std::span<T> probs, const AttentionShape& s,
                       const AttentionMask& mask) {
    const std::size_t w = s.width();
    const T scale = T(1) / std::sqrt(T(s.head_dim));
    for (std::size_t b = 0; b < s.batch; ++b)
        for (std::size_t h = 0; h < s.heads; ++h)
            for (std::size_t i = 0; i < s.q_len; ++i) {
                T* p = probs.data() + ((b * s.heads + h) * s.q_len + i) * s.k_len;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < s.k_len; ++j) {
                    if (!mask.allowed(b, i, j, s.k_len)) {
                        p[j] = -std::numeric_limits<T>::infinity();
                        continue;
                    }
                    T dot = 0;
                    for (std::size_t d = 0; d < s.head_dim; ++d)
                        dot += q[(b * s.q_len + i) * w + h * s.head_dim + d] *
                               k[(b * s.k_len + j) * w + h * s.head_dim + d];
                    p[j] = dot * scale;
                    mx = std::max(mx, p[j]);
                }
                T total = 0;
                for (std::size_t j = 0; j < s.k_len; ++j) {
                    p[j] = mask.allowed(b, i, j, s.k_len) ? std::exp(p[j] - mx) : T(0);
                    total += p[j];
                }
                for (std::size_t j = 0; j < s.k_len; ++j) p[j] = total > 0 ? p[j] / total : T(0);
                for (std::size_t d = 0; d < s.head_dim; ++d) {
                    T acc = 0;
                    for (std::size_t j = 0; j < s.k_len; ++j)
                        acc += p[j] * v[(b * s.k_len + j) * w + h * s.head_dim + d];
                    out[(b * s.q_len + i) * w + h * s.head_dim + d] = acc;
                }
            }
}

// Accumulates gradients of attention_forward into dq, dk, dv.
template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> probs, std::span<const T> dout, std::span<T> dq,
                        std::span<T> dk, std::span<T> dv, const AttentionShape& s) {
    const std::size_t w = s.width();
    const T scale = T(1) / std::sqrt(T(s.head_dim));
    std::vector<T> dp(s.k_len);
    for (std::size_t b = 0; b < s.batch; ++b)
        for (std::size_t h = 0; h < s.heads; ++h)
            for (std::size_t i = 0; i < s.q_len; ++i) {
                const T* p = probs.data() + ((b * s.heads + h) * s.q_len + i) * s.k_len;
                const std::size_t qo = (b * s.q_len + i) * w + h * s.head_dim;
                T weighted = 0;
                for (std::size_t j = 0; j < s.k_len; ++j) {
                    const std::size_t ko = (b * s.k_len + j) * w + h * s.head_dim;
                    T dot = 0;
                    for (std::size_t d = 0; d < s.head_dim; ++d) {
                        dot += dout[qo + d] * v[ko + d];
                        dv[ko + d] += p[j] * dout[qo + d];
                    }
                    dp[j] = dot;
                    weighted += p[j] * dot;
                }
                for (std::size_t j = 0; j < s.k_len; ++j) {
                    const T ds = p[j] * (dp[j] - weighted) * scale;
                    if (ds == T(0)) continue;
                    const std::size_t ko = (b * s.k_len + j) * w + h * s.head_dim;
                    for (std::size_t d = 0; d < s.head_dim; ++d) {
                        dq[qo + d] += ds * k[ko + d];
                        dk[ko + d] += ds * q[qo + d];
                    }
                }
            }
}

}  // namespace reference

namespace parallel {

namespace detail {
// Below this many multiply-adds a parallel region costs more than it saves.
inline constexpr std::size_t kParallelWork = 1u << 15;
}  // namespace detail

template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n > detail::kParallelWork)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        T* crow = c.data() + i * n;
        if (!accumulate) std::fill(crow, crow + n, T(0));
        const T* arow = a.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T s = arow[p];
            const T* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
        }
    }
}

template <typename T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
    // Transposing b once turns the inner loop into a unit-stride axpy.
    std::vector<T> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    gemm_nn<T>(a, bt, c, m, k, n, accumulate);
}

template <typename T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n > detail::kParallelWork)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        T* crow = c.data() + i * n;
        if (!accumulate) std::fill(crow, crow + n, T(0));
        for (std::size_t p = 0; p < k; ++p) {
            const T s = a[p * m + i];
            if (s == T(0)) continue;
            const T* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
        }
    }
}

template <typename T>
void softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t n) {
    const auto nr = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * n > detail::kParallelWork)
    for (std::ptrdiff_t r = 0; r < nr; ++r)
        reference::softmax_rows<T>(x.subspan(r * n, n), y.subspan(r * n, n), 1, n);
}

template <typename T>
void layer_norm_rows(std::span<const T> x, std::span<const T> gain, std::span<const T> offset,
                     std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t rows,
                     std::size_t n, T eps) {
    const auto nr = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * n > detail::kParallelWork)
    for (std::ptrdiff_t r = 0; r < nr; ++r)
        reference::layer_norm_rows<T>(x.subspan(r * n, n), gain, offset, y.subspan(r * n, n),
                                      mean.subspan(r, 1), rstd.subspan(r, 1), 1, n, eps);
}

template <typename T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<T> out, std::span<T> probs, const AttentionShape& s,
                       const AttentionMask& mask) {
    const std::size_t w = s.width();
    const std::size_t hd = s.head_dim;
    const T scale = T(1) / std::sqrt(T(hd));
    const auto pairs = static_cast<std::ptrdiff_t>(s.batch * s.heads);
#pragma omp parallel for schedule(static) if (s.prob_size() * hd > detail::kParallelWork)
    for (std::ptrdiff_t bh = 0; bh < pairs; ++bh) {
        const std::size_t b = bh / s.heads;
        const std::size_t h = bh % s.heads;
        for (std::size_t i = 0; i < s.q_len; ++i) {
            T* p = probs.data() + (bh * s.q_len + i) * s.k_len;
            const T* qi = q.data() + (b * s.q_len + i) * w + h * hd;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < s.k_len; ++j) {
                if (!mask.allowed(b, i, j, s.k_len)) continue;
                const T* kj = k.data() + (b * s.k_len + j) * w + h * hd;
                T dot = 0;
                for (std::size_t d = 0; d < hd; ++d) dot += qi[d] * kj[d];
                p[j] = dot * scale;
                mx = std::max(mx, p[j]);
            }
            T total = 0;
            for (std::size_t j = 0; j < s.k_len; ++j) {
                p[j] = mask.allowed(b, i, j, s.k_len) ? std::exp(p[j] - mx) : T(0);
                total += p[j];
            }
            T* oi = out.data() + (b * s.q_len + i) * w + h * hd;
            std::fill(oi, oi + hd, T(0));
            if (total <= T(0)) continue;
            for (std::size_t j = 0; j < s.k_len; ++j) {
                p[j] /= total;
                if (p[j] == T(0)) continue;
                const T* vj = v.data() + (b * s.k_len + j) * w + h * hd;
                for (std::size_t d = 0; d < hd; ++d) oi[d] += p[j] * vj[d];
            }
        }
    }
}

template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> probs, std::span<const T> dout, std::span<T> dq,
                        std::span<T> dk, std::span<T> dv, const AttentionShape& s) {
    const std::size_t w = s.width();
    const std::size_t hd = s.head_dim;
    const T scale = T(1) / std::sqrt(T(hd));
    const auto pairs = static_cast<std::ptrdiff_t>(s.batch * s.heads);
    // (b, h) slices of dq/dk/dv are disjoint, so threads never share outputs.
#pragma omp parallel for schedule(static) if (s.prob_size() * hd > detail::kParallelWork)
    for (std::ptrdiff_t bh = 0; bh < pairs; ++bh) {
        const std::size_t b = bh / s.heads;
        const std::size_t h = bh % s.heads;
        std::vector<T> dp(s.k_len);
        for (std::size_t i = 0; i < s.q_len; ++i) {
            const T* p = probs.data() + (bh * s.q_len + i) * s.k_len;
            const std::size_t qo = (b * s.q_len + i) * w + h * hd;
            const T* go = dout.data() + qo;
            T weighted = 0;
            for (std::size_t j = 0; j < s.k_len; ++j) {
                if (p[j] == T(0)) {
                    dp[j] = 0;
                    continue;
                }
                const std::size_t ko = (b * s.k_len + j) * w + h * hd;
                T dot = 0;
                for (std::size_t d = 0; d < hd; ++d) {
                    dot += go[d] * v[ko + d];
                    dv[ko + d] += p[j] * go[d];
                }
                dp[j] = dot;
                weighted += p[j] * dot;
            }
            for (std::size_t j = 0; j < s.k_len; ++j) {
                const T ds = p[j] * (dp[j] - weighted) * scale;
                if (ds == T(0)) continue;
                const std::size_t ko = (b * s.k_len + j) * w + h * hd;
                for (std::size_t d = 0; d < hd; ++d) {
                    dq[qo + d] += ds * k[ko + d];
                    dk[ko + d] += ds * q[qo + d];
                }
            }
        }
    }
}

}  // namespace parallel

}  // namespace encbridge::kernels
