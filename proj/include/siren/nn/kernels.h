#pragma once

// Raw loops shared by the autodiff ops and the incremental (KV-cached)
// inference path. Each output row is accumulated in a fixed order that does
// not depend on how many rows are processed together, so a one-row call and a
// full-sequence call produce bit-identical results for the same row.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace siren::nn::kernels {

// Register tile of R output rows by J columns. Every output element still
// accumulates over k in ascending order, so tiling does not change results.
template <typename T, int R, int J>
inline void matmul_tile(const T* a, int lda, int astride, const T* b, T* c, int k, int m) {
    T acc[R][J];
    for (int r = 0; r < R; ++r) {
        for (int j = 0; j < J; ++j) {
            acc[r][j] = c[static_cast<size_t>(r) * m + j];
        }
    }
    for (int kk = 0; kk < k; ++kk) {
        const T* bk = b + static_cast<size_t>(kk) * m;
        for (int r = 0; r < R; ++r) {
            const T av = a[static_cast<size_t>(r) * lda + static_cast<size_t>(kk) * astride];
            for (int j = 0; j < J; ++j) {
                acc[r][j] += av * bk[j];
            }
        }
    }
    for (int r = 0; r < R; ++r) {
        for (int j = 0; j < J; ++j) {
            c[static_cast<size_t>(r) * m + j] = acc[r][j];
        }
    }
}

// c[n,m] += op(a)[n,k] * b[k,m], where op(a)[i][kk] = a[i * lda + kk * astride].
template <typename T>
inline void matmul_strided(const T* a, int lda, int astride, const T* b, T* c, int n, int k, int m) {
    constexpr int R = 4;
    constexpr int J = 32;
    int i = 0;
    for (; i + R <= n; i += R) {
        const T* ai = a + static_cast<size_t>(i) * lda;
        T* ci = c + static_cast<size_t>(i) * m;
        int j = 0;
        for (; j + J <= m; j += J) {
            matmul_tile<T, R, J>(ai, lda, astride, b + j, ci + j, k, m);
        }
        for (; j + 8 <= m; j += 8) {
            matmul_tile<T, R, 8>(ai, lda, astride, b + j, ci + j, k, m);
        }
        if (j < m) {
            for (int r = 0; r < R; ++r) {
                T* cr = ci + static_cast<size_t>(r) * m;
                for (int kk = 0; kk < k; ++kk) {
                    const T av = ai[static_cast<size_t>(r) * lda + static_cast<size_t>(kk) * astride];
                    const T* bk = b + static_cast<size_t>(kk) * m;
                    for (int jj = j; jj < m; ++jj) {
                        cr[jj] += av * bk[jj];
                    }
                }
            }
        }
    }
    for (; i < n; ++i) {
        T* ci = c + static_cast<size_t>(i) * m;
        const T* ai = a + static_cast<size_t>(i) * lda;
        for (int kk = 0; kk < k; ++kk) {
            const T av = ai[static_cast<size_t>(kk) * astride];
            const T* bk = b + static_cast<size_t>(kk) * m;
            for (int j = 0; j < m; ++j) {
                ci[j] += av * bk[j];
            }
        }
    }
}

// c[n,m] += a[n,k] * b[k,m]
template <typename T>
inline void matmul_acc(const T* a, const T* b, T* c, int n, int k, int m) {
    matmul_strided(a, k, 1, b, c, n, k, m);
}

// out[k,m] += a[n,k]^T * g[n,m]; each element accumulates over n in order.
template <typename T>
inline void matmul_tn_acc(const T* a, const T* g, T* out, int n, int k, int m) {
    matmul_strided(a, 1, k, g, out, k, n, m);
}

// out[n,k] += g[n,m] * b[k,m]^T. b is transposed once so the inner loop runs
// over contiguous output columns.
template <typename T>
inline void matmul_nt_acc(const T* g, const T* b, T* out, int n, int k, int m) {
    thread_local std::vector<T> bt;
    bt.resize(static_cast<size_t>(k) * m);
    for (int kk = 0; kk < k; ++kk) {
        const T* bk = b + static_cast<size_t>(kk) * m;
        for (int j = 0; j < m; ++j) {
            bt[static_cast<size_t>(j) * k + kk] = bk[j];
        }
    }
    matmul_acc(g, bt.data(), out, n, m, k);
}

// y[n,out] = x[n,in] * w[in,out] + bias
template <typename T>
inline void linear_forward(const T* x, const T* w, const T* bias, T* y, int n, int in, int out) {
    for (int i = 0; i < n; ++i) {
        T* yi = y + static_cast<size_t>(i) * out;
        if (bias != nullptr) {
            std::copy(bias, bias + out, yi);
        } else {
            std::fill(yi, yi + out, T(0));
        }
    }
    matmul_acc(x, w, y, n, in, out);
}

template <typename T>
inline T gelu(T x) {
    const T c = T(0.7978845608028654);
    return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <typename T>
inline T gelu_grad(T x) {
    const T c = T(0.7978845608028654);
    const T u = c * (x + T(0.044715) * x * x * x);
    const T th = std::tanh(u);
    const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

// Normalizes one row; writes mean and reciprocal std when requested.
template <typename T>
inline void layer_norm_row(const T* x, const T* gamma, const T* beta, T* y, int n, T eps,
                           T* mean_out = nullptr, T* rstd_out = nullptr) {
    T mean = T(0);
    for (int j = 0; j < n; ++j) {
        mean += x[j];
    }
    mean /= static_cast<T>(n);
    T var = T(0);
    for (int j = 0; j < n; ++j) {
        const T d = x[j] - mean;
        var += d * d;
    }
    var /= static_cast<T>(n);
    const T rstd = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < n; ++j) {
        y[j] = (x[j] - mean) * rstd * gamma[j] + beta[j];
    }
    if (mean_out != nullptr) {
        *mean_out = mean;
    }
    if (rstd_out != nullptr) {
        *rstd_out = rstd;
    }
}

// Multi-head attention for a single query row against `visible` key rows.
// q/out point at one row of width heads*head_dim; k/v rows are kv_stride apart.
// probs (optional) receives heads x visible attention weights.
template <typename T>
inline void attention_row(const T* q, const T* k, const T* v, int kv_stride, int visible,
                          T* out, int heads, int head_dim, T scale, T* scores_scratch,
                          T* probs = nullptr) {
    for (int h = 0; h < heads; ++h) {
        const int off = h * head_dim;
        T* sc = probs != nullptr ? probs + static_cast<size_t>(h) * visible : scores_scratch;
        T mx = -INFINITY;
        for (int j = 0; j < visible; ++j) {
            const T* kj = k + static_cast<size_t>(j) * kv_stride + off;
            T s = T(0);
            for (int d = 0; d < head_dim; ++d) {
                s += q[off + d] * kj[d];
            }
            s *= scale;
            sc[j] = s;
            mx = std::max(mx, s);
        }
        T sum = T(0);
        for (int j = 0; j < visible; ++j) {
            sc[j] = std::exp(sc[j] - mx);
            sum += sc[j];
        }
        const T inv = T(1) / sum;
        T* oh = out + off;
        std::fill(oh, oh + head_dim, T(0));
        for (int j = 0; j < visible; ++j) {
            sc[j] *= inv;
            const T p = sc[j];
            const T* vj = v + static_cast<size_t>(j) * kv_stride + off;
            for (int d = 0; d < head_dim; ++d) {
                oh[d] += p * vj[d];
            }
        }
    }
}

}  // namespace siren::nn::kernels
