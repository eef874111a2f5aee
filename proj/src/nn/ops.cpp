#include "siren/nn/ops.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "siren/nn/kernels.h"

namespace siren::nn {

std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << "]";
    return os.str();
}

namespace {

void require(bool ok, const char* what) {
    if (!ok) {
        throw std::invalid_argument(what);
    }
}

template <typename T>
void require_finite(const BasicTensor<T>& t, const char* what) {
    if (!t.all_finite()) {
        throw std::domain_error(std::string(what) + ": non-finite input");
    }
}

template <typename T>
void add_into(BasicTensor<T>& dst, const BasicTensor<T>& src) {
    for (size_t i = 0; i < dst.data.size(); ++i) {
        dst.data[i] += src.data[i];
    }
}

template <typename T>
Var unary(BasicGraph<T>& g, Var x, T (*f)(T), T (*df)(T, T)) {
    const auto& xv = g.value(x);
    BasicTensor<T> y(xv.shape);
    for (size_t i = 0; i < y.data.size(); ++i) {
        y.data[i] = f(xv.data[i]);
    }
    return g.record(std::move(y), {x}, [x, df](BasicGraph<T>& gr, Var self) {
        if (!gr.requires_grad(x)) {
            return;
        }
        const auto& xv = gr.value(x);
        const auto& yv = gr.value(self);
        const auto& gy = gr.grad(self);
        auto& gx = gr.grad(x);
        for (size_t i = 0; i < gx.data.size(); ++i) {
            gx.data[i] += gy.data[i] * df(xv.data[i], yv.data[i]);
        }
    });
}

}  // namespace

template <typename T>
Var matmul(BasicGraph<T>& g, Var a, Var b) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    const int n = av.rows(), k = av.cols(), m = bv.cols();
    require(bv.rows() == k, "matmul: inner dimensions differ");
    BasicTensor<T> y({n, m});
    kernels::matmul_acc(av.data.data(), bv.data.data(), y.data.data(), n, k, m);
    return g.record(std::move(y), {a, b}, [a, b, n, k, m](BasicGraph<T>& gr, Var self) {
        const auto& gy = gr.grad(self);
        if (gr.requires_grad(a)) {
            kernels::matmul_nt_acc(gy.data.data(), gr.value(b).data.data(), gr.grad(a).data.data(),
                                   n, k, m);
        }
        if (gr.requires_grad(b)) {
            kernels::matmul_tn_acc(gr.value(a).data.data(), gy.data.data(), gr.grad(b).data.data(),
                                   n, k, m);
        }
    });
}

template <typename T>
Var linear(BasicGraph<T>& g, Var x, Var w, Var bias) {
    const auto& xv = g.value(x);
    const auto& wv = g.value(w);
    const int n = xv.rows(), in = xv.cols(), out = wv.cols();
    require(wv.rows() == in, "linear: weight rows must equal input width");
    if (bias.valid()) {
        require(static_cast<int>(g.value(bias).numel()) == out, "linear: bias size mismatch");
    }
    BasicTensor<T> y({n, out});
    kernels::linear_forward(xv.data.data(), wv.data.data(),
                            bias.valid() ? g.value(bias).data.data() : nullptr, y.data.data(), n,
                            in, out);
    return g.record(std::move(y), {x, w, bias},
                    [x, w, bias, n, in, out](BasicGraph<T>& gr, Var self) {
                        const auto& gy = gr.grad(self);
                        if (gr.requires_grad(x)) {
                            kernels::matmul_nt_acc(gy.data.data(), gr.value(w).data.data(),
                                                   gr.grad(x).data.data(), n, in, out);
                        }
                        if (gr.requires_grad(w)) {
                            kernels::matmul_tn_acc(gr.value(x).data.data(), gy.data.data(),
                                                   gr.grad(w).data.data(), n, in, out);
                        }
                        if (bias.valid() && gr.requires_grad(bias)) {
                            auto& gb = gr.grad(bias);
                            for (int i = 0; i < n; ++i) {
                                const T* gi = gy.row(i);
                                for (int j = 0; j < out; ++j) {
                                    gb.data[static_cast<size_t>(j)] += gi[j];
                                }
                            }
                        }
                    });
}

template <typename T>
Var add(BasicGraph<T>& g, Var a, Var b) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    require(av.numel() == bv.numel(), "add: size mismatch");
    BasicTensor<T> y(av.shape);
    for (size_t i = 0; i < y.data.size(); ++i) {
        y.data[i] = av.data[i] + bv.data[i];
    }
    return g.record(std::move(y), {a, b}, [a, b](BasicGraph<T>& gr, Var self) {
        const auto& gy = gr.grad(self);
        if (gr.requires_grad(a)) {
            add_into(gr.grad(a), gy);
        }
        if (gr.requires_grad(b)) {
            add_into(gr.grad(b), gy);
        }
    });
}

template <typename T>
Var sub(BasicGraph<T>& g, Var a, Var b) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    require(av.numel() == bv.numel(), "sub: size mismatch");
    BasicTensor<T> y(av.shape);
    for (size_t i = 0; i < y.data.size(); ++i) {
        y.data[i] = av.data[i] - bv.data[i];
    }
    return g.record(std::move(y), {a, b}, [a, b](BasicGraph<T>& gr, Var self) {
        const auto& gy = gr.grad(self);
        if (gr.requires_grad(a)) {
            add_into(gr.grad(a), gy);
        }
        if (gr.requires_grad(b)) {
            auto& gb = gr.grad(b);
            for (size_t i = 0; i < gb.data.size(); ++i) {
                gb.data[i] -= gy.data[i];
            }
        }
    });
}

template <typename T>
Var mul(BasicGraph<T>& g, Var a, Var b) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    require(av.numel() == bv.numel(), "mul: size mismatch");
    BasicTensor<T> y(av.shape);
    for (size_t i = 0; i < y.data.size(); ++i) {
        y.data[i] = av.data[i] * bv.data[i];
    }
    return g.record(std::move(y), {a, b}, [a, b](BasicGraph<T>& gr, Var self) {
        const auto& gy = gr.grad(self);
        if (gr.requires_grad(a)) {
            const auto& bv = gr.value(b);
            auto& ga = gr.grad(a);
            for (size_t i = 0; i < ga.data.size(); ++i) {
                ga.data[i] += gy.data[i] * bv.data[i];
            }
        }
        if (gr.requires_grad(b)) {
            const auto& av = gr.value(a);
            auto& gb = gr.grad(b);
            for (size_t i = 0; i < gb.data.size(); ++i) {
                gb.data[i] += gy.data[i] * av.data[i];
            }
        }
    });
}

template <typename T>
Var scale(BasicGraph<T>& g, Var a, T s) {
    const auto& av = g.value(a);
    BasicTensor<T> y(av.shape);
    for (size_t i = 0; i < y.data.size(); ++i) {
        y.data[i] = av.data[i] * s;
    }
    return g.record(std::move(y), {a}, [a, s](BasicGraph<T>& gr, Var self) {
        if (!gr.requires_grad(a)) {
            return;
        }
        const auto& gy = gr.grad(self);
        auto& ga = gr.grad(a);
        for (size_t i = 0; i < ga.data.size(); ++i) {
            ga.data[i] += gy.data[i] * s;
        }
    });
}

template <typename T>
Var add_row(BasicGraph<T>& g, Var x, Var r) {
    const auto& xv = g.value(x);
    const auto& rv = g.value(r);
    const int n = xv.rows(), d = xv.cols();
    require(static_cast<int>(rv.numel()) == d, "add_row: row width mismatch");
    BasicTensor<T> y(xv.shape);
    for (int i = 0; i < n; ++i) {
        const T* xi = xv.row(i);
        T* yi = y.row(i);
        for (int j = 0; j < d; ++j) {
            yi[j] = xi[j] + rv.data[static_cast<size_t>(j)];
        }
    }
    return g.record(std::move(y), {x, r}, [x, r, n, d](BasicGraph<T>& gr, Var self) {
        const auto& gy = gr.grad(self);
        if (gr.requires_grad(x)) {
            add_into(gr.grad(x), gy);
        }
        if (gr.requires_grad(r)) {
            auto& gr_ = gr.grad(r);
            for (int i = 0; i < n; ++i) {
                const T* gi = gy.row(i);
                for (int j = 0; j < d; ++j) {
                    gr_.data[static_cast<size_t>(j)] += gi[j];
                }
            }
        }
    });
}

template <typename T>
Var add_tiled(BasicGraph<T>& g, Var x, Var table, int period) {
    const auto& xv = g.value(x);
    const auto& tv = g.value(table);
    const int n = xv.rows(), d = xv.cols();
    require(period > 0 && n % period == 0, "add_tiled: rows not a multiple of period");
    require(tv.rows() >= period && tv.cols() == d, "add_tiled: table too small");
    BasicTensor<T> y(xv.shape);
    for (int i = 0; i < n; ++i) {
        const T* xi = xv.row(i);
        const T* ti = tv.row(i % period);
        T* yi = y.row(i);
        for (int j = 0; j < d; ++j) {
            yi[j] = xi[j] + ti[j];
        }
    }
    return g.record(std::move(y), {x, table}, [x, table, n, d, period](BasicGraph<T>& gr, Var self) {
        const auto& gy = gr.grad(self);
        if (gr.requires_grad(x)) {
            add_into(gr.grad(x), gy);
        }
        if (gr.requires_grad(table)) {
            auto& gt = gr.grad(table);
            for (int i = 0; i < n; ++i) {
                const T* gi = gy.row(i);
                T* ti = gt.row(i % period);
                for (int j = 0; j < d; ++j) {
                    ti[j] += gi[j];
                }
            }
        }
    });
}

template <typename T>
Var relu(BasicGraph<T>& g, Var x) {
    return unary<T>(
        g, x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var gelu(BasicGraph<T>& g, Var x) {
    return unary<T>(
        g, x, [](T v) { return kernels::gelu(v); }, [](T v, T) { return kernels::gelu_grad(v); });
}

template <typename T>
Var tanh(BasicGraph<T>& g, Var x) {
    return unary<T>(
        g, x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var exp(BasicGraph<T>& g, Var x) {
    return unary<T>(
        g, x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var clamp(BasicGraph<T>& g, Var x, T lo, T hi) {
    const auto& xv = g.value(x);
    BasicTensor<T> y(xv.shape);
    for (size_t i = 0; i < y.data.size(); ++i) {
        y.data[i] = std::min(std::max(xv.data[i], lo), hi);
    }
    return g.record(std::move(y), {x}, [x, lo, hi](BasicGraph<T>& gr, Var self) {
        if (!gr.requires_grad(x)) {
            return;
        }
        const auto& xv = gr.value(x);
        const auto& gy = gr.grad(self);
        auto& gx = gr.grad(x);
        for (size_t i = 0; i < gx.data.size(); ++i) {
            if (xv.data[i] >= lo && xv.data[i] <= hi) {
                gx.data[i] += gy.data[i];
            }
        }
    });
}

template <typename T>
Var minimum(BasicGraph<T>& g, Var a, Var b) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    require(av.numel() == bv.numel(), "minimum: size mismatch");
    BasicTensor<T> y(av.shape);
    for (size_t i = 0; i < y.data.size(); ++i) {
        y.data[i] = std::min(av.data[i], bv.data[i]);
    }
    return g.record(std::move(y), {a, b}, [a, b](BasicGraph<T>& gr, Var self) {
        const auto& av = gr.value(a);
        const auto& bv = gr.value(b);
        const auto& gy = gr.grad(self);
        const bool ga_on = gr.requires_grad(a), gb_on = gr.requires_grad(b);
        for (size_t i = 0; i < gy.data.size(); ++i) {
            // ties route to a
            if (av.data[i] <= bv.data[i]) {
                if (ga_on) {
                    gr.grad(a).data[i] += gy.data[i];
                }
            } else if (gb_on) {
                gr.grad(b).data[i] += gy.data[i];
            }
        }
    });
}

template <typename T>
Var layer_norm(BasicGraph<T>& g, Var x, Var gamma, Var beta, T eps) {
    const auto& xv = g.value(x);
    const int n = xv.rows(), d = xv.cols();
    require(static_cast<int>(g.value(gamma).numel()) == d &&
                static_cast<int>(g.value(beta).numel()) == d,
            "layer_norm: affine size mismatch");
    BasicTensor<T> y(xv.shape);
    std::vector<T> stats(static_cast<size_t>(2 * n));
    const T* gm = g.value(gamma).data.data();
    const T* bt = g.value(beta).data.data();
    for (int i = 0; i < n; ++i) {
        kernels::layer_norm_row(xv.row(i), gm, bt, y.row(i), d, eps, &stats[2 * i],
                                &stats[2 * i + 1]);
    }
    return g.record(std::move(y), {x, gamma, beta},
                    [x, gamma, beta, n, d, stats = std::move(stats)](BasicGraph<T>& gr, Var self) {
                        const auto& xv = gr.value(x);
                        const auto& gv = gr.value(gamma);
                        const auto& gy = gr.grad(self);
                        const bool need_x = gr.requires_grad(x);
                        const bool need_g = gr.requires_grad(gamma);
                        const bool need_b = gr.requires_grad(beta);
                        std::vector<T> xhat(static_cast<size_t>(d)), dxhat(static_cast<size_t>(d));
                        for (int i = 0; i < n; ++i) {
                            const T mu = stats[2 * i], rstd = stats[2 * i + 1];
                            const T* xi = xv.row(i);
                            const T* gi = gy.row(i);
                            T m1 = T(0), m2 = T(0);
                            for (int j = 0; j < d; ++j) {
                                xhat[j] = (xi[j] - mu) * rstd;
                                dxhat[j] = gi[j] * gv.data[static_cast<size_t>(j)];
                                m1 += dxhat[j];
                                m2 += dxhat[j] * xhat[j];
                            }
                            m1 /= static_cast<T>(d);
                            m2 /= static_cast<T>(d);
                            if (need_g) {
                                auto& gg = gr.grad(gamma);
                                for (int j = 0; j < d; ++j) {
                                    gg.data[static_cast<size_t>(j)] += gi[j] * xhat[j];
                                }
                            }
                            if (need_b) {
                                auto& gb = gr.grad(beta);
                                for (int j = 0; j < d; ++j) {
                                    gb.data[static_cast<size_t>(j)] += gi[j];
                                }
                            }
                            if (need_x) {
                                T* gx = gr.grad(x).row(i);
                                for (int j = 0; j < d; ++j) {
                                    gx[j] += rstd * (dxhat[j] - m1 - xhat[j] * m2);
                                }
                            }
                        }
                    });
}

template <typename T>
void log_softmax_row(const T* x, T* out, int n) {
    T mx = x[0];
    for (int j = 1; j < n; ++j) {
        mx = std::max(mx, x[j]);
    }
    T s = T(0);
    for (int j = 0; j < n; ++j) {
        s += std::exp(x[j] - mx);
    }
    const T lse = mx + std::log(s);
    for (int j = 0; j < n; ++j) {
        out[j] = x[j] - lse;
    }
}

template <typename T>
Var softmax(BasicGraph<T>& g, Var x) {
    const auto& xv = g.value(x);
    require_finite(xv, "softmax");
    const int n = xv.rows(), d = xv.cols();
    BasicTensor<T> y(xv.shape);
    for (int i = 0; i < n; ++i) {
        log_softmax_row(xv.row(i), y.row(i), d);
        for (int j = 0; j < d; ++j) {
            y.row(i)[j] = std::exp(y.row(i)[j]);
        }
    }
    return g.record(std::move(y), {x}, [x, n, d](BasicGraph<T>& gr, Var self) {
        if (!gr.requires_grad(x)) {
            return;
        }
        const auto& yv = gr.value(self);
        const auto& gy = gr.grad(self);
        auto& gx = gr.grad(x);
        for (int i = 0; i < n; ++i) {
            const T* yi = yv.row(i);
            const T* gi = gy.row(i);
            T dot = T(0);
            for (int j = 0; j < d; ++j) {
                dot += yi[j] * gi[j];
            }
            T* gxi = gx.row(i);
            for (int j = 0; j < d; ++j) {
                gxi[j] += yi[j] * (gi[j] - dot);
            }
        }
    });
}

template <typename T>
Var log_softmax(BasicGraph<T>& g, Var x) {
    const auto& xv = g.value(x);
    require_finite(xv, "log_softmax");
    const int n = xv.rows(), d = xv.cols();
    BasicTensor<T> y(xv.shape);
    for (int i = 0; i < n; ++i) {
        log_softmax_row(xv.row(i), y.row(i), d);
    }
    return g.record(std::move(y), {x}, [x, n, d](BasicGraph<T>& gr, Var self) {
        if (!gr.requires_grad(x)) {
            return;
        }
        const auto& yv = gr.value(self);
        const auto& gy = gr.grad(self);
        auto& gx = gr.grad(x);
        for (int i = 0; i < n; ++i) {
            const T* yi = yv.row(i);
            const T* gi = gy.row(i);
            T s = T(0);
            for (int j = 0; j < d; ++j) {
                s += gi[j];
            }
            T* gxi = gx.row(i);
            for (int j = 0; j < d; ++j) {
                gxi[j] += gi[j] - std::exp(yi[j]) * s;
            }
        }
    });
}

template <typename T>
Var cross_entropy(BasicGraph<T>& g, Var logits, std::span<const int> targets) {
    const auto& xv = g.value(logits);
    require_finite(xv, "cross_entropy");
    const int n = xv.rows(), v = xv.cols();
    if (static_cast<int>(targets.size()) != n) {
        throw std::invalid_argument("cross_entropy: one target per row required");
    }
    std::vector<int> tgt(targets.begin(), targets.end());
    for (int t : tgt) {
        if (t < 0 || t >= v) {
            throw std::out_of_range("cross_entropy: target " + std::to_string(t) +
                                    " outside [0, " + std::to_string(v) + ")");
        }
    }
    std::vector<T> logp(static_cast<size_t>(n) * v);
    T total = T(0);
    for (int i = 0; i < n; ++i) {
        log_softmax_row(xv.row(i), &logp[static_cast<size_t>(i) * v], v);
        total -= logp[static_cast<size_t>(i) * v + tgt[static_cast<size_t>(i)]];
    }
    BasicTensor<T> y({1}, {total / static_cast<T>(n)});
    return g.record(std::move(y), {logits},
                    [logits, n, v, tgt = std::move(tgt), logp = std::move(logp)](BasicGraph<T>& gr,
                                                                                Var self) {
                        if (!gr.requires_grad(logits)) {
                            return;
                        }
                        const T go = gr.grad(self).data[0] / static_cast<T>(n);
                        auto& gx = gr.grad(logits);
                        for (int i = 0; i < n; ++i) {
                            T* gi = gx.row(i);
                            const T* li = &logp[static_cast<size_t>(i) * v];
                            for (int j = 0; j < v; ++j) {
                                gi[j] += go * std::exp(li[j]);
                            }
                            gi[tgt[static_cast<size_t>(i)]] -= go;
                        }
                    });
}

template <typename T>
Var pick(BasicGraph<T>& g, Var x, std::span<const int> index) {
    const auto& xv = g.value(x);
    const int n = xv.rows(), d = xv.cols();
    if (static_cast<int>(index.size()) != n) {
        throw std::invalid_argument("pick: one index per row required");
    }
    std::vector<int> idx(index.begin(), index.end());
    BasicTensor<T> y({n, 1});
    for (int i = 0; i < n; ++i) {
        if (idx[i] < 0 || idx[i] >= d) {
            throw std::out_of_range("pick: index out of range");
        }
        y.data[static_cast<size_t>(i)] = xv.row(i)[idx[i]];
    }
    return g.record(std::move(y), {x}, [x, n, idx = std::move(idx)](BasicGraph<T>& gr, Var self) {
        if (!gr.requires_grad(x)) {
            return;
        }
        const auto& gy = gr.grad(self);
        auto& gx = gr.grad(x);
        for (int i = 0; i < n; ++i) {
            gx.row(i)[idx[static_cast<size_t>(i)]] += gy.data[static_cast<size_t>(i)];
        }
    });
}

template <typename T>
Var sum(BasicGraph<T>& g, Var x) {
    const auto& xv = g.value(x);
    T s = T(0);
    for (T v : xv.data) {
        s += v;
    }
    return g.record(BasicTensor<T>({1}, {s}), {x}, [x](BasicGraph<T>& gr, Var self) {
        if (!gr.requires_grad(x)) {
            return;
        }
        const T go = gr.grad(self).data[0];
        for (auto& v : gr.grad(x).data) {
            v += go;
        }
    });
}

template <typename T>
Var mean(BasicGraph<T>& g, Var x) {
    const size_t n = g.value(x).numel();
    require(n > 0, "mean: empty tensor");
    return scale(g, sum(g, x), T(1) / static_cast<T>(n));
}

template <typename T>
Var mse(BasicGraph<T>& g, Var a, Var b) {
    return mean(g, mul(g, sub(g, a, b), sub(g, a, b)));
}

template <typename T>
Var embedding(BasicGraph<T>& g, Var table, std::span<const int> ids) {
    const auto& tv = g.value(table);
    const int vocab = tv.rows(), d = tv.cols();
    const int n = static_cast<int>(ids.size());
    std::vector<int> idx(ids.begin(), ids.end());
    BasicTensor<T> y({n, d});
    for (int i = 0; i < n; ++i) {
        if (idx[static_cast<size_t>(i)] < 0 || idx[static_cast<size_t>(i)] >= vocab) {
            throw std::out_of_range("embedding: id " + std::to_string(idx[static_cast<size_t>(i)]) +
                                    " outside table of " + std::to_string(vocab));
        }
        std::copy(tv.row(idx[static_cast<size_t>(i)]), tv.row(idx[static_cast<size_t>(i)]) + d,
                  y.row(i));
    }
    return g.record(std::move(y), {table},
                    [table, n, d, idx = std::move(idx)](BasicGraph<T>& gr, Var self) {
                        if (!gr.requires_grad(table)) {
                            return;
                        }
                        const auto& gy = gr.grad(self);
                        auto& gt = gr.grad(table);
                        for (int i = 0; i < n; ++i) {
                            T* ti = gt.row(idx[static_cast<size_t>(i)]);
                            const T* gi = gy.row(i);
                            for (int j = 0; j < d; ++j) {
                                ti[j] += gi[j];
                            }
                        }
                    });
}

template <typename T>
Var concat_rows(BasicGraph<T>& g, const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    const int d = g.value(parts[0]).cols();
    int n = 0;
    std::vector<int> offsets;
    for (Var p : parts) {
        require(g.value(p).cols() == d, "concat_rows: width mismatch");
        offsets.push_back(n);
        n += g.value(p).rows();
    }
    BasicTensor<T> y({n, d});
    for (size_t k = 0; k < parts.size(); ++k) {
        const auto& pv = g.value(parts[k]);
        std::copy(pv.data.begin(), pv.data.end(),
                  y.data.begin() + static_cast<std::ptrdiff_t>(offsets[k]) * d);
    }
    return g.record(std::move(y), parts,
                    [parts, offsets = std::move(offsets), d](BasicGraph<T>& gr, Var self) {
                        const auto& gy = gr.grad(self);
                        for (size_t k = 0; k < parts.size(); ++k) {
                            if (!gr.requires_grad(parts[k])) {
                                continue;
                            }
                            auto& gp = gr.grad(parts[k]);
                            const T* src = gy.data.data() + static_cast<size_t>(offsets[k]) * d;
                            for (size_t i = 0; i < gp.data.size(); ++i) {
                                gp.data[i] += src[i];
                            }
                        }
                    });
}

template <typename T>
Var slice_rows(BasicGraph<T>& g, Var x, int begin, int end) {
    const auto& xv = g.value(x);
    require(begin >= 0 && begin <= end && end <= xv.rows(), "slice_rows: bad range");
    const int d = xv.cols();
    BasicTensor<T> y({end - begin, d});
    std::copy(xv.row(begin), xv.row(begin) + static_cast<size_t>(end - begin) * d, y.data.begin());
    return g.record(std::move(y), {x}, [x, begin, d](BasicGraph<T>& gr, Var self) {
        if (!gr.requires_grad(x)) {
            return;
        }
        const auto& gy = gr.grad(self);
        T* dst = gr.grad(x).row(begin);
        for (size_t i = 0; i < gy.data.size(); ++i) {
            dst[i] += gy.data[i];
        }
        (void)d;
    });
}

template <typename T>
Var transpose(BasicGraph<T>& g, Var x) {
    const auto& xv = g.value(x);
    const int n = xv.rows(), d = xv.cols();
    BasicTensor<T> y({d, n});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            y.row(j)[i] = xv.row(i)[j];
        }
    }
    return g.record(std::move(y), {x}, [x, n, d](BasicGraph<T>& gr, Var self) {
        if (!gr.requires_grad(x)) {
            return;
        }
        const auto& gy = gr.grad(self);
        auto& gx = gr.grad(x);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) {
                gx.row(i)[j] += gy.row(j)[i];
            }
        }
    });
}

template <typename T>
Var gather_rows(BasicGraph<T>& g, Var x, std::span<const int> rows) {
    const auto& xv = g.value(x);
    const int d = xv.cols();
    std::vector<int> idx(rows.begin(), rows.end());
    BasicTensor<T> y({static_cast<int>(idx.size()), d});
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= xv.rows()) {
            throw std::out_of_range("gather_rows: row index out of range");
        }
        std::copy(xv.row(idx[i]), xv.row(idx[i]) + d, y.row(static_cast<int>(i)));
    }
    return g.record(std::move(y), {x}, [x, d, idx = std::move(idx)](BasicGraph<T>& gr, Var self) {
        if (!gr.requires_grad(x)) {
            return;
        }
        const auto& gy = gr.grad(self);
        auto& gx = gr.grad(x);
        for (size_t i = 0; i < idx.size(); ++i) {
            T* dst = gx.row(idx[i]);
            const T* src = gy.row(static_cast<int>(i));
            for (int j = 0; j < d; ++j) {
                dst[j] += src[j];
            }
        }
    });
}

template <typename T>
Var attention(BasicGraph<T>& g, Var q, Var k, Var v, int heads, int groups, bool causal) {
    const auto& qv = g.value(q);
    const auto& kv = g.value(k);
    const auto& vv = g.value(v);
    const int d = qv.cols();
    require(kv.cols() == d && vv.cols() == d, "attention: width mismatch");
    require(heads > 0 && d % heads == 0, "attention: width not divisible by heads");
    require(groups > 0 && qv.rows() % groups == 0 && kv.rows() % groups == 0 &&
                vv.rows() == kv.rows(),
            "attention: rows not divisible by groups");
    const int sq = qv.rows() / groups, sk = kv.rows() / groups, hd = d / heads;
    require(!causal || sk >= sq, "attention: causal needs at least as many keys as queries");
    const T sc = T(1) / std::sqrt(static_cast<T>(hd));
    const bool keep = g.grad_enabled() &&
                      (g.requires_grad(q) || g.requires_grad(k) || g.requires_grad(v));

    BasicTensor<T> y(qv.shape);
    std::vector<T> probs(keep ? static_cast<size_t>(groups) * sq * heads * sk : 0);
    std::vector<T> scratch(static_cast<size_t>(sk));
    for (int gi = 0; gi < groups; ++gi) {
        for (int i = 0; i < sq; ++i) {
            const int visible = causal ? i + (sk - sq) + 1 : sk;
            const int qrow = gi * sq + i;
            T* pr = keep ? &probs[(static_cast<size_t>(qrow) * heads) * sk] : nullptr;
            if (keep) {
                // probs rows are laid out [head][sk]; attention_row packs them as [head][visible]
                std::vector<T> packed(static_cast<size_t>(heads) * visible);
                kernels::attention_row(qv.row(qrow), kv.row(gi * sk), vv.row(gi * sk), d, visible,
                                       y.row(qrow), heads, hd, sc, scratch.data(), packed.data());
                for (int h = 0; h < heads; ++h) {
                    std::copy(packed.begin() + static_cast<std::ptrdiff_t>(h) * visible,
                              packed.begin() + static_cast<std::ptrdiff_t>(h + 1) * visible,
                              pr + static_cast<size_t>(h) * sk);
                }
            } else {
                kernels::attention_row(qv.row(qrow), kv.row(gi * sk), vv.row(gi * sk), d, visible,
                                       y.row(qrow), heads, hd, sc, scratch.data());
            }
        }
    }
    return g.record(
        std::move(y), {q, k, v},
        [q, k, v, heads, groups, causal, sq, sk, hd, d, sc,
         probs = std::move(probs)](BasicGraph<T>& gr, Var self) {
            const auto& qv = gr.value(q);
            const auto& kv = gr.value(k);
            const auto& vv = gr.value(v);
            const auto& gy = gr.grad(self);
            const bool nq = gr.requires_grad(q), nk = gr.requires_grad(k), nv = gr.requires_grad(v);
            T* gq = nq ? gr.grad(q).data.data() : nullptr;
            T* gk = nk ? gr.grad(k).data.data() : nullptr;
            T* gv = nv ? gr.grad(v).data.data() : nullptr;
            std::vector<T> dp(static_cast<size_t>(sk));
            for (int gi = 0; gi < groups; ++gi) {
                for (int i = 0; i < sq; ++i) {
                    const int visible = causal ? i + (sk - sq) + 1 : sk;
                    const int qrow = gi * sq + i;
                    const T* go = gy.row(qrow);
                    for (int h = 0; h < heads; ++h) {
                        const int off = h * hd;
                        const T* p = &probs[(static_cast<size_t>(qrow) * heads + h) * sk];
                        T dot = T(0);
                        for (int j = 0; j < visible; ++j) {
                            const int krow = gi * sk + j;
                            const T* vj = vv.row(krow) + off;
                            T s = T(0);
                            for (int e = 0; e < hd; ++e) {
                                s += go[off + e] * vj[e];
                            }
                            dp[static_cast<size_t>(j)] = s;
                            dot += s * p[j];
                            if (gv != nullptr) {
                                T* gvj = gv + static_cast<size_t>(krow) * d + off;
                                for (int e = 0; e < hd; ++e) {
                                    gvj[e] += p[j] * go[off + e];
                                }
                            }
                        }
                        if (gq == nullptr && gk == nullptr) {
                            continue;
                        }
                        const T* qi = qv.row(qrow) + off;
                        for (int j = 0; j < visible; ++j) {
                            const T ds = p[j] * (dp[static_cast<size_t>(j)] - dot) * sc;
                            const int krow = gi * sk + j;
                            if (gq != nullptr) {
                                const T* kj = kv.row(krow) + off;
                                T* gqi = gq + static_cast<size_t>(qrow) * d + off;
                                for (int e = 0; e < hd; ++e) {
                                    gqi[e] += ds * kj[e];
                                }
                            }
                            if (gk != nullptr) {
                                T* gkj = gk + static_cast<size_t>(krow) * d + off;
                                for (int e = 0; e < hd; ++e) {
                                    gkj[e] += ds * qi[e];
                                }
                            }
                        }
                    }
                }
            }
        });
}

template <typename T>
Var conv1d(BasicGraph<T>& g, Var x, Var w, Var bias, int groups, int kernel, int stride, int pad) {
    const auto& xv = g.value(x);
    const auto& wv = g.value(w);
    require(groups > 0 && xv.rows() % groups == 0, "conv1d: rows not divisible by groups");
    const int len = xv.rows() / groups, cin = xv.cols(), cout = wv.cols();
    require(wv.rows() == kernel * cin, "conv1d: weight must be [kernel*cin, cout]");
    require(stride > 0 && (len + 2 * pad - kernel) >= 0, "conv1d: input too short");
    const int lout = (len + 2 * pad - kernel) / stride + 1;
    const int kc = kernel * cin;
    const int rows = groups * lout;
    std::vector<T> cols(static_cast<size_t>(rows) * kc, T(0));
    for (int gi = 0; gi < groups; ++gi) {
        for (int t = 0; t < lout; ++t) {
            T* dst = &cols[static_cast<size_t>(gi * lout + t) * kc];
            for (int kk = 0; kk < kernel; ++kk) {
                const int src = t * stride - pad + kk;
                if (src < 0 || src >= len) {
                    continue;
                }
                std::copy(xv.row(gi * len + src), xv.row(gi * len + src) + cin, dst + kk * cin);
            }
        }
    }
    BasicTensor<T> y({rows, cout});
    kernels::linear_forward(cols.data(), wv.data.data(),
                            bias.valid() ? g.value(bias).data.data() : nullptr, y.data.data(), rows,
                            kc, cout);
    return g.record(
        std::move(y), {x, w, bias},
        [x, w, bias, groups, kernel, stride, pad, len, cin, cout, lout, kc, rows,
         cols = std::move(cols)](BasicGraph<T>& gr, Var self) {
            const auto& gy = gr.grad(self);
            if (gr.requires_grad(w)) {
                kernels::matmul_tn_acc(cols.data(), gy.data.data(), gr.grad(w).data.data(), rows, kc,
                                       cout);
            }
            if (bias.valid() && gr.requires_grad(bias)) {
                auto& gb = gr.grad(bias);
                for (int i = 0; i < rows; ++i) {
                    for (int j = 0; j < cout; ++j) {
                        gb.data[static_cast<size_t>(j)] += gy.row(i)[j];
                    }
                }
            }
            if (gr.requires_grad(x)) {
                std::vector<T> dcols(static_cast<size_t>(rows) * kc, T(0));
                kernels::matmul_nt_acc(gy.data.data(), gr.value(w).data.data(), dcols.data(), rows,
                                       kc, cout);
                auto& gx = gr.grad(x);
                for (int gi = 0; gi < groups; ++gi) {
                    for (int t = 0; t < lout; ++t) {
                        const T* src = &dcols[static_cast<size_t>(gi * lout + t) * kc];
                        for (int kk = 0; kk < kernel; ++kk) {
                            const int pos = t * stride - pad + kk;
                            if (pos < 0 || pos >= len) {
                                continue;
                            }
                            T* dst = gx.row(gi * len + pos);
                            for (int c = 0; c < cin; ++c) {
                                dst[c] += src[kk * cin + c];
                            }
                        }
                    }
                }
            }
        });
}

template <typename T>
Var conv_transpose1d(BasicGraph<T>& g, Var x, Var w, Var bias, int groups, int kernel, int stride,
                     int pad) {
    const auto& xv = g.value(x);
    const auto& wv = g.value(w);
    require(groups > 0 && xv.rows() % groups == 0, "conv_transpose1d: rows not divisible by groups");
    const int len = xv.rows() / groups, cin = xv.cols();
    require(wv.rows() == cin && wv.cols() % kernel == 0,
            "conv_transpose1d: weight must be [cin, kernel*cout]");
    const int cout = wv.cols() / kernel;
    const int lout = (len - 1) * stride - 2 * pad + kernel;
    require(lout > 0, "conv_transpose1d: empty output");
    const int n = groups * len;
    const int kc = kernel * cout;
    std::vector<T> full(static_cast<size_t>(n) * kc, T(0));
    kernels::matmul_acc(xv.data.data(), wv.data.data(), full.data(), n, cin, kc);
    BasicTensor<T> y({groups * lout, cout});
    if (bias.valid()) {
        const auto& bv = g.value(bias);
        for (int i = 0; i < y.rows(); ++i) {
            std::copy(bv.data.begin(), bv.data.end(), y.row(i));
        }
    }
    for (int gi = 0; gi < groups; ++gi) {
        for (int t = 0; t < len; ++t) {
            const T* src = &full[static_cast<size_t>(gi * len + t) * kc];
            for (int kk = 0; kk < kernel; ++kk) {
                const int o = t * stride - pad + kk;
                if (o < 0 || o >= lout) {
                    continue;
                }
                T* dst = y.row(gi * lout + o);
                for (int c = 0; c < cout; ++c) {
                    dst[c] += src[kk * cout + c];
                }
            }
        }
    }
    return g.record(
        std::move(y), {x, w, bias},
        [x, w, bias, groups, kernel, stride, pad, len, cin, cout, lout, n, kc](BasicGraph<T>& gr,
                                                                               Var self) {
            const auto& gy = gr.grad(self);
            if (bias.valid() && gr.requires_grad(bias)) {
                auto& gb = gr.grad(bias);
                for (int i = 0; i < gy.rows(); ++i) {
                    for (int c = 0; c < cout; ++c) {
                        gb.data[static_cast<size_t>(c)] += gy.row(i)[c];
                    }
                }
            }
            if (!gr.requires_grad(x) && !gr.requires_grad(w)) {
                return;
            }
            std::vector<T> dfull(static_cast<size_t>(n) * kc, T(0));
            for (int gi = 0; gi < groups; ++gi) {
                for (int t = 0; t < len; ++t) {
                    T* dst = &dfull[static_cast<size_t>(gi * len + t) * kc];
                    for (int kk = 0; kk < kernel; ++kk) {
                        const int o = t * stride - pad + kk;
                        if (o < 0 || o >= lout) {
                            continue;
                        }
                        std::copy(gy.row(gi * lout + o), gy.row(gi * lout + o) + cout,
                                  dst + kk * cout);
                    }
                }
            }
            if (gr.requires_grad(x)) {
                kernels::matmul_nt_acc(dfull.data(), gr.value(w).data.data(),
                                       gr.grad(x).data.data(), n, cin, kc);
            }
            if (gr.requires_grad(w)) {
                kernels::matmul_tn_acc(gr.value(x).data.data(), dfull.data(),
                                       gr.grad(w).data.data(), n, cin, kc);
            }
        });
}

template <typename T>
Var straight_through(BasicGraph<T>& g, Var x, Var q) {
    require(g.value(x).numel() == g.value(q).numel(), "straight_through: size mismatch");
    BasicTensor<T> y(g.value(x).shape, g.value(q).data);
    return g.record(std::move(y), {x}, [x](BasicGraph<T>& gr, Var self) {
        if (gr.requires_grad(x)) {
            add_into(gr.grad(x), gr.grad(self));
        }
    });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits, int axis) {
    require_finite(logits, "softmax");
    if (logits.rank() == 0) {
        throw std::invalid_argument("softmax: scalar input");
    }
    if (axis < 0) {
        axis += logits.rank();
    }
    if (axis < 0 || axis >= logits.rank()) {
        throw std::out_of_range("softmax: axis out of range");
    }
    size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) {
        outer *= static_cast<size_t>(logits.shape[static_cast<size_t>(i)]);
    }
    for (int i = axis + 1; i < logits.rank(); ++i) {
        inner *= static_cast<size_t>(logits.shape[static_cast<size_t>(i)]);
    }
    const size_t n = static_cast<size_t>(logits.shape[static_cast<size_t>(axis)]);
    BasicTensor<T> out(logits.shape);
    for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
            auto at = [&](size_t j) { return o * n * inner + j * inner + in; };
            T mx = logits.data[at(0)];
            for (size_t j = 1; j < n; ++j) {
                mx = std::max(mx, logits.data[at(j)]);
            }
            T s = T(0);
            for (size_t j = 0; j < n; ++j) {
                out.data[at(j)] = std::exp(logits.data[at(j)] - mx);
                s += out.data[at(j)];
            }
            for (size_t j = 0; j < n; ++j) {
                out.data[at(j)] /= s;
            }
        }
    }
    return out;
}

template <typename T>
T cross_entropy(const BasicTensor<T>& logits, int target) {
    require_finite(logits, "cross_entropy");
    const int v = static_cast<int>(logits.numel());
    if (target < 0 || target >= v) {
        throw std::out_of_range("cross_entropy: target " + std::to_string(target) +
                                " outside [0, " + std::to_string(v) + ")");
    }
    std::vector<T> lp(static_cast<size_t>(v));
    log_softmax_row(logits.data.data(), lp.data(), v);
    return -lp[static_cast<size_t>(target)];
}

#define SIREN_INSTANTIATE_OPS(T)                                                                   \
    template Var matmul<T>(BasicGraph<T>&, Var, Var);                                              \
    template Var transpose<T>(BasicGraph<T>&, Var);                                                \
    template Var linear<T>(BasicGraph<T>&, Var, Var, Var);                                         \
    template Var add<T>(BasicGraph<T>&, Var, Var);                                                 \
    template Var sub<T>(BasicGraph<T>&, Var, Var);                                                 \
    template Var mul<T>(BasicGraph<T>&, Var, Var);                                                 \
    template Var scale<T>(BasicGraph<T>&, Var, T);                                                 \
    template Var add_row<T>(BasicGraph<T>&, Var, Var);                                             \
    template Var add_tiled<T>(BasicGraph<T>&, Var, Var, int);                                      \
    template Var relu<T>(BasicGraph<T>&, Var);                                                     \
    template Var gelu<T>(BasicGraph<T>&, Var);                                                     \
    template Var tanh<T>(BasicGraph<T>&, Var);                                                     \
    template Var exp<T>(BasicGraph<T>&, Var);                                                      \
    template Var clamp<T>(BasicGraph<T>&, Var, T, T);                                              \
    template Var minimum<T>(BasicGraph<T>&, Var, Var);                                             \
    template Var layer_norm<T>(BasicGraph<T>&, Var, Var, Var, T);                                  \
    template Var softmax<T>(BasicGraph<T>&, Var);                                                  \
    template Var log_softmax<T>(BasicGraph<T>&, Var);                                              \
    template Var cross_entropy<T>(BasicGraph<T>&, Var, std::span<const int>);                      \
    template Var pick<T>(BasicGraph<T>&, Var, std::span<const int>);                               \
    template Var sum<T>(BasicGraph<T>&, Var);                                                      \
    template Var mean<T>(BasicGraph<T>&, Var);                                                     \
    template Var mse<T>(BasicGraph<T>&, Var, Var);                                                 \
    template Var embedding<T>(BasicGraph<T>&, Var, std::span<const int>);                          \
    template Var concat_rows<T>(BasicGraph<T>&, const std::vector<Var>&);                          \
    template Var slice_rows<T>(BasicGraph<T>&, Var, int, int);                                     \
    template Var gather_rows<T>(BasicGraph<T>&, Var, std::span<const int>);                        \
    template Var attention<T>(BasicGraph<T>&, Var, Var, Var, int, int, bool);                      \
    template Var conv1d<T>(BasicGraph<T>&, Var, Var, Var, int, int, int, int);                     \
    template Var conv_transpose1d<T>(BasicGraph<T>&, Var, Var, Var, int, int, int, int);           \
    template Var straight_through<T>(BasicGraph<T>&, Var, Var);                                    \
    template BasicTensor<T> softmax<T>(const BasicTensor<T>&, int);                                \
    template T cross_entropy<T>(const BasicTensor<T>&, int);                                       \
    template void log_softmax_row<T>(const T*, T*, int);

SIREN_INSTANTIATE_OPS(float)
SIREN_INSTANTIATE_OPS(double)

#undef SIREN_INSTANTIATE_OPS

}  // namespace siren::nn
