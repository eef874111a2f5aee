#pragma once

#include <span>
#include <vector>

#include "siren/nn/graph.h"

namespace siren::nn {

// All tensors passed to these ops are treated as [rows, cols] matrices unless
// stated otherwise. Ops are instantiated for float (training and inference) and
// double (gradient verification).

template <typename T> Var matmul(BasicGraph<T>& g, Var a, Var b);
// x[n,in] * w[in,out] (+ bias[out] when bias is valid).
template <typename T> Var linear(BasicGraph<T>& g, Var x, Var w, Var bias = Var{});

template <typename T> Var add(BasicGraph<T>& g, Var a, Var b);
template <typename T> Var sub(BasicGraph<T>& g, Var a, Var b);
template <typename T> Var mul(BasicGraph<T>& g, Var a, Var b);
template <typename T> Var scale(BasicGraph<T>& g, Var a, T s);
// Broadcast one row r[1,d] (or [d]) onto every row of x[n,d].
template <typename T> Var add_row(BasicGraph<T>& g, Var x, Var r);
// x has groups of `period` rows; row i receives table row (i % period).
template <typename T> Var add_tiled(BasicGraph<T>& g, Var x, Var table, int period);

template <typename T> Var relu(BasicGraph<T>& g, Var x);
template <typename T> Var gelu(BasicGraph<T>& g, Var x);
template <typename T> Var tanh(BasicGraph<T>& g, Var x);
template <typename T> Var exp(BasicGraph<T>& g, Var x);
template <typename T> Var clamp(BasicGraph<T>& g, Var x, T lo, T hi);
template <typename T> Var minimum(BasicGraph<T>& g, Var a, Var b);

template <typename T> Var layer_norm(BasicGraph<T>& g, Var x, Var gamma, Var beta, T eps = T(1e-5));

template <typename T> Var softmax(BasicGraph<T>& g, Var x);
template <typename T> Var log_softmax(BasicGraph<T>& g, Var x);
// Mean over rows of -log softmax(logits)[row, target[row]].
template <typename T> Var cross_entropy(BasicGraph<T>& g, Var logits, std::span<const int> targets);
// out[i,0] = x[i, index[i]]
template <typename T> Var pick(BasicGraph<T>& g, Var x, std::span<const int> index);

template <typename T> Var sum(BasicGraph<T>& g, Var x);
template <typename T> Var mean(BasicGraph<T>& g, Var x);
template <typename T> Var mse(BasicGraph<T>& g, Var a, Var b);

template <typename T> Var embedding(BasicGraph<T>& g, Var table, std::span<const int> ids);
template <typename T> Var concat_rows(BasicGraph<T>& g, const std::vector<Var>& parts);
template <typename T> Var slice_rows(BasicGraph<T>& g, Var x, int begin, int end);
template <typename T> Var transpose(BasicGraph<T>& g, Var x);
template <typename T> Var gather_rows(BasicGraph<T>& g, Var x, std::span<const int> rows);

// q[groups*sq, d], k/v[groups*sk, d]. With causal, query i of a group sees keys
// j <= i + (sk - sq) of the same group.
template <typename T>
Var attention(BasicGraph<T>& g, Var q, Var k, Var v, int heads, int groups, bool causal);

// Time-major 1-D convolution over `groups` independent sequences.
// x[groups*L, cin], w[kernel*cin, cout], bias[cout] -> [groups*Lout, cout],
// Lout = (L + 2*pad - kernel) / stride + 1.
template <typename T>
Var conv1d(BasicGraph<T>& g, Var x, Var w, Var bias, int groups, int kernel, int stride, int pad);
// x[groups*L, cin], w[cin, kernel*cout], bias[cout] -> [groups*Lout, cout],
// Lout = (L - 1) * stride - 2*pad + kernel.
template <typename T>
Var conv_transpose1d(BasicGraph<T>& g, Var x, Var w, Var bias, int groups, int kernel, int stride,
                     int pad);

// Forward value of q, gradient passed straight to x.
template <typename T> Var straight_through(BasicGraph<T>& g, Var x, Var q);

// Eager (non-graph) helpers.
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& logits, int axis);
template <typename T> T cross_entropy(const BasicTensor<T>& logits, int target);
template <typename T> void log_softmax_row(const T* x, T* out, int n);

}  // namespace siren::nn
