#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mqir/numerics/graph.hpp"

namespace mqir::num {

/// x[..., k] · w[k, n] -> [..., n]; leading axes are flattened into rows.
template <typename T>
Tensor<T> matmul(Tensor<T> x, Tensor<T> w);

/// a[b, m, k] · b[b, k, n] -> [b, m, n]; with transpose_b, b is [b, n, k].
template <typename T>
Tensor<T> batched_matmul(Tensor<T> a, Tensor<T> b, bool transpose_b = false);

/// Two-dimensional transpose.
template <typename T>
Tensor<T> transpose(Tensor<T> x);

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b);

/// a + b where b's shape is a trailing suffix of a's shape (bias, position tables).
template <typename T>
Tensor<T> add_broadcast(Tensor<T> a, Tensor<T> b);

template <typename T>
Tensor<T> scale(Tensor<T> x, T factor);

/// Gradient at exactly zero is zero.
template <typename T>
Tensor<T> relu(Tensor<T> x);

template <typename T>
Tensor<T> exp(Tensor<T> x);

template <typename T>
Tensor<T> log(Tensor<T> x);

template <typename T>
Tensor<T> softmax(Tensor<T> x);

template <typename T>
Tensor<T> log_softmax(Tensor<T> x);

inline constexpr double kLayerNormEpsilon = 1e-6;

/// Normalises the last axis, then applies gain and bias (both [d]).
/// A constant row normalises to exactly zero.
template <typename T>
Tensor<T> layer_norm(Tensor<T> x, Tensor<T> gain, Tensor<T> bias,
                     T epsilon = static_cast<T>(kLayerNormEpsilon));

/// Mean over one axis; that axis is removed (a rank-1 input yields [1]).
template <typename T>
Tensor<T> mean(Tensor<T> x, std::size_t axis);

/// Mean of all entries -> [1].
template <typename T>
Tensor<T> mean_all(Tensor<T> x);

/// x[b, s, d] averaged over s using mask[b * s]; rows with no valid entry give zeros.
template <typename T>
Tensor<T> masked_mean(Tensor<T> x, std::span<const std::uint8_t> mask);

/// Rows of table[v, d] selected by ids; result shape is prefix + [d].
template <typename T>
Tensor<T> embedding(Tensor<T> table, std::span<const std::int32_t> ids, Shape prefix);

/// Inverted dropout; identity in inference mode or when rate is 0.
template <typename T>
Tensor<T> dropout(Tensor<T> x, double rate);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

template <typename T>
Tensor<T> slice(Tensor<T> x, std::size_t axis, std::size_t start, std::size_t length);

/// x[b, q, k] with key_mask[b * k]: adds `fill` wherever the key is masked out.
template <typename T>
Tensor<T> mask_fill(Tensor<T> x, std::span<const std::uint8_t> key_mask, T fill = T(-1e9));

/// x[r, c] -> [r] with element (i, index[i]).
template <typename T>
Tensor<T> pick(Tensor<T> x, std::span<const std::size_t> index);

template <typename T>
Tensor<T> reshape(Tensor<T> x, Shape shape);

/// x · w + b for w[k, n], b[n].
template <typename T>
Tensor<T> linear(Tensor<T> x, Tensor<T> w, Tensor<T> b);

}  // namespace mqir::num
