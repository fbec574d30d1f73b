#pragma once

#include <span>

#include "detectornet/tensor.hpp"

namespace dnet {

class Rng;

// Elementwise arithmetic with NumPy-style broadcasting (shapes aligned from the
// trailing axis; an axis of length 1 or a missing axis stretches).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor relu(const Tensor& x);
Tensor abs(const Tensor& x);

/// Batched matrix product over the last two axes. Leading axes broadcast; a
/// rank-2 operand is shared across the batch.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose_last2(const Tensor& x);

/// Same values in row-major order, new shape.
Tensor reshape(const Tensor& x, Shape shape);
/// `length` consecutive entries of `axis` starting at `start`.
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
Tensor concat(std::span<const Tensor> parts, int axis);

/// Max-shifted softmax along `axis`. Throws NumericError on non-finite input.
Tensor softmax(const Tensor& x, int axis);

/// Normalizes over the last axis with population variance, then applies the
/// per-channel affine `gain * xhat + bias`.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Inverted dropout: zeroes each entry with probability `rate` and rescales the
/// survivors by 1/(1-rate).
Tensor dropout(const Tensor& x, double rate, Rng& rng);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Shape after broadcasting `a` against `b`; throws DimensionError otherwise.
Shape broadcast_shapes(const Shape& a, const Shape& b);

}  // namespace dnet
