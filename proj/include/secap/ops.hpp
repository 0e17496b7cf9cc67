#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "secap/tensor.hpp"

// Differentiable tensor operations. Every op records its backward rule on
// the thread's tape when any input needs a gradient.
namespace secap {

// Numpy-style broadcast of two shapes; throws DimensionError naming both.
Shape broadcast_shapes(const Shape& a, const Shape& b);

enum class ElementwiseOp { Add, Sub, Mul };

template <class T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(ElementwiseOp::Add, a, b);
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(ElementwiseOp::Sub, a, b);
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(ElementwiseOp::Mul, a, b);
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor);

// [..., m, k] x [..., k, n] -> [..., m, n]; batch dims broadcast.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x);

// gamma and beta are 1-D with the size of x's last dimension.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// Exact x * Phi(x).
template <class T>
Tensor<T> gelu(const Tensor<T>& x);

template <class T>
Tensor<T> abs(const Tensor<T>& x);

// ln(1 + exp(x)), evaluated without overflow.
template <class T>
Tensor<T> softplus(const Tensor<T>& x);

// sqrt(max(x, floor)); zero gradient below the floor.
template <class T>
Tensor<T> sqrt_clamped(const Tensor<T>& x, T floor);

template <class T>
Tensor<T> sum(const Tensor<T>& x);
template <class T>
Tensor<T> mean(const Tensor<T>& x);
// Reduces the last axis away.
template <class T>
Tensor<T> sum_lastdim(const Tensor<T>& x);

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
template <class T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape);

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
// Inverse of concat given the part sizes along `axis`.
template <class T>
std::vector<Tensor<T>> split(const Tensor<T>& x, std::size_t axis,
                             const std::vector<std::size_t>& sizes);

// Rows of x (axis 0) in the given order; repeats allowed.
template <class T>
Tensor<T> index_select(const Tensor<T>& x, std::span<const std::size_t> rows);

// Mean softmax cross-entropy of logits [N, C] against integer labels.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int64_t> labels);

}  // namespace secap
