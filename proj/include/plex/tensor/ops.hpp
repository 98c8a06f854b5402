#pragma once

#include <cstdint>
#include <vector>

#include "plex/core/random.hpp"
#include "plex/tensor/tensor.hpp"

namespace plex::tensor {

using plex::Rng;

// Matrix product of [m x k] and [k x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

// Elementwise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

// x[n x d] + bias[d] broadcast over rows.
template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& bias);

// x[n x in] * weight[in x out] + bias[out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

// Tanh approximation used by GPT-2.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> tanh(const Tensor<T>& x);

// Max-subtracted softmax along `axis`. Throws NumericError on NaN/inf input.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Normalizes over the last axis, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

// Sum over all elements of (pred - target)^2.
template <typename T>
Tensor<T> sum_sq_error(const Tensor<T>& pred, const Tensor<T>& target);

// Same value, no gradient path back to x.
template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Rows [begin, end) of a matrix.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);

// Columns [begin, end) of a matrix.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end);

// Stacks matrices (or vectors, treated as single rows) along the row axis.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);

// out[r] = table[indices[r]].
template <typename T>
Tensor<T> index_rows(const Tensor<T>& table, const std::vector<std::size_t>& indices);

// For x[n x D] holding per-distance scores, out[i][j] = x[i][i - j] when j <= i and
// i - j < D; zero elsewhere. Realizes the relative-position lookup in attention.
template <typename T>
Tensor<T> relative_gather(const Tensor<T>& x);

// 2-D convolution over x[N x C x H x W] with weight[O x C x k x k] and bias[O].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad);

// Inverted dropout. Identity when p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, Rng& rng);

}  // namespace plex::tensor
