#pragma once

#include "jafar/tensor.hpp"

// Differentiable operations. Every op is instantiated for float (the
// training and inference path) and double (the finite-difference shadow
// path used by grad_check).

namespace jafar {

enum class ElementwiseKind { Add, Sub, Mul, Div };

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, ElementwiseKind kind);
template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, T b, ElementwiseKind kind);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, ElementwiseKind::Add); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, ElementwiseKind::Sub); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, ElementwiseKind::Mul); }
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, ElementwiseKind::Div); }
template <typename T>
Tensor<T> add(const Tensor<T>& a, T b) { return elementwise(a, b, ElementwiseKind::Add); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, T b) { return elementwise(a, b, ElementwiseKind::Mul); }

/// [m x k] . [k x n]. Each output element accumulates over k in ascending
/// order independently of m, so computing a subset of rows is bitwise
/// identical to slicing the full product.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Numerically stable softmax over the last axis of a 2-D tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a);

/// 3x3 convolution, stride 1, zero padding 1: [C_in x H x W] -> [C_out x H x W].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

/// Affine map on the last axis: [... x d_in] . [d_in x d_out] + [d_out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

/// Affine map on the first (channel) axis, i.e. a 1x1 convolution:
/// [C_in x ...] with w [C_in x C_out], b [C_out] -> [C_out x ...].
template <typename T>
Tensor<T> channel_linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

/// SiLU, x * sigmoid(x).
template <typename T>
Tensor<T> activation(const Tensor<T>& x);

/// Mean pooling of [C x H x W] onto an out_h x out_w grid; cell (i, j) averages
/// rows [floor(i*H/out_h), ceil((i+1)*H/out_h)) and the analogous columns.
/// Requires 1 <= out_h <= H and 1 <= out_w <= W.
template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, int out_h, int out_w);

/// Same window rule as adaptive_avg_pool2d but also accepts targets larger
/// than the input, where each window degenerates to one or two cells.
template <typename T>
Tensor<T> adaptive_avg_resize(const Tensor<T>& x, int out_h, int out_w);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Concatenation along the first axis.
template <typename T>
Tensor<T> concat0(const Tensor<T>& a, const Tensor<T>& b);

/// Rows [begin, end) of the first axis.
template <typename T>
Tensor<T> slice0(const Tensor<T>& x, int begin, int end);

/// [N x d] -> [n_heads x N x d/n_heads]; head h owns columns [h*hd, (h+1)*hd).
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int n_heads);

}  // namespace jafar
