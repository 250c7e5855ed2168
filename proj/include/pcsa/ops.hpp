#pragma once

#include <cstdint>
#include <vector>

#include "pcsa/tape.hpp"
#include "pcsa/tensor.hpp"

// Differentiable tensor operations. Every op checks its output for NaN/Inf
// and, when a tape is active and an input requires grad, records a backward
// rule on that tape.

namespace pcsa {

// Elementwise binary ops. Operands must have equal rank; an axis may differ
// only when one side has extent 1 on it.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);

template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
/// Subgradient 0 at the origin.
template <typename T> Tensor<T> abs(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T> std::vector<Tensor<T>> split(const Tensor<T>& x, const std::vector<std::int64_t>& sizes, int axis);
/// Splits channels (axis 1) into two equal halves.
template <typename T> std::vector<Tensor<T>> split_channels(const Tensor<T>& x);
/// Swaps the H and W axes of an N,C,H,W tensor.
template <typename T> Tensor<T> transpose_hw(const Tensor<T>& x);
/// Zero padding of the two spatial axes.
template <typename T> Tensor<T> pad2d(const Tensor<T>& x, std::int64_t pad_h, std::int64_t pad_w);
template <typename T> Tensor<T> upsample_nearest2x(const Tensor<T>& x);

/// Cross-correlation with zero padding. Output extent is
/// floor((H + 2*pad - Kh) / stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int pad);

/// Per-channel convolution, stride 1; weight is [C,1,Kh,Kw].
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int pad);

template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Max-subtracted softmax along axis.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);

/// Normalizes each pixel across channels, then applies per-channel affine
/// weight [C] and bias [C].
template <typename T>
Tensor<T> channel_norm(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, double eps = 1e-5);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

}  // namespace pcsa
