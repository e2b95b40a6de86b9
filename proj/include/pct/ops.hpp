#pragma once

#include <span>
#include <vector>

#include "pct/tensor.hpp"

// Differentiable tensor operations. Every function records its backward rule
// when any input requires a gradient.
namespace pct {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// Adds `b` to every trailing block of `a`; b's shape must be a suffix of a's
// shape (a row bias over positions, an n x n bias over a batch, ...).
Tensor add_broadcast(const Tensor& a, const Tensor& b);

// (m,k)x(k,n), (B,m,k)x(B,k,n) and (B,m,k)x(k,n).
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// Softmax over the last axis, max-subtracted.
Tensor softmax_rows(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Concatenates along the last axis; all other extents must match.
Tensor concat_last(std::span<const Tensor> parts);

// Cross-correlation of an NCHW input with an OIKK kernel. Output extent per
// spatial axis is (in + 2*padding - k) / stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int padding);
// x is NCHW, bias has C entries.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
// NCHW -> (N, C)
Tensor global_avg_pool(const Tensor& x);
// NCHW -> (N, H*W, C) token layout and back.
Tensor to_tokens(const Tensor& x);
Tensor from_tokens(const Tensor& tokens, std::size_t h, std::size_t w);

// Scales every row (last axis) to unit Euclidean norm.
Tensor l2_normalize_rows(const Tensor& x);

// Mean softmax cross-entropy of (N, K) logits against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace pct
