#pragma once

#include <span>

#include "bvq/tensor.hpp"

namespace bvq {

// All operations are differentiable unless noted. Dimension mismatches throw
// DimensionError naming both shapes.

/// Matrix product a[m x k] * b[k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Cross-correlation of input[batch x cin x h x w] with
/// kernels[cout x cin x kh x kw]. No kernel mirroring.
/// h' = (h + 2*padding - kh) / stride + 1, likewise w'.
Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
              std::size_t padding);

/// Elementwise max(0, x); subgradient at exactly 0 is 0.
Tensor relu(const Tensor& x);

/// Row softmax of logits[batch x classes], computed with max subtraction.
Tensor softmax(const Tensor& logits);

/// Row log-softmax, stable in log space.
Tensor log_softmax(const Tensor& logits);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& x, double factor);

/// matrix[m x n] + bias[n] broadcast over rows.
Tensor add_row_bias(const Tensor& matrix, const Tensor& bias);

/// maps[b x c x h x w] + bias[c] broadcast over channels.
Tensor add_channel_bias(const Tensor& maps, const Tensor& bias);

/// Sum of all elements -> scalar.
Tensor sum(const Tensor& x);

/// Mean of all elements -> scalar.
Tensor mean(const Tensor& x);

/// 2x2 average pooling with stride 2 on [b x c x h x w]; trailing odd row or
/// column is dropped.
Tensor avg_pool2(const Tensor& x);

/// Same data in a new shape (element count must match).
Tensor reshape(const Tensor& x, Shape target);

/// Mean over the batch of -log softmax(logits)[label], in log space.
/// Invalid labels throw ContractError.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Mean over rows of (p[i, top1[i]] - p[i, top2[i]]) * inv_norm[i] on
/// softmax probabilities, with the class indices held fixed during
/// differentiation.
Tensor confidence_gap_mean(const Tensor& logits, std::span<const int> top1,
                           std::span<const int> top2,
                           std::span<const double> inv_norms);

/// logits[row, pos] - logits[row, neg] -> scalar.
Tensor logit_margin(const Tensor& logits, std::size_t row, std::size_t pos,
                    std::size_t neg);

}  // namespace bvq
