#pragma once

#include <vector>

#include "abn/tensor.hpp"

namespace abn {

// 2-D cross-correlation (no kernel flip), zero padding.
// input [N,C,H,W], weight [K,C,kh,kw], bias [K] or undefined.
// Output [N,K,H',W'] with H' = (H + 2*pad - kh)/stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t pad);

// x [N,D] * w [D,M] + b [M] -> [N,M]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// [N,C,H,W] -> [N,C], spatial mean per channel.
Tensor global_average_pool(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// Row-wise softmax of a [N,K] tensor, computed with row-max subtraction.
Tensor softmax_rows(const Tensor& x);

enum class ActivationKind { relu, sigmoid, softmax_rows };
Tensor activation(const Tensor& x, ActivationKind kind);

// Elementwise add/mul. Shapes must match, or b may be [N,1,H,W] against an
// [N,C,H,W] a (broadcast over the channel axis).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

enum class ElementwiseKind { add, mul };
Tensor elementwise(const Tensor& a, const Tensor& b, ElementwiseKind kind);

Tensor add_scalar(const Tensor& x, double s);
Tensor mul_scalar(const Tensor& x, double s);

// Full reductions to a scalar tensor.
Tensor sum(const Tensor& x);
Tensor mean_all(const Tensor& x);

// [N,C,H,W] -> [N,1,H,W], selecting channel c.
Tensor channel_slice(const Tensor& x, std::size_t c);

// Mean over the batch of -log p[n, label[n]]. Probabilities are clamped to
// >= 1e-12 before the log.
Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels);

// Mean over the leading dimension, summed over remaining ones, of
// -[t*log(p) + (1-t)*log(1-p)] with p clamped to [1e-12, 1-1e-12].
Tensor binary_cross_entropy(const Tensor& probs, const Tensor& targets);

inline constexpr double kProbClamp = 1e-12;

}  // namespace abn
