#pragma once

#include <functional>
#include <span>
#include <vector>

#include "famadapt/rng.hpp"
#include "famadapt/tensor.hpp"

namespace famadapt {

using TokenId = std::int32_t;

// Differentiable primitives. Each op computes its forward value immediately
// and, when a Graph is recording and the result requires a gradient, appends
// one backward step to the tape. With no Graph active the ops are plain
// evaluation, which is what decoding and validation use.

// c = a . b for 2-D tensors [m x k] . [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);

// 2-D transpose.
Tensor transpose(const Tensor& x);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// x[... x n] + bias[n], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);

// Softmax over the last axis; rows sum to 1.
Tensor softmax(const Tensor& x);

// Per-position normalization over the last axis, then affine scale/offset.
Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& offset, double eps);

// Row gather; backward scatters into the looked-up rows only.
Tensor embedding_lookup(const Tensor& table, std::span<const TokenId> ids);

// Mean over non-pad positions of the label-smoothed negative log-likelihood.
// q(target) = 1-eps+eps/V, q(other) = eps/V. Throws if every position is pad.
Tensor label_smoothed_nll(const Tensor& logits, std::span<const TokenId> targets,
                          double epsilon, TokenId pad_id);

// Inverted dropout with a per-call mask drawn from rng; rate 0 is an exact
// identity with no rng draws.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

// Sum of all elements, as a scalar tensor.
Tensor sum(const Tensor& x);

// Column slice / concatenation of 2-D tensors (used for attention heads).
Tensor slice_cols(const Tensor& x, Index start, Index count);
Tensor concat_cols(std::span<const Tensor> parts);

// Compares the analytic gradient of a scalar-valued function against central
// finite differences, coordinate by coordinate. Returns the max relative
// error with denominator max(|analytic|, |numeric|, 1e-8).
double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, double step);

}  // namespace famadapt
