#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "onelatent/numeric/tensor.hpp"

// Differentiable ops. Every reduction runs in a fixed, sequential order:
// matrix products accumulate over the inner index in ascending order, row
// reductions run left to right, and scalar reductions run in row-major order.
// No op reassociates a sum, so results are bit-identical across runs.
namespace onelatent::numeric {

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// [m,n] + [n] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);

// Per-row normalization with affine gain/bias, both [n].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// tanh approximation.
Tensor gelu(const Tensor& x);

// Rows of `table` ([V,d]) selected by `ids` -> [len,d].
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

// Rows [begin, end) of a rank-2 tensor.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);

Tensor concat_rows(const std::vector<Tensor>& parts);

// Same as `x` with row `row` replaced by `v` ([d] or [1,d]).
Tensor replace_row(const Tensor& x, std::size_t row, const Tensor& v);

// Multi-head causal attention. q: [n,d] for absolute positions
// offset..offset+n-1; k, v: [m,d] for positions 0..m-1 with m >= offset+n.
// Query at absolute position t attends to keys 0..t only.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                        std::size_t offset);

Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

// -sum_i logp[rows[i], cols[i]].
Tensor nll_sum(const Tensor& log_probs, std::span<const std::size_t> rows, std::span<const int> cols);

// -sum_i log softmax(logits[rows[i]])[targets[i]], fused.
Tensor cross_entropy_sum(const Tensor& logits, std::span<const std::size_t> rows, std::span<const int> targets);

// ||a - b||_2^2 as a scalar; shapes must match in element count.
Tensor squared_distance(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);

// Weighted sum of scalars: sum_i w_i * s_i.
Tensor weighted_sum(const std::vector<Tensor>& scalars, std::span<const double> weights);

}  // namespace onelatent::numeric
