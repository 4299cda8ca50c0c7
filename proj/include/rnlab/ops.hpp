#pragma once

// Differentiable ops on tape variables. Every op checks shapes, records its
// forward value and a closure that pushes the node's gradient to its inputs.

#include <cstddef>
#include <span>
#include <vector>

#include "rnlab/tape.hpp"

namespace rnlab::ops {

// Elementwise, identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var one_minus(Var a);
Var square(Var a);
Var abs(Var a);
Var exp(Var a);
Var log(Var a);
Var relu(Var a);
Var tanh(Var a);

// Reductions to a scalar.
Var sum(Var a);
Var mean(Var a);
Var weighted_sum(Var a, const Tensor& weights);

struct Moments {
    Var mu;
    Var var;
};

/// Per-channel mean and population variance of a [N, C, ...] tensor.
Moments channel_moments(Var x);

/// E[i, j] = -(a[i] - b[j])^2 for vectors a, b.
Var pairwise_neg_sq(Var a, Var b);
/// E[i, j] = -|a[i] - b[j]|.
Var pairwise_neg_abs(Var a, Var b);
/// E[i, j] = cos(A[i, :], B[j, :]) - 1, i.e. negative cosine distance between rows.
Var pairwise_neg_cosine(Var a, Var b);
/// [C] x [C] -> [C, 2].
Var stack_columns(Var a, Var b);

Var transpose(Var m);
Var softmax_rows(Var m);
Var matvec(Var m, Var v);
Var matmul(Var a, Var b);
/// [N, O] + [O] broadcast over rows.
Var add_bias(Var x, Var bias);

/// (x - mu[c]) / sqrt(var[c] + eps) over the channel axis of a [N, C, ...] tensor.
Var normalize_channels(Var x, Var mu, Var var, double eps);
/// gamma[c] * x + beta[c].
Var channel_affine(Var x, Var gamma, Var beta);
/// s[c] * x.
Var channel_scale(Var x, Var s);

Var concat_batch(Var a, Var b);
Var slice_batch(Var x, std::size_t begin, std::size_t end);
/// 1-D slicing and concatenation.
Var slice(Var v, std::size_t begin, std::size_t end);
Var concat(std::span<const Var> parts);

/// Mean cross-entropy of [N, K] logits against integer labels.
Var cross_entropy(Var logits, std::span<const int> labels);

/// Identity forward; backward multiplies the incoming gradient by -lambda.
Var gradient_reversal(Var x, double lambda);
/// Copies the value onto the tape as a constant; no gradient flows back.
Var detach(Var x);

/// Valid (no padding), stride-1 2-D convolution: x[N, Ci, H, W], w[Co, Ci, kh, kw], b[Co].
Var conv2d(Var x, Var w, Var b);

}  // namespace rnlab::ops
