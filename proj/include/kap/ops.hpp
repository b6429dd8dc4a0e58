#pragma once

#include <cstddef>
#include <span>

#include "kap/rng.hpp"
#include "kap/tape.hpp"

namespace kap {

// Differentiable tensor operations. Every op records its output on the tape
// of its first argument; all arguments must share that tape.

/// [m x k] . [k x n] -> [m x n]
Var matmul(Var a, Var b);

Var add(Var a, Var b);
/// Elementwise product of equally shaped tensors.
Var mul(Var a, Var b);
Var mul_scalar(Var x, double factor);
Var relu(Var x);

/// Adds bias[c] along `axis` (length C) of x.
Var add_bias(Var x, Var bias, std::size_t axis);

Var sum(Var x);
Var mean(Var x);
Var reshape(Var x, Shape shape);
/// Collapses every axis from `start_axis` on into one.
Var flatten(Var x, std::size_t start_axis = 1);

/// x + n with n ~ N(0, sigma^2 I) drawn once per call. The draw is a recorded
/// constant: the backward rule is the identity. sigma == 0 returns x exactly.
Var gaussian_noise_add(Var x, double sigma, Rng& rng);

/// Cross-correlation of x ([C_in,H,W] or [N,C_in,H,W]) with w
/// [C_out,C_in,k,k] plus per-channel bias b [C_out].
Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad);

/// x [N,D] times w^T (w is [O,D], one row per unit) plus b [O].
Var linear(Var x, Var w, Var b);

/// Mean pooling over the last two (spatial) axes without padding. A window
/// of 0 pools the whole spatial extent.
Var spatial_avg_pool(Var x, std::size_t window, std::size_t stride);

enum class Reduction { mean, sum };

/// Softmax cross-entropy of logits [N,C] against integer labels.
Var cross_entropy(Var logits, std::span<const int> labels, Reduction reduction = Reduction::mean);

/// Per-row softmax cross-entropy without recording anything.
std::vector<double> cross_entropy_values(const Tensor& logits, std::span<const int> labels);

}  // namespace kap
