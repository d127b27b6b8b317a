#pragma once

// Differentiable ops recorded on a Tape. Shapes are checked eagerly; a
// mismatch throws DimensionError before anything is recorded.

#include <cstddef>
#include <span>

#include "gasca/autodiff.hpp"
#include "gasca/kernels.hpp"

namespace gasca::ad {

enum class ElementwiseOp { Add, Sub, Mul };

/// a (op) b with b of identical shape or a one-element tensor.
Var elementwise(ElementwiseOp op, Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var relu(Var a);  // max(0, a), subgradient 0 at 0
Var sigmoid(Var a);

Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape shape);
/// (N, ...) -> (N, prod(...)).
Var flatten(Var a);

/// Rank-2 matrix product.
Var matmul(Var a, Var b);
/// Row-wise affine map x * W^T + b for x (M, P), W (U, P), b (U). `bias`
/// may be an unbound Var.
Var linear(Var x, Var weight, Var bias);

/// Valid cross-correlation of x (N, C, H, W) with w (O, C, kh, kw), bias (O)
/// or unbound, stride 1, implicit zero padding of `pad_right` columns.
Var conv2d(Var x, Var w, Var bias, std::size_t pad_right = 0);
/// Adjoint of conv2d: x (N, Ci, H, W), w (Ci, Co, kh, kw) -> (N, Co, H+kh-1, W+kw-1).
Var deconv2d(Var x, Var w, Var bias);

/// Columns [begin, end) of a rank-4 tensor.
Var slice_cols(Var x, std::size_t begin, std::size_t end);
/// Rank-4 (N, C, H, W) -> (N, C, H, 2W) with the right half the horizontal
/// mirror of the left.
Var mirror_concat(Var x);
/// Concatenate rank-2 tensors with equal row counts along columns.
Var concat_cols(std::span<const Var> parts);

/// Row-wise softmax of (N, C) logits with max subtraction.
Var softmax(Var logits);
/// Mean over rows of -log(max(probs[label], 1e-12)).
Var cross_entropy(Var probs, std::span<const std::size_t> labels);
/// Mean absolute error; subgradient 0 at ties.
Var mae(Var target, Var pred);
/// Mean absolute error against a constant target value.
Var abs_loss(double target, Var pred);
/// Mean binary cross-entropy against a constant target, probabilities
/// clamped to [1e-12, 1 - 1e-12].
Var bce_loss(double target, Var pred);

}  // namespace gasca::ad
