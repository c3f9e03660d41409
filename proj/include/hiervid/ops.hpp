#pragma once
// Differentiable operations on Tensor.
//
// Broadcasting is limited to trailing-axis expansion: in a binary op one
// operand's shape must equal the other's shape or a suffix of it (a rank-0
// scalar is the empty suffix). Anything else is a ShapeError.

#include <cstddef>
#include <span>
#include <vector>

#include "hiervid/tensor.hpp"

namespace hiervid {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

/// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis);
/// Max reduction; the gradient goes to the lowest-index argmax.
Tensor max(const Tensor& x);
Tensor max(const Tensor& x, std::size_t axis);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
/// Swaps the two axes of a rank-2 tensor (materialized copy).
Tensor transpose(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
/// Removes `axis`. Max-shifted, so logsumexp([1000, 1000]) = 1000 + ln 2.
Tensor logsumexp(const Tensor& x, std::size_t axis);
/// x / max(||x||, epsilon) along `axis`.
Tensor l2_normalize(const Tensor& x, std::size_t axis, double epsilon = 1e-12);

/// Rows of a rank-2 tensor picked by index (repeats allowed); gradients scatter-add.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

/// [F, H, W, C] images -> [F*(H/s)*(W/s), s*s*C] non-overlapping patch rows,
/// patch elements ordered (dy, dx, c).
Tensor patchify(const Tensor& images, std::size_t stride);

/// Treats x [F*H*W, C] as F grids of H x W cells and replaces each cell by the
/// mean of its in-bounds 3x3 neighbourhood (itself included).
Tensor neighbor_mean(const Tensor& x, std::size_t frames, std::size_t height, std::size_t width);

enum class OpKind {
    add, sub, mul, matmul, relu, tanh, sigmoid, exp, log,
    sum, mean, max, concat, slice, reshape, transpose,
};

struct OpArgs {
    std::size_t axis = 0;
    bool all_axes = true;  // reductions: reduce everything unless false
    std::size_t begin = 0;
    std::size_t end = 0;
    Shape shape;
};

const char* op_kind_name(OpKind kind);
std::vector<OpKind> all_op_kinds();

/// Uniform entry point over the primitive op set.
Tensor op_apply(OpKind kind, std::span<const Tensor> inputs, const OpArgs& args = {});

}  // namespace hiervid
