// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor primitives.

#pragma once

#include <cstddef>
#include <vector>

#include "dprcnet/tensor.hpp"

namespace dprc {

// Two-tensor elementwise ops. b may broadcast onto a: after left-padding b's
// shape with ones, every axis of b must equal a's extent or be 1. The result
// has a's shape and gradients are sum-reduced over broadcast axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& t, Shape shape);
Tensor permute(const Tensor& t, const std::vector<std::size_t>& axes);

// Contiguous range [start, start + length) along one axis.
Tensor slice(const Tensor& t, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

// Reductions to a [1] tensor.
Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);
Tensor dot(const Tensor& a, const Tensor& b);

// Scalar helpers used by composite losses; all operands are [1] tensors.
Tensor div(const Tensor& a, const Tensor& b);
Tensor log10(const Tensor& a);

}  // namespace dprc
