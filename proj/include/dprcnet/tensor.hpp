// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with a tape-free reverse-mode autodiff graph.
//
// A Tensor is a cheap handle onto shared storage. Operations that see at
// least one parent with requires_grad() attach a Node holding the parents
// and a closure that maps the output gradient onto parent gradients.
// backward() walks the graph once in reverse topological order and then
// releases it.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dprc {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl;

struct Node {
    const char* op = "";
    std::vector<std::shared_ptr<TensorImpl>> parents;
    // Receives d(loss)/d(output) and accumulates into the parents' grads.
    std::function<void(std::span<const double>)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool graph_released = false;
    std::shared_ptr<Node> node;

    // Adds g into grad, allocating on first use.
    void accumulate(std::span<const double> g);
    // Returns the grad buffer, zero-filled on first use, for in-place accumulation.
    std::span<double> grad_buffer();
};

}  // namespace detail

// While alive, ops on this thread record no graph (inference passes).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool grad_enabled();

private:
    bool previous_;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor constant(Shape shape, double value);
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor uniform(Shape shape, double lo, double hi, std::uint64_t seed);
    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);
    static Tensor zeros_like(const Tensor& t) { return zeros(t.shape()); }

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    // In-place access for optimizers and initializers. Not recorded in the graph.
    std::span<double> mutable_data();
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on = true);
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // Populates grads of every requires_grad tensor reachable from this scalar,
    // then frees the graph. Calling it twice on the same graph throws.
    void backward();

    // Same values, no graph, no grad.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    bool is_leaf() const;
    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

    // Builds an op result. The node is attached only when a parent needs grad.
    static Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                              std::vector<Tensor> parents,
                              std::function<void(std::span<const double>)> backward);

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;
};

}  // namespace dprc
