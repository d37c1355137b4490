// SPDX-License-Identifier: Apache-2.0

#include "dprcnet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "dprcnet/errors.hpp"

namespace dprc {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {

void TensorImpl::accumulate(std::span<const double> g) {
    if (grad.empty()) {
        grad.assign(g.begin(), g.end());
        return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

std::span<double> TensorImpl::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

}  // namespace detail

namespace {

thread_local bool t_grad_enabled = true;

void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("Tensor: shape must have at least one axis");
    for (auto e : shape)
        if (e == 0) throw ShapeError("Tensor: zero extent in shape " + shape_str(shape));
}

std::shared_ptr<detail::TensorImpl> new_impl(Shape shape, std::vector<double> data) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return impl;
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return t_grad_enabled; }

Tensor Tensor::zeros(Shape shape) { return constant(std::move(shape), 0.0); }

Tensor Tensor::constant(Shape shape, double value) {
    check_shape(shape);
    auto n = shape_numel(shape);
    return Tensor(new_impl(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    check_shape(shape);
    if (shape_numel(shape) != values.size())
        throw ShapeError("Tensor::from: shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
    return Tensor(new_impl(std::move(shape), std::move(values)));
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::uint64_t seed) {
    Rng rng(seed);
    return uniform(std::move(shape), lo, hi, rng);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng) {
    check_shape(shape);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(new_impl(std::move(shape), std::move(v)));
}

const Shape& Tensor::shape() const {
    if (!impl_) throw ContractError("Tensor: use of undefined tensor");
    return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) throw ShapeError("Tensor::dim: axis out of range");
    return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
    shape();
    return impl_->data;
}

std::span<double> Tensor::mutable_data() {
    shape();
    return impl_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) throw ShapeError("Tensor::at: rank mismatch");
    std::size_t flat = 0, axis = 0;
    for (auto i : index) {
        if (i >= s[axis]) throw ShapeError("Tensor::at: index out of range");
        flat = flat * s[axis] + i;
        ++axis;
    }
    return impl_->data[flat];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    shape();
    impl_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw ContractError("Tensor::grad: no gradient has been accumulated");
    return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
    shape();
    return impl_->grad_buffer();
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.clear();
}

bool Tensor::is_leaf() const { return impl_ && !impl_->node; }

Tensor Tensor::detach() const {
    shape();
    return Tensor(new_impl(impl_->shape, impl_->data));
}

Tensor Tensor::make_result(Shape shape, std::vector<double> data, const char* op,
                           std::vector<Tensor> parents,
                           std::function<void(std::span<const double>)> backward) {
    Tensor out(new_impl(std::move(shape), std::move(data)));
    if (!t_grad_enabled) return out;
    bool needs = std::any_of(parents.begin(), parents.end(),
                             [](const Tensor& p) { return p.requires_grad(); });
    if (!needs) return out;
    auto node = std::make_shared<detail::Node>();
    node->op = op;
    node->backward = std::move(backward);
    for (auto& p : parents) node->parents.push_back(p.impl_);
    out.impl_->requires_grad = true;
    out.impl_->node = std::move(node);
    return out;
}

void Tensor::backward() {
    if (numel() != 1)
        throw ContractError("Tensor::backward: loss must be scalar, got shape " + shape_str(shape()));
    if (impl_->graph_released)
        throw ContractError("Tensor::backward: graph was already released by a previous backward");
    if (!impl_->requires_grad)
        throw ContractError("Tensor::backward: loss does not depend on any tensor requiring grad");

    // Iterative post-order DFS; reversed, it is a valid topological order.
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> seen;
    std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack{{impl_.get(), 0}};
    seen.insert(impl_.get());
    while (!stack.empty()) {
        auto& [t, next] = stack.back();
        if (t->node && next < t->node->parents.size()) {
            auto* p = t->node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
            continue;
        }
        order.push_back(t);
        stack.pop_back();
    }

    impl_->accumulate(std::vector<double>{1.0});
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto* t = *it;
        if (!t->node) continue;
        if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
        t->node->backward(t->grad);
    }
    for (auto* t : order) {
        if (!t->node) continue;
        t->node.reset();
        t->graph_released = true;
    }
    impl_->graph_released = true;
}

}  // namespace dprc
