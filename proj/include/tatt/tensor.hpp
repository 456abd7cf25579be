#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tatt/errors.hpp"

namespace tatt {

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_mode_enabled() { return detail::grad_enabled; }

template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool consumed = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return !backward_fn && !consumed; }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }
};

/// Dense row-major tensor handle with optional gradient tracking.
/// Copies share the underlying node; use clone() for a deep copy.
template <class T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<Node<T>>;

    Tensor() : node_(std::make_shared<Node<T>>()) {}

    explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node<T>>()) {
        node_->data.assign(shape_numel(shape), fill);
        node_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<Node<T>>()) {
        if (shape_numel(shape) != data.size())
            throw DimensionError("Tensor: shape " + shape_str(shape) + " does not match " +
                                 std::to_string(data.size()) + " elements");
        node_->shape = std::move(shape);
        node_->data = std::move(data);
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t size() const { return node_->data.size(); }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }
    T* ptr() { return node_->data.data(); }
    const T* ptr() const { return node_->data.data(); }

    T& operator[](std::size_t i) { return node_->data[i]; }
    const T& operator[](std::size_t i) const { return node_->data[i]; }

    T item() const {
        if (size() != 1) throw ContractError("item(): tensor is not a scalar, shape " + shape_str(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient as a detached tensor; zeros when never populated.
    Tensor grad() const {
        if (node_->grad.empty()) return Tensor(shape(), T(0));
        return Tensor(shape(), node_->grad);
    }
    std::vector<T>& grad_buffer() { return node_->grad; }
    const std::vector<T>& grad_buffer() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    Tensor clone() const { return Tensor(shape(), data()); }
    /// Same values, no graph history.
    Tensor detach() const { return clone(); }

    const NodePtr& node() const { return node_; }
    bool same_node(const Tensor& o) const { return node_ == o.node_; }

private:
    NodePtr node_;
};

namespace detail {

template <class T>
bool all_finite(const std::vector<T>& v) {
    return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

/// Wraps a forward result; records parents and backward closure when any
/// parent is tracked and grad mode is on.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
#ifndef NDEBUG
    {
        bool inputs_finite = true;
        for (const auto& p : parents) inputs_finite = inputs_finite && all_finite(p->data);
        assert(!inputs_finite || all_finite(node->data));
    }
#endif
    bool track = false;
    if (grad_enabled)
        for (const auto& p : parents) track = track || p->requires_grad;
    if (track) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward);
    }
    return Tensor<T>(std::move(node));
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate; the
/// interior graph is released afterwards.
template <class T>
void backward(Tensor<T>& loss) {
    auto root = loss.node();
    if (root->consumed) throw GraphConsumedError("backward: graph already consumed; re-run the forward pass");
    if (root->data.size() != 1)
        throw ContractError("backward: loss must be a scalar, got shape " + shape_str(root->shape));
    if (!root->requires_grad) throw ContractError("backward: loss does not depend on any tracked tensor");

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node<T>* p = n->parents[i++].get();
            if (p->backward_fn && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root->grad.assign(1, T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (!n->grad.empty()) n->backward_fn(*n);
    }
    for (Node<T>* n : order) {
        n->backward_fn = nullptr;
        n->parents.clear();
        n->grad.clear();
        n->grad.shrink_to_fit();
        n->consumed = true;
    }
}

template <class T>
void backward(Tensor<T>&& loss) {
    Tensor<T> l = loss;
    backward(l);
}

}  // namespace tatt
