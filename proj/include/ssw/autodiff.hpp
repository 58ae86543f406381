#pragma once

#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "ssw/tensor.hpp"

namespace ssw {

template <std::floating_point T>
struct Node {
    using BackwardFn = std::function<void(Node&)>;

    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::string_view op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn backward;

    bool is_leaf() const noexcept { return inputs.empty(); }

    Tensor<T>& grad_buffer() {
        if (!has_grad) {
            grad = Tensor<T>(value.shape());
            has_grad = true;
        }
        return grad;
    }

    void accumulate(const Tensor<T>& g) {
        if (g.shape() != value.shape())
            throw ShapeError(std::string(op) + ": gradient shape " + shape_str(g.shape()) +
                             " does not match value shape " + shape_str(value.shape()));
        auto& buf = grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
    }

    void clear_grad() {
        has_grad = false;
        grad = Tensor<T>();
    }

    /// True when input `i` takes part in differentiation.
    bool wants(std::size_t i) const { return inputs[i] && inputs[i]->requires_grad; }
    const Tensor<T>& in(std::size_t i) const { return inputs[i]->value; }
    Tensor<T>& in_grad(std::size_t i) { return inputs[i]->grad_buffer(); }
};

/// Handle to a node of the recorded forward computation.
template <std::floating_point T>
class Var {
   public:
    using NodePtr = std::shared_ptr<Node<T>>;

    Var() = default;
    explicit Var(NodePtr node) : node_(std::move(node)) {}

    static Var constant(Tensor<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        return Var(std::move(n));
    }

    static Var leaf(Tensor<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = true;
        return Var(std::move(n));
    }

    bool valid() const noexcept { return node_ != nullptr; }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    /// Accumulated gradient; zeros when nothing has flowed into this node.
    const Tensor<T>& grad() const { return node_->grad_buffer(); }
    void zero_grad() { node_->clear_grad(); }

    Node<T>* node() const noexcept { return node_.get(); }
    const NodePtr& node_ptr() const noexcept { return node_; }

   private:
    NodePtr node_;
};

/// Record an op result. The backward closure is kept only when some input needs a gradient.
template <std::floating_point T>
Var<T> record(std::string_view op, Tensor<T> value, std::vector<Var<T>> inputs,
              typename Node<T>::BackwardFn backward) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->op = op;
    bool any = false;
    for (const auto& v : inputs) any = any || v.requires_grad();
    if (any) {
        n->requires_grad = true;
        n->inputs.reserve(inputs.size());
        for (const auto& v : inputs) n->inputs.push_back(v.node_ptr());
        n->backward = std::move(backward);
    }
    return Var<T>(std::move(n));
}

namespace detail {

/// Post-order over the differentiable subgraph reachable from `root`.
template <std::floating_point T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace detail

/// Reverse sweep seeded with an explicit cotangent of the output's shape.
/// Leaf gradients accumulate; interior gradients are reset first.
template <std::floating_point T>
void backward(const Var<T>& output, const Tensor<T>& cotangent) {
    if (cotangent.shape() != output.shape())
        throw ShapeError("backward: cotangent " + shape_str(cotangent.shape()) + " vs output " +
                         shape_str(output.shape()));
    if (!output.requires_grad()) return;
    auto order = detail::topo_order(output.node());
    for (Node<T>* n : order)
        if (!n->is_leaf()) n->clear_grad();
    output.node()->accumulate(cotangent);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->is_leaf() || !n->has_grad) continue;
        n->backward(*n);
    }
}

template <std::floating_point T>
void backward(const Var<T>& loss) {
    if (loss.size() != 1)
        throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    backward(loss, Tensor<T>(loss.shape(), T(1)));
}

/// How a parameter is initialized by `init_parameters`.
enum class InitRule {
    FanInUniform,  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)), fan_in = product of all but the first extent
    Zeros,
    Ones,
    SmallUniform,  // U(-0.02, 0.02)
};

/// Learned tensor with a dotted name path such as "encoder.stage0.dsconv.x.weight".
template <std::floating_point T>
struct Parameter {
    std::string name;
    Var<T> var;
    InitRule init = InitRule::FanInUniform;

    const Tensor<T>& value() const { return var.value(); }
    Tensor<T>& mutable_value() { return var.mutable_value(); }
    const Tensor<T>& grad() const { return var.grad(); }
};

/// Ordered parameter registry. Registration order fixes init and checkpoint order.
template <std::floating_point T>
class ParameterSet {
   public:
    Var<T> add(std::string name, Shape shape, InitRule init = InitRule::FanInUniform) {
        for (const auto& p : params_)
            if (p.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
        params_.push_back({std::move(name), Var<T>::leaf(Tensor<T>(std::move(shape))), init});
        return params_.back().var;
    }

    std::vector<Parameter<T>>& all() noexcept { return params_; }
    const std::vector<Parameter<T>>& all() const noexcept { return params_; }
    std::size_t size() const noexcept { return params_.size(); }

    Parameter<T>* find(std::string_view name) {
        for (auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

    void zero_grad() {
        for (auto& p : params_) p.var.zero_grad();
    }

    std::size_t element_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.var.size();
        return n;
    }

   private:
    std::vector<Parameter<T>> params_;
};

/// Prefix helper for building dotted parameter paths.
inline std::string join_name(const std::string& prefix, std::string_view leaf) {
    return prefix.empty() ? std::string(leaf) : prefix + "." + std::string(leaf);
}

}  // namespace ssw
