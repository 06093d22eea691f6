#include "core/graph.hpp"

#include <stdexcept>
#include <unordered_set>

namespace dfkd {

Var make_constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = false;
    return n;
}

Var make_input(Tensor value, bool needs_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = needs_grad;
    return n;
}

Var Tape::leaf(Parameter& p) {
    auto n = std::make_shared<Node>();
    n->value = p.value;
    n->requires_grad = p.trainable;
    if (p.trainable) leaves_.emplace_back(&p, n);
    return n;
}

void Tape::backward(const Var& root) {
    if (!root) throw std::runtime_error("backward: null root");
    if (root->value.numel() != 1) throw std::runtime_error("backward: root must be a scalar, got shape " + root->value.shape_str());
    if (!root->requires_grad) return;

    // Iterative post-order over grad-requiring nodes gives the topological
    // order; reversing it yields the backward schedule.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_ref()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->has_grad()) n->backprop(*n);
    }

    for (auto& [param, node] : leaves_) {
        if (!node->has_grad()) continue;
        double* g = param->grad.data();
        const double* ng = node->grad.data();
        for (int64_t i = 0; i < node->grad.numel(); ++i) g[i] += ng[i];
    }
}

} // namespace dfkd
