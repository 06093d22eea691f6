#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace dfkd {

// Learnable tensor with a persistent gradient buffer. Optimizers bump
// `version` on every applied update, which lets tests and the training loop
// check update discipline (who moved, and how often) without diffing weights.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
    uint64_t version = 0;

    Parameter() = default;
    explicit Parameter(Tensor v) : value(std::move(v)), grad(value.shape(), 0.0) {}

    void zero_grad() { grad.zero(); }
};

struct Node;
using Var = std::shared_ptr<Node>;

// One value in the computation graph. Values are computed eagerly when an op
// builds the node; `backprop` pulls from this node's grad and accumulates into
// the parents' grads.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;

    bool has_grad() const { return !grad.empty(); }
    Tensor& grad_ref() {
        if (grad.empty()) grad = Tensor(value.shape(), 0.0);
        return grad;
    }
    double scalar_value() const { return value[0]; }
};

Var make_constant(Tensor value);
Var make_input(Tensor value, bool needs_grad);

// Owns the parameter-leaf bookkeeping for one forward/backward pass. Ops
// themselves are free functions (see ops.hpp); the tape only exists so that
// backward() knows which parameter gradients to flush.
class Tape {
public:
    // Copies the parameter value into a fresh leaf. Gradients flow back into
    // Parameter::grad on backward() when the parameter is trainable.
    Var leaf(Parameter& p);

    // Runs reverse-mode accumulation from a scalar root, then adds every
    // registered leaf gradient into its parameter's grad buffer.
    void backward(const Var& root);

private:
    std::vector<std::pair<Parameter*, Var>> leaves_;
};

} // namespace dfkd
