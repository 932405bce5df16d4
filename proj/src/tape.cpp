// SPDX-License-Identifier: Apache-2.0

#include "hcn/tape.hpp"

#include <stdexcept>

namespace hcn {

const Tensor& Var::value() const { return tape_->nodes_.at(index_).value; }

const Tensor& Var::grad() const {
    auto& node = tape_->nodes_.at(index_);
    if (!node.has_grad) {
        // Lazily materialised zero gradient for nodes backward never touched.
        node.grad = Tensor(node.value.shape(), 0.0);
        node.has_grad = true;
    }
    return node.grad;
}

bool Var::requires_grad() const { return tape_->nodes_.at(index_).requires_grad; }

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, Pullback pullback) {
    Node node;
    node.value = std::move(value);
    for (const Var& in : inputs) {
        if (in.tape_ != this) throw std::invalid_argument("tape: input belongs to another tape");
        node.inputs.push_back(in.index_);
        node.requires_grad = node.requires_grad || nodes_[in.index_].requires_grad;
    }
    if (node.requires_grad) node.pullback = std::move(pullback);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(Node& node) {
    if (!node.has_grad) {
        node.grad = Tensor(node.value.shape(), 0.0);
        node.has_grad = true;
    }
    return node.grad;
}

void Tape::backward(Var loss) {
    if (loss.tape_ != this) throw std::invalid_argument("tape: loss belongs to another tape");
    Node& root = nodes_.at(loss.index_);
    if (root.value.size() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(root.value.shape()));
    grad_buffer(root).accumulate(Tensor(root.value.shape(), 1.0));

    std::vector<const Tensor*> in_values;
    std::vector<Tensor*> in_grads;
    for (std::size_t i = loss.index_ + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.pullback || !node.has_grad) continue;
        in_values.clear();
        in_grads.clear();
        for (std::size_t k : node.inputs) {
            Node& in = nodes_[k];
            in_values.push_back(&in.value);
            in_grads.push_back(in.requires_grad ? &grad_buffer(in) : nullptr);
        }
        node.pullback(node.grad, node.value, in_values, in_grads);
    }
}

void Tape::zero_grad() {
    for (auto& node : nodes_) {
        node.has_grad = false;
        node.grad = Tensor();
    }
}

}  // namespace hcn
