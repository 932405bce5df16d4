// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation tape. Nodes are appended in evaluation order,
// which is a topological order by construction; backward() walks it in reverse.

#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "hcn/tensor.hpp"

namespace hcn {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    /// Accumulated gradient; zeros if backward never reached this node.
    const Tensor& grad() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    Tape* tape() const { return tape_; }
    std::size_t index() const { return index_; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}
    Tape* tape_ = nullptr;
    std::size_t index_ = 0;
};

/// Propagates `out_grad` into the gradients of the inputs. `in_grads[k]` is
/// null when input k does not require a gradient.
using Pullback = std::function<void(const Tensor& out_grad, const Tensor& out_value,
                                    std::span<const Tensor* const> in_values,
                                    std::span<Tensor* const> in_grads)>;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Appends a primitive application. The pullback is dropped when no input
    /// requires a gradient.
    Var record(Tensor value, std::vector<Var> inputs, Pullback pullback);

    /// Seeds d(loss)/d(loss) = 1 and accumulates into every reachable node.
    /// Throws ShapeError if `loss` is not a single element.
    void backward(Var loss);

    void zero_grad();
    std::size_t size() const { return nodes_.size(); }

private:
    friend class Var;
    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        std::vector<std::size_t> inputs;
        Pullback pullback;
    };
    Tensor& grad_buffer(Node& node);

    std::deque<Node> nodes_;
};

}  // namespace hcn
