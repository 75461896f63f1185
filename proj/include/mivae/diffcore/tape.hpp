#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mivae/diffcore/tensor.hpp"
#include "mivae/errors.hpp"

namespace mivae::diff {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

    Tape& tape() const {
        if (!tape_) throw ContractError("use of an unbound Var");
        return *tape_;
    }
    std::uint32_t id() const noexcept { return id_; }
    bool bound() const noexcept { return tape_ != nullptr; }

    inline const Tensor& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }

private:
    Tape* tape_ = nullptr;
    std::uint32_t id_ = 0;
};

// The computation record: an append-only list of primitive applications.
// Replaying it in reverse accumulates gradients into every node that
// requires them. Parameter leaves reference external storage, so model
// weights are never copied and gradients land directly in the caller's
// accumulators.
class Tape {
public:
    // Receives the gradient of the node being replayed.
    using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

    explicit Tape(bool record_gradients = true) : record_(record_gradients) { nodes_.reserve(128); }

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const noexcept { return record_; }

    Var constant(Tensor value) { return push(std::move(value), false, {}); }

    // Leaf whose gradient is kept on the tape (see grad()).
    Var variable(Tensor value) { return push(std::move(value), record_, {}); }

    // Leaf bound to external storage. The referenced tensors must outlive the tape.
    // A null sink (or a non-recording tape) makes the parameter a constant.
    Var parameter(const Tensor& value, Tensor* grad_sink) {
        Node node;
        node.value_ref = &value;
        node.grad_ref = record_ ? grad_sink : nullptr;
        node.requires_grad = node.grad_ref != nullptr;
        if (node.grad_ref && !node.grad_ref->same_shape(value)) {
            throw DimensionError("gradient sink " + matrix_shape_string(*grad_sink) +
                                 " does not match parameter " + matrix_shape_string(value));
        }
        nodes_.push_back(std::move(node));
        return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
    }

    Var push(Tensor value, bool requires_grad, Backward backward) {
        Node node;
        node.owned_value = std::move(value);
        node.requires_grad = record_ && requires_grad;
        if (node.requires_grad) node.backward = std::move(backward);
        nodes_.push_back(std::move(node));
        return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
    }

    const Tensor& value(Var v) const { return node(v).value(); }
    bool requires_grad(Var v) const { return node(v).requires_grad; }

    // Gradient of a leaf created with variable(), or of any node after backward().
    const Tensor& grad(Var v) {
        Node& n = node(v);
        if (!n.requires_grad) throw ContractError("gradient requested for a node that does not require grad");
        return grad_buffer(v.id());
    }

    // Accumulation target for the node with the given id (zero-initialised on first use).
    Tensor& grad_buffer(std::uint32_t id) {
        Node& n = nodes_[id];
        if (n.grad_ref) return *n.grad_ref;
        if (!n.has_grad) {
            n.owned_grad = Tensor(n.value().shape(), 0.0);
            n.has_grad = true;
        }
        return n.owned_grad;
    }

    void backward(Var loss, double seed = 1.0) {
        if (loss.bound() && &loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
        const Node& root = node(loss);
        if (root.value().size() != 1) {
            throw ContractError("backward: loss must be a scalar, got shape " + shape_string(root.value().shape()));
        }
        if (!root.requires_grad) return;
        if (backward_done_) throw ContractError("backward: tape already replayed");
        backward_done_ = true;

        grad_buffer(loss.id())[0] += seed;
        std::vector<bool> reached(nodes_.size(), false);
        reached[loss.id()] = true;
        touched_ = &reached;
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!reached[i] || !n.requires_grad || !n.backward) continue;
            Tensor upstream = std::move(n.owned_grad);
            n.has_grad = false;
            n.backward(*this, upstream);
        }
        touched_ = nullptr;
    }

    // Called by backward rules before accumulating into an input.
    Tensor& accumulate_into(Var input) {
        if (touched_) (*touched_)[input.id()] = true;
        return grad_buffer(input.id());
    }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor owned_value;
        Tensor owned_grad;
        const Tensor* value_ref = nullptr;
        Tensor* grad_ref = nullptr;
        bool requires_grad = false;
        bool has_grad = false;
        Backward backward;

        const Tensor& value() const { return value_ref ? *value_ref : owned_value; }
    };

    const Node& node(Var v) const {
        if (v.id() >= nodes_.size()) throw ContractError("Var does not belong to this tape");
        return nodes_[v.id()];
    }
    Node& node(Var v) {
        if (v.id() >= nodes_.size()) throw ContractError("Var does not belong to this tape");
        return nodes_[v.id()];
    }

    std::vector<Node> nodes_;
    bool record_;
    bool backward_done_ = false;
    std::vector<bool>* touched_ = nullptr;
};

inline const Tensor& Var::value() const { return tape().value(*this); }

} // namespace mivae::diff
