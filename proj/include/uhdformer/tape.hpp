#pragma once

#include <functional>
#include <vector>

#include "uhdformer/tensor.hpp"

namespace uhd {

// Append-only record of primitive ops for reverse-mode differentiation.
//
// Constructing a Tape makes it the active tape for the current thread (the
// previous one is restored on destruction, so short-lived inner tapes are
// fine). Ops record themselves onto the active tape whenever at least one
// input is tracked on it; everything else runs untaped and stays pure.
//
// A tape is single-use: one recording phase, one backward() call. Gradients
// accumulate per node in recording order, so reverse iteration is a valid
// reverse-topological sweep.
class Tape {
public:
    // Closure that propagates the node's gradient to its inputs. Called only
    // when the node has a gradient; `self` is the node's own id.
    using BackwardFn = std::function<void(Tape&, int32_t self)>;

    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    uint64_t gen() const { return gen_; }
    size_t size() const { return nodes_.size(); }

    // Marks t as a differentiable leaf. Returns t itself (the link lives in
    // the shared storage, so aliases of t are marked too).
    Tensor watch(const Tensor& t);

    // Records an op output; the out tensor is linked to the new node.
    int32_t record(const Tensor& out, BackwardFn backward);

    // Reverse accumulation seeded at a scalar loss. Callable once.
    void backward(const Tensor& loss);

    // Mutable gradient buffer for a node, zeros-allocated on first access.
    Tensor& grad_buf(int32_t node);
    bool has_grad(int32_t node) const;

    // Gradient of a tracked tensor after backward(); zeros if the loss never
    // reached it.
    Tensor grad(const Tensor& t) const;

    // Node id of t on this tape, or -1 when untracked.
    int32_t node_of(const Tensor& t) const {
        return t.defined() && t.tape_gen() == gen_ ? t.tape_node() : -1;
    }

    // Ids of watch()ed leaves, in registration order.
    const std::vector<int32_t>& leaves() const { return leaves_; }
    const Tensor& value_of(int32_t node) const { return nodes_[static_cast<size_t>(node)].value; }

private:
    struct Node {
        Tensor value;
        BackwardFn backward;  // empty for leaves
    };

    uint64_t gen_;
    std::vector<Node> nodes_;
    mutable std::vector<Tensor> grads_;
    std::vector<int32_t> leaves_;
    bool backward_done_ = false;
    Tape* prev_active_ = nullptr;
};

namespace detail {

// The tape to record onto for an op with the given inputs, or nullptr when
// the op should run untaped.
Tape* recording_tape(std::initializer_list<const Tensor*> inputs);

}  // namespace detail

}  // namespace uhd
