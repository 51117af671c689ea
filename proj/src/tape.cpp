#include "uhdformer/tape.hpp"

#include <atomic>

namespace uhd {

namespace {

std::atomic<uint64_t> g_tape_gen{0};
thread_local Tape* t_active_tape = nullptr;

}  // namespace

Tape::Tape() : gen_(++g_tape_gen) {
    prev_active_ = t_active_tape;
    t_active_tape = this;
}

Tape::~Tape() { t_active_tape = prev_active_; }

Tape* Tape::active() { return t_active_tape; }

Tensor Tape::watch(const Tensor& t) {
    if (!t.defined()) throw ContractError("watch: undefined tensor");
    if (t.tape_gen() == gen_ && t.tape_node() >= 0) return t;  // already tracked
    const int32_t id = static_cast<int32_t>(nodes_.size());
    nodes_.push_back(Node{t, BackwardFn{}});
    grads_.emplace_back();
    t.set_tape_link(gen_, id);
    leaves_.push_back(id);
    return t;
}

int32_t Tape::record(const Tensor& out, BackwardFn backward) {
    const int32_t id = static_cast<int32_t>(nodes_.size());
    nodes_.push_back(Node{out, std::move(backward)});
    grads_.emplace_back();
    out.set_tape_link(gen_, id);
    return id;
}

Tensor& Tape::grad_buf(int32_t node) {
    auto& g = grads_[static_cast<size_t>(node)];
    if (!g.defined()) {
        const Tensor& v = nodes_[static_cast<size_t>(node)].value;
        g = Tensor::zeros(v.shape(), v.dtype());
    }
    return g;
}

bool Tape::has_grad(int32_t node) const { return grads_[static_cast<size_t>(node)].defined(); }

void Tape::backward(const Tensor& loss) {
    if (backward_done_) throw ContractError("backward: tape already consumed");
    const int32_t root = node_of(loss);
    if (root < 0) throw ContractError("backward: loss is not recorded on this tape");
    if (loss.numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + loss.shape().str());
    backward_done_ = true;

    grad_buf(root).set(0, 1.0);
    for (int32_t i = root; i >= 0; --i) {
        auto& node = nodes_[static_cast<size_t>(i)];
        if (node.backward && has_grad(i)) node.backward(*this, i);
    }
}

Tensor Tape::grad(const Tensor& t) const {
    if (!backward_done_) throw ContractError("grad: backward() has not run");
    const int32_t id = node_of(t);
    if (id < 0) throw ContractError("grad: tensor is not tracked on this tape");
    auto& g = grads_[static_cast<size_t>(id)];
    if (!g.defined()) g = Tensor::zeros(t.shape(), t.dtype());
    return g;
}

namespace detail {

Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
    Tape* tape = Tape::active();
    if (!tape) return nullptr;
    for (const Tensor* in : inputs)
        if (in->defined() && tape->node_of(*in) >= 0) return tape;
    return nullptr;
}

}  // namespace detail

}  // namespace uhd
