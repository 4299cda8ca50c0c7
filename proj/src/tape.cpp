#include "rnlab/tape.hpp"

namespace rnlab {

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.leaf = true;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.leaf = true;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
    Node n;
    n.value = p.value;
    n.leaf = true;
    n.requires_grad = p.trainable;
    n.param = p.trainable ? &p : nullptr;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
        if (v.tape != this) throw InvalidInput("op inputs belong to a different tape");
        n.inputs.push_back(v.id);
        n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor(n.value.shape());
    return n.grad;
}

Tensor& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw InvalidInput("loss belongs to a different tape");
    if (nodes_.at(loss.id).value.size() != 1) {
        throw InvalidInput("backward needs a scalar loss, got shape " + shape_string(nodes_[loss.id].value.shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    grad_buffer(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
        n.backward(*this, i);
    }
    for (Node& n : nodes_) {
        if (!n.param || n.grad.empty()) continue;
        if (n.param->grad.shape() != n.value.shape()) n.param->grad = Tensor(n.value.shape());
        auto dst = n.param->grad.data();
        auto src = n.grad.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
}

std::map<std::size_t, Tensor> Tape::leaf_gradients() const {
    std::map<std::size_t, Tensor> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.leaf && n.requires_grad) out.emplace(i, n.grad.empty() ? Tensor(n.value.shape()) : n.grad);
    }
    return out;
}

}  // namespace rnlab
