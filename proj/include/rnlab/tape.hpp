#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rnlab/tensor.hpp"

namespace rnlab {

struct Interval {
    double lo;
    double hi;
};

/// A learnable tensor owned by a layer. The optimizer reads `grad` and writes `value`.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    std::optional<Interval> bounds;  // projected back into this box after every step
    bool trainable = true;
    bool decay = true;  // subject to weight decay
    double lr_scale = 1.0;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t size() const { return value().size(); }
};

/// Records a computation graph for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and reverse insertion order is a reverse topological order. Not thread-safe;
/// a tape has a single owner.
class Tape {
   public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var variable(Tensor value);
    /// Leaf bound to a parameter; tracks gradients only when the parameter is trainable.
    Var parameter(Parameter& p);

    /// Appends an op node. `backward` is dropped when no input requires a gradient.
    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Gradient accumulated at a node by the last backward(); zeros if it received none.
    Tensor grad(Var v) const;

    /// Accumulation buffer for a node, allocated as zeros on first use. For op authors.
    Tensor& grad_buffer(std::size_t id);
    const Tensor& incoming(std::size_t self) const { return nodes_[self].grad; }

    /// Runs reverse accumulation from a scalar loss and adds leaf gradients into bound parameters.
    void backward(Var loss);

    /// Gradients of every leaf that requires one, keyed by node id.
    std::map<std::size_t, Tensor> leaf_gradients() const;

    std::size_t size() const { return nodes_.size(); }

   private:
    struct Node {
        Tensor value;
        Tensor grad;  // empty until first accumulation
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
        bool leaf = false;
    };

    std::vector<Node> nodes_;
};

}  // namespace rnlab
