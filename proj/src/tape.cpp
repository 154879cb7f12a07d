#include "scribble/tape.hpp"

#include "scribble/error.hpp"

namespace scribble {

const Grid& Var::value() const {
    if (!tape_) throw ArgumentError("use of an unbound Var");
    return tape_->value(id_);
}

bool Var::tracked() const { return tape_ && tape_->tracked(id_); }

bool Gradients::contains(const Var& v) const {
    return v.tape() == tape_ && v.id() >= 0 && static_cast<std::size_t>(v.id()) < grads_.size() &&
           grads_[v.id()].has_value();
}

const Grid& Gradients::of(const Var& v) const {
    if (!contains(v)) throw ArgumentError("no gradient recorded for node " + std::to_string(v.id()));
    return *grads_[v.id()];
}

Var Tape::constant(Grid value) {
    nodes_.push_back(Node{std::move(value), false, {}, {}, "constant"});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Grid value) {
    nodes_.push_back(Node{std::move(value), true, {}, {}, "variable"});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(const char* op, Grid value, std::vector<Var> inputs, BackwardFn backward) {
    apply_precision(value, op);
    Node node;
    node.value = std::move(value);
    node.op = op;
    for (const Var& in : inputs) {
        if (in.tape() != this) throw ArgumentError(std::string(op) + ": operand recorded on a different tape");
        node.inputs.push_back(in.id());
        node.tracked = node.tracked || nodes_[in.id()].tracked;
    }
    if (node.tracked) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Gradients Tape::backward(const Var& output) const {
    if (output.tape() != this) throw ArgumentError("backward: output was not produced on this tape");
    const Grid& out = nodes_[output.id()].value;
    if (out.size() != 1) throw ShapeError("backward: output must be a scalar, got " + to_string(out.shape()));

    Gradients result;
    result.tape_ = this;
    result.grads_.resize(nodes_.size());
    if (!nodes_[output.id()].tracked) return result;

    auto& grads = result.grads_;
    grads[output.id()] = Grid(out.shape(), 1.0);

    std::vector<Grid*> slots;
    for (int id = output.id(); id >= 0; --id) {
        const Node& node = nodes_[id];
        if (!grads[id] || !node.backward) continue;
        slots.clear();
        for (int in : node.inputs) {
            if (!nodes_[in].tracked) {
                slots.push_back(nullptr);
                continue;
            }
            if (!grads[in]) grads[in] = Grid(nodes_[in].value.shape(), 0.0);
            slots.push_back(&*grads[in]);
        }
        node.backward(*this, *grads[id], slots);
    }
    return result;
}

}  // namespace scribble
