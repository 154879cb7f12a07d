#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scribble/grid.hpp"

namespace scribble {

class Tape;

// Handle to a Grid recorded on a Tape. Cheap to copy; valid while the Tape lives.
class Var {
public:
    Var() = default;

    const Grid& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape* tape() const noexcept { return tape_; }
    int id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }
    bool tracked() const;

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Result of Tape::backward: d(output)/d(X) for every tracked node X.
class Gradients {
public:
    bool contains(const Var& v) const;
    const Grid& of(const Var& v) const;

private:
    friend class Tape;
    const Tape* tape_ = nullptr;
    std::vector<std::optional<Grid>> grads_;
};

// Single-owner record of primitive operations. Nodes are appended in
// evaluation order, so reverse index order is a valid reverse topological
// order for the backward sweep.
class Tape {
public:
    // grad_in[i] is null when input i does not need a gradient.
    using BackwardFn = std::function<void(const Tape& tape, const Grid& grad_out, std::span<Grid* const> grad_in)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Grid value);
    Var variable(Grid value);

    Var record(const char* op, Grid value, std::vector<Var> inputs, BackwardFn backward);

    const Grid& value(int id) const { return nodes_[id].value; }
    const Grid& value(const Var& v) const { return nodes_[v.id()].value; }
    bool tracked(int id) const { return nodes_[id].tracked; }
    std::size_t size() const noexcept { return nodes_.size(); }

    Gradients backward(const Var& output) const;

private:
    struct Node {
        Grid value;
        bool tracked = false;
        std::vector<int> inputs;
        BackwardFn backward;
        const char* op = "";
    };
    // deque: references returned by value() survive later records
    std::deque<Node> nodes_;
};

}  // namespace scribble
