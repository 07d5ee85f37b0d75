// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over a closed set of matrix operations.
//
// A Tape records every operation executed through it. Leaves are either
// constants or Parameters; a Parameter that is frozen enters the tape as a
// constant and never receives a gradient. backward() walks the record in
// exact reverse order and accumulates dLoss/dParam into Parameter::grad.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "branchlora/tensor.hpp"

namespace blora {

/// A named trainable matrix with its gradient buffer.
struct Parameter {
    Parameter() = default;
    Parameter(std::string name, Matrix value, bool frozen = false)
        : name(std::move(name)), value(std::move(value)), frozen(frozen) {}

    std::string name;
    Matrix value;
    /// Same shape as value once a backward pass has reached this parameter.
    Matrix grad;
    bool frozen = false;
    bool has_grad = false;

    void clear_grad();
};

/// Handle to a node on a Tape.
struct Var {
    std::size_t id = 0;
};

enum class OpKind {
    constant,
    parameter,
    matmul,
    add,
    scale,
    add_scalar,
    tanh,
    row_softmax,
    topk_mask,
    slice_rows,
    scale_rows,
    select_rows,
    row_cosine,
    cross_entropy,
    mse,
    sum,
    mean,
};

class Tape {
public:
    Var constant(Matrix value);
    /// Records a parameter leaf. Frozen parameters are recorded as constants.
    Var parameter(Parameter& p);
    /// Read-only access always records a constant.
    Var parameter(const Parameter& p) { return constant(p.value); }

    const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }
    bool empty() const noexcept { return nodes_.empty(); }

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var scale(Var a, double factor);
    Var add_scalar(Var a, double offset);
    Var tanh(Var a);
    Var row_softmax(Var a);
    /// Selection is treated as constant: gradients pass through kept entries
    /// and are zero on masked ones.
    Var topk_mask(Var scores, std::size_t k);
    Var slice_rows(Var a, std::size_t begin, std::size_t count);
    /// out[r, :] = a[r, :] * gate[g, column], g = r, or g = 0 when gate has a
    /// single row (broadcast over all rows of a).
    Var scale_rows(Var a, Var gate, std::size_t column);
    /// out[r, :] = sources[choice[r]][r, :]; all sources share one shape.
    Var select_rows(std::span<const Var> sources, std::span<const std::size_t> choice);
    /// (rows x 1) cosine of every row of `rows` against the single-row `key`.
    Var row_cosine(Var rows, Var key);
    /// Mean softmax cross-entropy of logits against integer class labels.
    Var cross_entropy(Var logits, std::span<const std::size_t> labels);
    /// Mean squared error against a constant target.
    Var mse(Var a, const Matrix& target);
    Var sum(Var a);
    Var mean(Var a);

    /// Propagates dLoss/d(node) backward and writes parameter gradients.
    /// Every trainable parameter recorded on the tape ends up with
    /// has_grad == true, even when the loss does not depend on it.
    void backward(Var loss);

    /// Node ids in the order backward() visited them during the last call.
    const std::vector<std::size_t>& last_backward_order() const noexcept { return visit_order_; }

    void clear();

private:
    struct Node {
        OpKind op = OpKind::constant;
        std::size_t lhs = 0;
        std::size_t rhs = 0;
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        double scalar = 0.0;
        std::size_t index = 0;
        Parameter* param = nullptr;
        std::vector<std::size_t> ids;
        Matrix aux;
    };

    Var push(Node node);
    Node& node(Var v) { return nodes_.at(v.id); }
    const Node& node(Var v) const { return nodes_.at(v.id); }
    void accumulate(std::size_t id, const Matrix& g);
    void propagate(Node& n);

    std::vector<Node> nodes_;
    std::vector<std::size_t> visit_order_;
};

} // namespace blora
