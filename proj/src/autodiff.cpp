// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchlora/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "branchlora/errors.hpp"

namespace blora {

void Parameter::clear_grad() {
    grad = Matrix();
    has_grad = false;
}

Var Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::constant(Matrix value) {
    Node n;
    n.op = OpKind::constant;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::parameter(Parameter& p) {
    Node n;
    n.op = p.frozen ? OpKind::constant : OpKind::parameter;
    n.value = p.value;
    n.requires_grad = !p.frozen;
    n.param = p.frozen ? nullptr : &p;
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    Node n;
    n.op = OpKind::matmul;
    n.lhs = a.id;
    n.rhs = b.id;
    n.value = blora::matmul(value(a), value(b));
    n.requires_grad = requires_grad(a) || requires_grad(b);
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    Node n;
    n.op = OpKind::add;
    n.lhs = a.id;
    n.rhs = b.id;
    n.value = blora::add(value(a), value(b));
    n.requires_grad = requires_grad(a) || requires_grad(b);
    return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
    Node n;
    n.op = OpKind::scale;
    n.lhs = a.id;
    n.scalar = factor;
    n.value = blora::scale(value(a), factor);
    n.requires_grad = requires_grad(a);
    return push(std::move(n));
}

Var Tape::add_scalar(Var a, double offset) {
    Node n;
    n.op = OpKind::add_scalar;
    n.lhs = a.id;
    n.value = value(a);
    for (double& v : n.value.data()) {
        v += offset;
    }
    n.requires_grad = requires_grad(a);
    return push(std::move(n));
}

Var Tape::tanh(Var a) {
    Node n;
    n.op = OpKind::tanh;
    n.lhs = a.id;
    n.value = blora::tanh(value(a));
    n.requires_grad = requires_grad(a);
    return push(std::move(n));
}

Var Tape::row_softmax(Var a) {
    if (value(a).empty()) {
        throw DimensionError("row_softmax: empty input");
    }
    Node n;
    n.op = OpKind::row_softmax;
    n.lhs = a.id;
    n.value = blora::row_softmax(value(a));
    n.requires_grad = requires_grad(a);
    return push(std::move(n));
}

Var Tape::topk_mask(Var scores, std::size_t k) {
    const Matrix& s = value(scores);
    Node n;
    n.op = OpKind::topk_mask;
    n.lhs = scores.id;
    n.value = blora::topk_mask(s, k);
    n.aux = Matrix(s.rows(), s.cols());
    for (std::size_t i = 0; i < n.aux.size(); ++i) {
        n.aux.data()[i] = n.value.data()[i] == kMaskedScore ? 0.0 : 1.0;
    }
    n.requires_grad = requires_grad(scores);
    return push(std::move(n));
}

Var Tape::slice_rows(Var a, std::size_t begin, std::size_t count) {
    Node n;
    n.op = OpKind::slice_rows;
    n.lhs = a.id;
    n.index = begin;
    n.value = blora::slice_rows(value(a), begin, count);
    n.requires_grad = requires_grad(a);
    return push(std::move(n));
}

Var Tape::scale_rows(Var a, Var gate, std::size_t column) {
    const Matrix& x = value(a);
    const Matrix& g = value(gate);
    if (column >= g.cols() || (g.rows() != 1 && g.rows() != x.rows())) {
        throw DimensionError("scale_rows: gate " + g.shape_string() + " column " +
                             std::to_string(column) + " incompatible with " + x.shape_string());
    }
    Node n;
    n.op = OpKind::scale_rows;
    n.lhs = a.id;
    n.rhs = gate.id;
    n.index = column;
    n.value = x;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const double w = g(g.rows() == 1 ? 0 : r, column);
        for (double& v : n.value.row(r)) {
            v *= w;
        }
    }
    n.requires_grad = requires_grad(a) || requires_grad(gate);
    return push(std::move(n));
}

Var Tape::select_rows(std::span<const Var> sources, std::span<const std::size_t> choice) {
    if (sources.empty()) {
        throw DimensionError("select_rows: no sources");
    }
    const Matrix& first = value(sources.front());
    if (choice.size() != first.rows()) {
        throw DimensionError("select_rows: " + std::to_string(choice.size()) +
                             " choices for " + first.shape_string());
    }
    Node n;
    n.op = OpKind::select_rows;
    n.value = Matrix(first.rows(), first.cols());
    for (const Var s : sources) {
        if (!value(s).same_shape(first)) {
            throw DimensionError("select_rows: source shape mismatch " + first.shape_string() +
                                 " vs " + value(s).shape_string());
        }
        n.ids.push_back(s.id);
        n.requires_grad = n.requires_grad || requires_grad(s);
    }
    for (std::size_t r = 0; r < choice.size(); ++r) {
        if (choice[r] >= sources.size()) {
            throw DimensionError("select_rows: choice " + std::to_string(choice[r]) +
                                 " out of range");
        }
        const auto src = value(sources[choice[r]]).row(r);
        std::copy(src.begin(), src.end(), n.value.row(r).begin());
    }
    n.aux = Matrix(choice.size(), 1);
    for (std::size_t r = 0; r < choice.size(); ++r) {
        n.aux(r, 0) = static_cast<double>(choice[r]);
    }
    return push(std::move(n));
}

Var Tape::row_cosine(Var rows, Var key) {
    const Matrix& e = value(rows);
    const Matrix& k = value(key);
    if (k.rows() != 1 || e.cols() != k.cols()) {
        throw DimensionError("row_cosine: rows " + e.shape_string() + " vs key " +
                             k.shape_string());
    }
    Node n;
    n.op = OpKind::row_cosine;
    n.lhs = rows.id;
    n.rhs = key.id;
    n.value = Matrix(e.rows(), 1);
    for (std::size_t r = 0; r < e.rows(); ++r) {
        n.value(r, 0) = cosine_similarity(e.row(r), k.row(0));
    }
    n.requires_grad = requires_grad(rows) || requires_grad(key);
    return push(std::move(n));
}

Var Tape::cross_entropy(Var logits, std::span<const std::size_t> labels) {
    const Matrix& z = value(logits);
    if (labels.size() != z.rows() || z.rows() == 0) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                             " labels for logits " + z.shape_string());
    }
    Node n;
    n.op = OpKind::cross_entropy;
    n.lhs = logits.id;
    n.aux = blora::row_softmax(z);
    double total = 0.0;
    for (std::size_t r = 0; r < z.rows(); ++r) {
        if (labels[r] >= z.cols()) {
            throw DimensionError("cross_entropy: label " + std::to_string(labels[r]) +
                                 " out of range for " + std::to_string(z.cols()) + " classes");
        }
        // log-sum-exp form keeps the loss finite for confident wrong answers.
        const auto row = z.row(r);
        double max = row[0];
        for (double v : row) {
            max = std::max(max, v);
        }
        double lse = 0.0;
        for (double v : row) {
            lse += std::exp(v - max);
        }
        total += std::log(lse) + max - row[labels[r]];
    }
    n.value = Matrix(1, 1, total / static_cast<double>(z.rows()));
    n.ids.assign(labels.begin(), labels.end());
    n.requires_grad = requires_grad(logits);
    return push(std::move(n));
}

Var Tape::mse(Var a, const Matrix& target) {
    const Matrix& x = value(a);
    if (!x.same_shape(target) || x.empty()) {
        throw DimensionError("mse: prediction " + x.shape_string() + " vs target " +
                             target.shape_string());
    }
    Node n;
    n.op = OpKind::mse;
    n.lhs = a.id;
    n.aux = target;
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x.data()[i] - target.data()[i];
        total += d * d;
    }
    n.value = Matrix(1, 1, total / static_cast<double>(x.size()));
    n.requires_grad = requires_grad(a);
    return push(std::move(n));
}

Var Tape::sum(Var a) {
    double total = 0.0;
    for (double v : value(a).data()) {
        total += v;
    }
    Node n;
    n.op = OpKind::sum;
    n.lhs = a.id;
    n.value = Matrix(1, 1, total);
    n.requires_grad = requires_grad(a);
    return push(std::move(n));
}

Var Tape::mean(Var a) {
    const Matrix& x = value(a);
    if (x.empty()) {
        throw DimensionError("mean of empty matrix");
    }
    double total = 0.0;
    for (double v : x.data()) {
        total += v;
    }
    Node n;
    n.op = OpKind::mean;
    n.lhs = a.id;
    n.value = Matrix(1, 1, total / static_cast<double>(x.size()));
    n.requires_grad = requires_grad(a);
    return push(std::move(n));
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
    Node& target = nodes_[id];
    if (!target.requires_grad) {
        return;
    }
    if (target.grad.empty()) {
        target.grad = g;
    } else {
        add_in_place(target.grad, g);
    }
}

void Tape::propagate(Node& n) {
    const Matrix& g = n.grad;
    switch (n.op) {
    case OpKind::constant:
        break;
    case OpKind::parameter:
        add_in_place(n.param->grad, g);
        break;
    case OpKind::matmul:
        if (nodes_[n.lhs].requires_grad) {
            accumulate(n.lhs, matmul_nt(g, nodes_[n.rhs].value));
        }
        if (nodes_[n.rhs].requires_grad) {
            accumulate(n.rhs, matmul_tn(nodes_[n.lhs].value, g));
        }
        break;
    case OpKind::add:
        accumulate(n.lhs, g);
        accumulate(n.rhs, g);
        break;
    case OpKind::scale:
        accumulate(n.lhs, blora::scale(g, n.scalar));
        break;
    case OpKind::add_scalar:
        accumulate(n.lhs, g);
        break;
    case OpKind::tanh: {
        Matrix d = g;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double y = n.value.data()[i];
            d.data()[i] *= 1.0 - y * y;
        }
        accumulate(n.lhs, d);
        break;
    }
    case OpKind::row_softmax: {
        Matrix d(g.rows(), g.cols());
        for (std::size_t r = 0; r < g.rows(); ++r) {
            const double inner = dot(g.row(r), n.value.row(r));
            for (std::size_t c = 0; c < g.cols(); ++c) {
                d(r, c) = n.value(r, c) * (g(r, c) - inner);
            }
        }
        accumulate(n.lhs, d);
        break;
    }
    case OpKind::topk_mask: {
        Matrix d = g;
        for (std::size_t i = 0; i < d.size(); ++i) {
            d.data()[i] *= n.aux.data()[i];
        }
        accumulate(n.lhs, d);
        break;
    }
    case OpKind::slice_rows: {
        const Matrix& src = nodes_[n.lhs].value;
        Matrix d(src.rows(), src.cols());
        for (std::size_t r = 0; r < g.rows(); ++r) {
            const auto from = g.row(r);
            std::copy(from.begin(), from.end(), d.row(n.index + r).begin());
        }
        accumulate(n.lhs, d);
        break;
    }
    case OpKind::scale_rows: {
        const Matrix& x = nodes_[n.lhs].value;
        const Matrix& gate = nodes_[n.rhs].value;
        const bool broadcast = gate.rows() == 1;
        if (nodes_[n.lhs].requires_grad) {
            Matrix d = g;
            for (std::size_t r = 0; r < d.rows(); ++r) {
                const double w = gate(broadcast ? 0 : r, n.index);
                for (double& v : d.row(r)) {
                    v *= w;
                }
            }
            accumulate(n.lhs, d);
        }
        if (nodes_[n.rhs].requires_grad) {
            Matrix d(gate.rows(), gate.cols());
            for (std::size_t r = 0; r < x.rows(); ++r) {
                d(broadcast ? 0 : r, n.index) += dot(g.row(r), x.row(r));
            }
            accumulate(n.rhs, d);
        }
        break;
    }
    case OpKind::select_rows: {
        for (std::size_t s = 0; s < n.ids.size(); ++s) {
            if (!nodes_[n.ids[s]].requires_grad) {
                continue;
            }
            Matrix d(g.rows(), g.cols());
            bool any = false;
            for (std::size_t r = 0; r < g.rows(); ++r) {
                if (static_cast<std::size_t>(n.aux(r, 0)) == s) {
                    const auto from = g.row(r);
                    std::copy(from.begin(), from.end(), d.row(r).begin());
                    any = true;
                }
            }
            if (any) {
                accumulate(n.ids[s], d);
            }
        }
        break;
    }
    case OpKind::row_cosine: {
        const Matrix& e = nodes_[n.lhs].value;
        const Matrix& k = nodes_[n.rhs].value;
        const double nk = l2_norm(k.row(0));
        Matrix de(e.rows(), e.cols());
        Matrix dk(1, k.cols());
        for (std::size_t r = 0; r < e.rows(); ++r) {
            const double ne = l2_norm(e.row(r));
            const double c = n.value(r, 0);
            const double up = g(r, 0);
            for (std::size_t j = 0; j < e.cols(); ++j) {
                de(r, j) = up * (k(0, j) / (ne * nk) - c * e(r, j) / (ne * ne));
                dk(0, j) += up * (e(r, j) / (ne * nk) - c * k(0, j) / (nk * nk));
            }
        }
        accumulate(n.lhs, de);
        accumulate(n.rhs, dk);
        break;
    }
    case OpKind::cross_entropy: {
        Matrix d = n.aux;
        const double w = g(0, 0) / static_cast<double>(d.rows());
        for (std::size_t r = 0; r < d.rows(); ++r) {
            d(r, n.ids[r]) -= 1.0;
            for (double& v : d.row(r)) {
                v *= w;
            }
        }
        accumulate(n.lhs, d);
        break;
    }
    case OpKind::mse: {
        const Matrix& x = nodes_[n.lhs].value;
        Matrix d(x.rows(), x.cols());
        const double w = 2.0 * g(0, 0) / static_cast<double>(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            d.data()[i] = w * (x.data()[i] - n.aux.data()[i]);
        }
        accumulate(n.lhs, d);
        break;
    }
    case OpKind::sum: {
        const Matrix& x = nodes_[n.lhs].value;
        accumulate(n.lhs, Matrix(x.rows(), x.cols(), g(0, 0)));
        break;
    }
    case OpKind::mean: {
        const Matrix& x = nodes_[n.lhs].value;
        accumulate(n.lhs, Matrix(x.rows(), x.cols(), g(0, 0) / static_cast<double>(x.size())));
        break;
    }
    }
}

void Tape::backward(Var loss) {
    if (nodes_.empty()) {
        throw ContractError("backward: tape is empty");
    }
    const Matrix& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw ContractError("backward: loss must be 1x1, got " + lv.shape_string());
    }
    for (Node& n : nodes_) {
        n.grad = Matrix();
        if (n.op == OpKind::parameter) {
            n.param->grad = Matrix(n.value.rows(), n.value.cols());
            n.param->has_grad = true;
        }
    }
    visit_order_.clear();
    visit_order_.reserve(loss.id + 1);
    nodes_[loss.id].grad = Matrix(1, 1, 1.0);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        visit_order_.push_back(id);
        Node& n = nodes_[id];
        if (n.requires_grad && !n.grad.empty()) {
            propagate(n);
        }
    }
}

void Tape::clear() {
    nodes_.clear();
    visit_order_.clear();
}

} // namespace blora
