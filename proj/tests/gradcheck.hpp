// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference oracle for tape gradients.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "branchlora/autodiff.hpp"

namespace blora::testing {

/// Builds a scalar loss from the given parameter leaves.
using LossBuilder = std::function<Var(Tape&, std::vector<Var>&)>;

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t entries = 0;
};

/// |a - n| / max(|a|, |n|, floor): relative error, with an absolute floor so
/// that entries whose true gradient is ~0 are not judged on roundoff alone.
inline double rel_error(double analytic, double numeric, double floor = 1e-3) {
    return std::abs(analytic - numeric) /
           std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double evaluate_loss(std::vector<Parameter>& params, const LossBuilder& build) {
    Tape tape;
    std::vector<Var> leaves;
    for (auto& p : params) {
        leaves.push_back(tape.parameter(p));
    }
    return tape.value(build(tape, leaves))(0, 0);
}

/// Compares backward() against (f(x+h) - f(x-h)) / 2h for every entry.
inline GradCheck check_gradients(std::vector<Parameter>& params, const LossBuilder& build,
                                 double h = 1e-6) {
    Tape tape;
    std::vector<Var> leaves;
    for (auto& p : params) {
        leaves.push_back(tape.parameter(p));
    }
    tape.backward(build(tape, leaves));
    std::vector<Matrix> analytic;
    for (auto& p : params) {
        analytic.push_back(p.grad);
    }

    GradCheck out;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto values = params[i].value.data();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double saved = values[j];
            values[j] = saved + h;
            const double up = evaluate_loss(params, build);
            values[j] = saved - h;
            const double down = evaluate_loss(params, build);
            values[j] = saved;
            const double numeric = (up - down) / (2.0 * h);
            out.max_rel_error =
                std::max(out.max_rel_error, rel_error(analytic[i].data()[j], numeric));
            ++out.entries;
        }
    }
    return out;
}

/// Same check for parameters owned elsewhere (e.g. inside a layer) whose
/// loss builder records them itself.
inline GradCheck check_gradients(std::span<Parameter* const> params,
                                 const std::function<Var(Tape&)>& build, double h = 1e-6) {
    {
        Tape tape;
        tape.backward(build(tape));
    }
    std::vector<Matrix> analytic;
    for (Parameter* p : params) {
        analytic.push_back(p->has_grad ? p->grad : Matrix(p->value.rows(), p->value.cols()));
    }
    auto eval = [&] {
        Tape tape;
        return tape.value(build(tape))(0, 0);
    };
    GradCheck out;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto values = params[i]->value.data();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double saved = values[j];
            values[j] = saved + h;
            const double up = eval();
            values[j] = saved - h;
            const double down = eval();
            values[j] = saved;
            out.max_rel_error = std::max(
                out.max_rel_error, rel_error(analytic[i].data()[j], (up - down) / (2.0 * h)));
            ++out.entries;
        }
    }
    return out;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                            double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    Matrix m(rows, cols);
    for (double& v : m.data()) {
        v = dist(rng);
    }
    return m;
}

} // namespace blora::testing
