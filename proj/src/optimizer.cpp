// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchlora/optimizer.hpp"

#include <cmath>

#include "branchlora/errors.hpp"

namespace blora {

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
    if (!(config_.learning_rate > 0.0)) {
        throw ParameterError("optimizer learning rate must be positive");
    }
}

std::size_t Optimizer::step(std::span<Parameter* const> params) {
    for (const Parameter* p : params) {
        if (!p->frozen && (!p->has_grad || !p->grad.same_shape(p->value))) {
            throw ContractError("optimizer step: tunable parameter '" + p->name +
                                "' has no gradient");
        }
    }
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double correction1 = 1.0 - std::pow(config_.beta1, t);
    const double correction2 = 1.0 - std::pow(config_.beta2, t);

    std::size_t updated = 0;
    for (Parameter* p : params) {
        if (p->frozen) {
            p->clear_grad();
            continue;
        }
        auto value = p->value.data();
        const auto grad = p->grad.data();
        if (config_.kind == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < value.size(); ++i) {
                value[i] -= config_.learning_rate * grad[i];
            }
        } else {
            auto [it, inserted] = moments_.try_emplace(p->name);
            Moments& m = it->second;
            if (inserted) {
                m.first = Matrix(p->value.rows(), p->value.cols());
                m.second = Matrix(p->value.rows(), p->value.cols());
            }
            auto m1 = m.first.data();
            auto m2 = m.second.data();
            for (std::size_t i = 0; i < value.size(); ++i) {
                m1[i] = config_.beta1 * m1[i] + (1.0 - config_.beta1) * grad[i];
                m2[i] = config_.beta2 * m2[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
                const double m_hat = m1[i] / correction1;
                const double v_hat = m2[i] / correction2;
                value[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
            }
        }
        updated += value.size();
        p->clear_grad();
    }
    return updated;
}

const Optimizer::Moments* Optimizer::moments(const std::string& name) const {
    auto it = moments_.find(name);
    return it == moments_.end() ? nullptr : &it->second;
}

} // namespace blora
