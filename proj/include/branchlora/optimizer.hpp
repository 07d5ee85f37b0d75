// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>

#include "branchlora/autodiff.hpp"

namespace blora {

enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adaptive-moment (or plain gradient-descent) updates keyed by parameter
/// name. One instance per training phase; moment buffers are created lazily
/// with the shape of the parameter they track.
class Optimizer {
public:
    struct Moments {
        Matrix first;
        Matrix second;
    };

    explicit Optimizer(OptimizerConfig config = {});

    /// Applies one update to every non-frozen parameter and clears all
    /// gradients. Frozen parameters are left untouched. Returns the number of
    /// scalars that were updated.
    std::size_t step(std::span<Parameter* const> params);

    std::size_t step_count() const noexcept { return steps_; }
    const OptimizerConfig& config() const noexcept { return config_; }
    const Moments* moments(const std::string& name) const;

private:
    OptimizerConfig config_;
    std::size_t steps_ = 0;
    std::map<std::string, Moments> moments_;
};

} // namespace blora
