// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapters injected beside a frozen feed-forward weight:
//
//   LoRA        h = x W_f + (alpha/r) x A B
//   MoELoRA     h = x W_f + (alpha/r) sum_j R(x)_j x A_j B_j,
//               R(x) = softmax(x_0 W_r)                (dense gate)
//   BranchLoRA  h = x W_f + (alpha/r) sum_j R_t(x)_j (x A) B_j,
//               R_t(x) = softmax(topk(x_0 W_r^t))      (one router per task,
//                                                       one shared A)
//
// x_0 is the first row of x. In Routing::per_row mode every row of x is an
// independent single-token sample and receives its own gate.

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "branchlora/autodiff.hpp"
#include "branchlora/tensor.hpp"

namespace blora {

using Rng = std::mt19937_64;

/// Fills a fresh (rows x cols) matrix with N(0, stddev^2) draws.
Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

struct AdapterHyperparams {
    std::size_t rank = 128;
    double alpha = 256.0;
    std::size_t experts = 8;
    std::size_t top_k = 2;
    double lambda = 1.0;

    std::size_t per_expert_rank() const { return rank / experts; }
    /// alpha over the *total* rank, for every adapter kind.
    double scaling() const { return alpha / static_cast<double>(rank); }
    /// Throws ParameterError on any violated constraint.
    void validate() const;
};

struct LayerDims {
    std::size_t d_in = 32;
    std::size_t d_out = 32;
};

enum class AdapterKind { lora, moelora, branchlora };
enum class Routing { first_token, per_row };

std::string to_string(AdapterKind kind);
AdapterKind adapter_kind_from_string(const std::string& text);

class FrozenBackbone {
public:
    FrozenBackbone() = default;
    FrozenBackbone(std::string name, Matrix weight);

    const Parameter& weight() const noexcept { return weight_; }
    std::size_t d_in() const noexcept { return weight_.value.rows(); }
    std::size_t d_out() const noexcept { return weight_.value.cols(); }

    Var forward(Tape& tape, Var x) const;

private:
    Parameter weight_;
};

struct LayerOutput {
    Var h;
    /// Router output; absent for plain LoRA.
    std::optional<Var> gate;
};

class LoRALayer {
public:
    LoRALayer(const std::string& prefix, LayerDims dims, AdapterHyperparams hp, Matrix backbone,
              Rng& rng);

    LayerOutput forward(Tape& tape, Var x);
    LayerOutput forward(Tape& tape, Var x) const;
    Matrix forward(const Matrix& x) const;

    std::vector<Parameter*> trainable_parameters();
    std::size_t count_trainable_params() const;

    Parameter& a() noexcept { return a_; }
    Parameter& b() noexcept { return b_; }
    const Parameter& a() const noexcept { return a_; }
    const Parameter& b() const noexcept { return b_; }
    const FrozenBackbone& backbone() const noexcept { return backbone_; }
    const AdapterHyperparams& hyperparams() const noexcept { return hp_; }
    LayerDims dims() const noexcept { return dims_; }

private:
    template <class Self>
    static LayerOutput forward_impl(Self& self, Tape& tape, Var x);

    LayerDims dims_;
    AdapterHyperparams hp_;
    FrozenBackbone backbone_;
    Parameter a_;
    Parameter b_;
};

class MoELoRALayer {
public:
    struct Expert {
        Parameter a;
        Parameter b;
    };

    MoELoRALayer(const std::string& prefix, LayerDims dims, AdapterHyperparams hp,
                 Matrix backbone, Rng& rng);

    LayerOutput forward(Tape& tape, Var x, Routing routing = Routing::first_token);
    LayerOutput forward(Tape& tape, Var x, Routing routing = Routing::first_token) const;

    std::vector<Parameter*> trainable_parameters();
    std::size_t count_trainable_params() const;

    std::vector<Expert>& experts() noexcept { return experts_; }
    const std::vector<Expert>& experts() const noexcept { return experts_; }
    Parameter& router() noexcept { return router_; }
    const Parameter& router() const noexcept { return router_; }
    const FrozenBackbone& backbone() const noexcept { return backbone_; }
    const AdapterHyperparams& hyperparams() const noexcept { return hp_; }
    LayerDims dims() const noexcept { return dims_; }

private:
    template <class Self>
    static LayerOutput forward_impl(Self& self, Tape& tape, Var x, Routing routing);

    LayerDims dims_;
    AdapterHyperparams hp_;
    FrozenBackbone backbone_;
    std::vector<Expert> experts_;
    Parameter router_;
};

class BranchLoRALayer {
public:
    BranchLoRALayer(const std::string& prefix, LayerDims dims, AdapterHyperparams hp,
                    Matrix backbone, Rng& rng);

    /// Appends a router for the next task, drawn from N(0, 1/d_in), and
    /// freezes every earlier router. Returns the new task index.
    std::size_t add_task_router();
    std::size_t task_count() const noexcept { return routers_.size(); }

    /// Routes every row through the router of `task`.
    LayerOutput forward(Tape& tape, Var x, std::size_t task,
                        Routing routing = Routing::first_token);
    LayerOutput forward(Tape& tape, Var x, std::size_t task,
                        Routing routing = Routing::first_token) const;
    /// Per-row routing where row r uses the router of task_per_row[r].
    LayerOutput forward(Tape& tape, Var x, std::span<const std::size_t> task_per_row);
    LayerOutput forward(Tape& tape, Var x, std::span<const std::size_t> task_per_row) const;

    /// Direct evaluation that recomputes x A for every branch; the reference
    /// for the shared-product path in forward().
    Matrix forward_reference(const Matrix& x, std::size_t task,
                             Routing routing = Routing::first_token) const;

    /// Marks branches as frozen. Throws PolicyError on re-freezing and
    /// ParameterError on an out-of-range index.
    void freeze_branches(std::span<const std::size_t> indices);
    std::vector<bool> freeze_mask() const;
    std::size_t frozen_count() const;

    /// A_shared, the unfrozen branches and the router of `task`.
    std::vector<Parameter*> trainable_parameters(std::size_t task);
    /// Scalars that receive gradients while training the newest task.
    std::size_t count_trainable_params() const;

    Parameter& shared_a() noexcept { return a_shared_; }
    const Parameter& shared_a() const noexcept { return a_shared_; }
    std::vector<Parameter>& branches() noexcept { return branches_; }
    const std::vector<Parameter>& branches() const noexcept { return branches_; }
    Parameter& router(std::size_t task);
    const Parameter& router(std::size_t task) const;
    const FrozenBackbone& backbone() const noexcept { return backbone_; }
    const AdapterHyperparams& hyperparams() const noexcept { return hp_; }
    LayerDims dims() const noexcept { return dims_; }

private:
    template <class Self>
    static LayerOutput forward_impl(Self& self, Tape& tape, Var x,
                                    std::span<const std::size_t> task_per_row, bool per_row);

    LayerDims dims_;
    AdapterHyperparams hp_;
    std::string prefix_;
    FrozenBackbone backbone_;
    Parameter a_shared_;
    std::vector<Parameter> branches_;
    std::deque<Parameter> routers_;
    Rng router_rng_;
};

using AdapterLayer = std::variant<LoRALayer, MoELoRALayer, BranchLoRALayer>;

/// Builds an adapter of the requested kind. A matrices are N(0, 1/d_in), B
/// matrices and the MoELoRA router are zero, nothing is frozen. BranchLoRA
/// routers are created later by add_task_router(). When no backbone is
/// supplied one is drawn from the same seed.
AdapterLayer init_adapter(AdapterKind kind, LayerDims dims, const AdapterHyperparams& hp,
                          std::uint64_t seed, std::optional<Matrix> backbone = std::nullopt,
                          const std::string& prefix = "layer");

std::size_t count_trainable_params(const AdapterLayer& layer);

/// Trainable scalars of a dense finetune of the same weight.
inline std::size_t dense_param_count(LayerDims dims) { return dims.d_in * dims.d_out; }

} // namespace blora
