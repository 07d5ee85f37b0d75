// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// The desk-scale classifier every method shares: a stack of frozen
// feed-forward weights, each optionally carrying an adapter, with a fixed
// tanh between layers and a frozen linear readout to class logits.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "branchlora/adapters.hpp"
#include "branchlora/task_selector.hpp"

namespace blora {

enum class Method { zero_shot, lora, moelora, branchlora, multitask };

std::string to_string(Method method);
Method method_from_string(const std::string& text);

struct ModelSpec {
    std::size_t input_dim = 32;
    std::size_t hidden_dim = 32;
    std::size_t classes = 8;
    std::size_t layers = 2;
    AdapterHyperparams hp{64, 128.0, 8, 2, 1.0};
};

class ContinualModel {
public:
    /// Backbone and readout depend only on (spec, seed), so every method
    /// built from the same seed shares them bit-for-bit.
    static ContinualModel create(Method method, const ModelSpec& spec, std::uint64_t seed);

    Method method() const noexcept { return method_; }
    const ModelSpec& spec() const noexcept { return spec_; }
    bool has_adapters() const noexcept { return !adapters_.empty(); }
    bool uses_task_routers() const noexcept { return method_ == Method::branchlora; }

    /// Registers routers and keys for the next task (BranchLoRA); no-op for
    /// the other methods. Returns the task index.
    std::size_t begin_task(Rng& rng);
    std::size_t tasks_started() const noexcept { return tasks_started_; }

    /// Logits for a batch whose rows are independent samples. task_per_row
    /// selects routers for BranchLoRA and is ignored otherwise. When
    /// `gates` is non-null it receives every adapter layer's gate matrix.
    Var logits(Tape& tape, const Matrix& x, std::span<const std::size_t> task_per_row,
               std::vector<Matrix>* gates = nullptr);
    Var logits(Tape& tape, const Matrix& x, std::span<const std::size_t> task_per_row,
               std::vector<Matrix>* gates = nullptr) const;
    Matrix logits(const Matrix& x, std::span<const std::size_t> task_per_row) const;

    /// Parameters updated while training `task`.
    std::vector<Parameter*> trainable_parameters(std::size_t task);
    std::size_t count_trainable_params() const;

    std::vector<AdapterLayer>& adapters() noexcept { return adapters_; }
    const std::vector<AdapterLayer>& adapters() const noexcept { return adapters_; }
    const std::vector<FrozenBackbone>& backbones() const noexcept { return backbones_; }
    const FrozenBackbone& head() const noexcept { return head_; }
    TaskKeyStore& keys() noexcept { return keys_; }
    const TaskKeyStore& keys() const noexcept { return keys_; }

    /// Every parameter matrix, frozen or not, in a fixed order.
    std::vector<const Parameter*> all_parameters() const;

private:
    friend class CheckpointAccess;

    template <class Self>
    static Var logits_impl(Self& self, Tape& tape, const Matrix& x,
                           std::span<const std::size_t> task_per_row, std::vector<Matrix>* gates);

    Method method_ = Method::lora;
    ModelSpec spec_;
    std::vector<FrozenBackbone> backbones_;
    std::vector<AdapterLayer> adapters_;
    FrozenBackbone head_;
    TaskKeyStore keys_;
    std::size_t tasks_started_ = 0;
};

} // namespace blora
