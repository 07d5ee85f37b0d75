// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic sequential classification tasks.
//
// Every task t owns a cluster center mu_t and a hidden random map P_t. A
// sample is x = mu_t + eps with isotropic noise eps, and its label is
// argmax(eps P_t). Centers are orthogonalized within each embedding half so
// the key selector can tell tasks apart, while all tasks vary over the same
// noise subspace with disagreeing label maps, which is what makes a shared
// adapter forget.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "branchlora/tensor.hpp"

namespace blora {

struct StreamSpec {
    std::size_t tasks = 4;
    std::size_t train_samples = 512;
    std::size_t test_samples = 256;
    std::size_t input_dim = 32;
    std::size_t classes = 8;
    double center_scale = 4.0;
    double noise_scale = 0.5;
    /// Every task reuses task 0's generator and data (forgetting disabled).
    bool repeat_first_task = false;

    void validate() const;
};

struct TaskData {
    Matrix inputs; ///< (n, input_dim)
    std::vector<std::size_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

struct SyntheticTask {
    std::size_t id = 0;
    std::size_t classes = 0;
    TaskData train;
    TaskData test;
    Matrix center;     ///< (1, input_dim)
    Matrix target_map; ///< (input_dim, classes)
    std::uint64_t seed = 0;
};

struct TaskStream {
    std::vector<SyntheticTask> tasks;
    std::uint64_t seed = 0;

    std::size_t size() const noexcept { return tasks.size(); }
    /// FNV-1a over every input value and label, as 16 hex digits.
    std::string fingerprint() const;
};

TaskStream generate_stream(const StreamSpec& spec, std::uint64_t seed);

/// Deterministic 64-bit mixing used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

} // namespace blora
