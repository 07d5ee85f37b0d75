// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Router-usage statistics and the tuning-freezing policy: after a task
// finishes, the branches that carried the most gate mass over the task's
// samples are frozen for all later tasks.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "branchlora/adapters.hpp"

namespace blora {

enum class FreezePolicy {
    gate_mass,       ///< accumulated post-softmax gate weight
    selection_count, ///< number of times the branch made the top-k
};

std::string to_string(FreezePolicy policy);
FreezePolicy freeze_policy_from_string(const std::string& text);

class UsageStats {
public:
    UsageStats(std::size_t experts, std::size_t top_k);

    /// Accumulates one gate row per sample. Each row must sum to 1 within
    /// 1e-6 and carry exactly top_k nonzero entries.
    void record_gate(const Matrix& gates);
    void record_gate(std::span<const double> gate);

    std::size_t experts() const noexcept { return mass_.size(); }
    std::size_t top_k() const noexcept { return top_k_; }
    std::size_t samples_seen() const noexcept { return samples_; }
    const std::vector<double>& mass() const noexcept { return mass_; }
    const std::vector<std::size_t>& counts() const noexcept { return counts_; }
    /// mass / samples_seen; all zeros before the first sample.
    std::vector<double> normalized_mass() const;
    void reset();

private:
    std::size_t top_k_;
    std::size_t samples_ = 0;
    std::vector<double> mass_;
    std::vector<std::size_t> counts_;
};

/// Up to `width` not-yet-frozen branches ranked by the policy metric
/// (descending, lowest index first among equals).
std::vector<std::size_t> select_freeze_set(const UsageStats& stats, std::size_t width,
                                           const std::vector<bool>& already_frozen,
                                           FreezePolicy policy = FreezePolicy::gate_mass);

void apply_freeze(BranchLoRALayer& layer, std::span<const std::size_t> indices);

struct FreezeRecord {
    std::size_t task = 0;
    std::vector<std::size_t> frozen;
    std::vector<double> normalized_mass;
    std::vector<std::size_t> selection_counts;
};

/// Append-only per-layer history of freeze decisions.
class FreezeLedger {
public:
    /// Throws PolicyError if any index was frozen by an earlier record.
    void append(FreezeRecord record);
    const std::vector<FreezeRecord>& records() const noexcept { return records_; }
    std::size_t total_frozen() const;

    nlohmann::json to_json() const;
    static FreezeLedger from_json(const nlohmann::json& j);

private:
    std::vector<FreezeRecord> records_;
};

} // namespace blora
