// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchlora/routing_freeze.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "branchlora/errors.hpp"

namespace blora {

std::string to_string(FreezePolicy policy) {
    return policy == FreezePolicy::gate_mass ? "gate_mass" : "selection_count";
}

FreezePolicy freeze_policy_from_string(const std::string& text) {
    if (text == "gate_mass") {
        return FreezePolicy::gate_mass;
    }
    if (text == "selection_count") {
        return FreezePolicy::selection_count;
    }
    throw ParameterError("unknown freeze policy '" + text + "'");
}

UsageStats::UsageStats(std::size_t experts, std::size_t top_k)
    : top_k_(top_k), mass_(experts, 0.0), counts_(experts, 0) {
    if (top_k < 1 || top_k > experts) {
        throw ParameterError("usage stats: top_k outside [1, experts]");
    }
}

void UsageStats::record_gate(std::span<const double> gate) {
    if (gate.size() != mass_.size()) {
        throw DimensionError("record_gate: gate has " + std::to_string(gate.size()) +
                             " entries, expected " + std::to_string(mass_.size()));
    }
    double total = 0.0;
    std::size_t nonzero = 0;
    for (double g : gate) {
        if (!(g >= 0.0)) {
            throw ContractError("record_gate: negative or non-finite gate entry");
        }
        total += g;
        nonzero += g != 0.0 ? 1 : 0;
    }
    if (std::abs(total - 1.0) > 1e-6) {
        throw ContractError("record_gate: gate sums to " + std::to_string(total) + ", not 1");
    }
    if (nonzero != top_k_) {
        throw ContractError("record_gate: gate has " + std::to_string(nonzero) +
                            " nonzero entries, expected " + std::to_string(top_k_));
    }
    for (std::size_t j = 0; j < gate.size(); ++j) {
        mass_[j] += gate[j];
        counts_[j] += gate[j] != 0.0 ? 1 : 0;
    }
    ++samples_;
}

void UsageStats::record_gate(const Matrix& gates) {
    for (std::size_t r = 0; r < gates.rows(); ++r) {
        record_gate(gates.row(r));
    }
}

std::vector<double> UsageStats::normalized_mass() const {
    std::vector<double> out(mass_.size(), 0.0);
    if (samples_ == 0) {
        return out;
    }
    for (std::size_t j = 0; j < out.size(); ++j) {
        out[j] = mass_[j] / static_cast<double>(samples_);
    }
    return out;
}

void UsageStats::reset() {
    std::fill(mass_.begin(), mass_.end(), 0.0);
    std::fill(counts_.begin(), counts_.end(), 0);
    samples_ = 0;
}

std::vector<std::size_t> select_freeze_set(const UsageStats& stats, std::size_t width,
                                           const std::vector<bool>& already_frozen,
                                           FreezePolicy policy) {
    if (stats.samples_seen() == 0) {
        throw PolicyError("select_freeze_set: no samples recorded");
    }
    if (already_frozen.size() != stats.experts()) {
        throw DimensionError("select_freeze_set: freeze mask length mismatch");
    }
    std::vector<std::size_t> candidates;
    for (std::size_t j = 0; j < stats.experts(); ++j) {
        if (!already_frozen[j]) {
            candidates.push_back(j);
        }
    }
    auto metric = [&](std::size_t j) {
        return policy == FreezePolicy::gate_mass ? stats.mass()[j]
                                                 : static_cast<double>(stats.counts()[j]);
    };
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return metric(a) > metric(b); });
    candidates.resize(std::min(width, candidates.size()));
    return candidates;
}

void apply_freeze(BranchLoRALayer& layer, std::span<const std::size_t> indices) {
    layer.freeze_branches(indices);
}

void FreezeLedger::append(FreezeRecord record) {
    std::set<std::size_t> seen;
    for (const auto& r : records_) {
        seen.insert(r.frozen.begin(), r.frozen.end());
    }
    for (std::size_t j : record.frozen) {
        if (!seen.insert(j).second) {
            throw PolicyError("freeze ledger: branch " + std::to_string(j) +
                              " frozen more than once");
        }
    }
    records_.push_back(std::move(record));
}

std::size_t FreezeLedger::total_frozen() const {
    std::size_t total = 0;
    for (const auto& r : records_) {
        total += r.frozen.size();
    }
    return total;
}

nlohmann::json FreezeLedger::to_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : records_) {
        out.push_back({{"task", r.task},
                       {"frozen", r.frozen},
                       {"normalized_mass", r.normalized_mass},
                       {"selection_counts", r.selection_counts}});
    }
    return out;
}

FreezeLedger FreezeLedger::from_json(const nlohmann::json& j) {
    FreezeLedger ledger;
    for (const auto& item : j) {
        FreezeRecord r;
        r.task = item.at("task").get<std::size_t>();
        r.frozen = item.at("frozen").get<std::vector<std::size_t>>();
        r.normalized_mass = item.at("normalized_mass").get<std::vector<double>>();
        r.selection_counts = item.at("selection_counts").get<std::vector<std::size_t>>();
        ledger.append(std::move(r));
    }
    return ledger;
}

} // namespace blora
