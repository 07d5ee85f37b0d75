// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Continual-learning accuracy matrix and the three summary scores:
//
//   ACC = 1/T sum_i A[T][i]
//   MAA = 1/T sum_i (1/i sum_{k<=i} A[i][k])
//   BWT = 1/T sum_i (A[T][i] - A[i][i])

#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <json.hpp>

namespace blora {

/// Lower-triangular T x T matrix; entry (i, k) is the accuracy on task k
/// after training through task i, defined for k <= i. Indices are 0-based.
class EvalMatrix {
public:
    EvalMatrix() = default;
    explicit EvalMatrix(std::size_t tasks);

    std::size_t tasks() const noexcept { return rows_.size(); }
    void set(std::size_t i, std::size_t k, double accuracy);
    double at(std::size_t i, std::size_t k) const;
    bool has(std::size_t i, std::size_t k) const;
    bool complete() const;

    /// A[i][i] for every i.
    std::vector<double> diagonal() const;
    /// A[T-1][k] for every k.
    std::vector<double> last_row() const;

    nlohmann::json to_json() const;
    static EvalMatrix from_json(const nlohmann::json& j);

    friend bool operator==(const EvalMatrix&, const EvalMatrix&) = default;

private:
    std::vector<std::vector<std::optional<double>>> rows_;
};

struct Metrics {
    double acc = 0.0;
    double maa = 0.0;
    double bwt = 0.0;
};

/// Throws ContractError when the lower triangle is not fully populated.
Metrics compute_metrics(const EvalMatrix& matrix);

/// Running average accuracy after each task: mean_{k<=i} A[i][k].
std::vector<double> taskwise_maa(const EvalMatrix& matrix);

nlohmann::json to_json(const Metrics& m);
Metrics metrics_from_json(const nlohmann::json& j);

} // namespace blora
