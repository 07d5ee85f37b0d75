// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchlora/metrics.hpp"

#include <cmath>

#include "branchlora/errors.hpp"

namespace blora {

EvalMatrix::EvalMatrix(std::size_t tasks) : rows_(tasks) {
    for (std::size_t i = 0; i < tasks; ++i) {
        rows_[i].resize(i + 1);
    }
}

void EvalMatrix::set(std::size_t i, std::size_t k, double accuracy) {
    if (i >= tasks() || k > i) {
        throw DimensionError("eval matrix entry (" + std::to_string(i) + "," + std::to_string(k) +
                             ") outside the lower triangle of size " + std::to_string(tasks()));
    }
    if (!(accuracy >= 0.0 && accuracy <= 1.0)) {
        throw ContractError("accuracy " + std::to_string(accuracy) + " outside [0, 1]");
    }
    rows_[i][k] = accuracy;
}

bool EvalMatrix::has(std::size_t i, std::size_t k) const {
    return i < tasks() && k <= i && rows_[i][k].has_value();
}

double EvalMatrix::at(std::size_t i, std::size_t k) const {
    if (!has(i, k)) {
        throw ContractError("eval matrix entry (" + std::to_string(i) + "," + std::to_string(k) +
                            ") is not populated");
    }
    return *rows_[i][k];
}

bool EvalMatrix::complete() const {
    for (const auto& row : rows_) {
        for (const auto& v : row) {
            if (!v) {
                return false;
            }
        }
    }
    return !rows_.empty();
}

std::vector<double> EvalMatrix::diagonal() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < tasks(); ++i) {
        out.push_back(at(i, i));
    }
    return out;
}

std::vector<double> EvalMatrix::last_row() const {
    std::vector<double> out;
    const std::size_t last = tasks() - 1;
    for (std::size_t k = 0; k < tasks(); ++k) {
        out.push_back(at(last, k));
    }
    return out;
}

nlohmann::json EvalMatrix::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < tasks(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t k = 0; k <= i; ++k) {
            row.push_back(at(i, k));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

EvalMatrix EvalMatrix::from_json(const nlohmann::json& j) {
    if (!j.is_array()) {
        throw ContractError("eval matrix must be an array of rows");
    }
    EvalMatrix m(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_array() || j[i].size() != i + 1) {
            throw ContractError("eval matrix row " + std::to_string(i) + " must have " +
                                std::to_string(i + 1) + " entries");
        }
        for (std::size_t k = 0; k <= i; ++k) {
            m.set(i, k, j[i][k].get<double>());
        }
    }
    return m;
}

Metrics compute_metrics(const EvalMatrix& matrix) {
    if (!matrix.complete()) {
        throw ContractError("compute_metrics: eval matrix is incomplete");
    }
    const std::size_t T = matrix.tasks();
    const double n = static_cast<double>(T);
    Metrics m;
    for (std::size_t i = 0; i < T; ++i) {
        m.acc += matrix.at(T - 1, i);
        m.bwt += matrix.at(T - 1, i) - matrix.at(i, i);
    }
    for (double running : taskwise_maa(matrix)) {
        m.maa += running;
    }
    m.acc /= n;
    m.maa /= n;
    m.bwt /= n;
    return m;
}

std::vector<double> taskwise_maa(const EvalMatrix& matrix) {
    std::vector<double> out;
    for (std::size_t i = 0; i < matrix.tasks(); ++i) {
        double row = 0.0;
        for (std::size_t k = 0; k <= i; ++k) {
            row += matrix.at(i, k);
        }
        out.push_back(row / static_cast<double>(i + 1));
    }
    return out;
}

nlohmann::json to_json(const Metrics& m) {
    return {{"ACC", m.acc}, {"MAA", m.maa}, {"BWT", m.bwt}};
}

Metrics metrics_from_json(const nlohmann::json& j) {
    return {j.at("ACC").get<double>(), j.at("MAA").get<double>(), j.at("BWT").get<double>()};
}

} // namespace blora
