// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Statistics over trained adapters: how alike the MoELoRA experts' A and B
// factors become, and what each method costs to train.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "branchlora/checkpoint.hpp"
#include "branchlora/config.hpp"

namespace blora {

/// Mean cosine over unordered pairs. Zero-norm vectors are skipped; fewer than
/// two usable vectors raises AnalysisError.
double mean_pairwise_cosine(std::span<const std::vector<double>> vectors);

struct FlatFactor {
    std::size_t layer = 0;
    std::size_t expert = 0;
    std::size_t task = 0;
    char factor = 'A'; ///< 'A' or 'B'
    std::vector<double> values;
};

/// Every expert's A and B from every snapshot, flattened row-major.
std::vector<FlatFactor> flatten_experts(std::span<const Checkpoint> moelora_snapshots);

struct LayerSimilarity {
    std::size_t layer = 0;
    double mean_a = 0.0;
    double mean_b = 0.0;
    double margin = 0.0; ///< mean_a - mean_b
    std::size_t vectors_a = 0;
    std::size_t vectors_b = 0;
};

struct SimilarityReport {
    std::vector<LayerSimilarity> layers;
    /// All layers' vectors compared together.
    double pooled_a = 0.0;
    double pooled_b = 0.0;
    double pooled_margin = 0.0;
    /// Mean of the per-layer margins.
    double margin = 0.0;
};

/// Compares flattened factors over all (expert, snapshot) pairs of each layer.
/// Throws AnalysisError for non-MoELoRA snapshots or fewer than two experts.
SimilarityReport expert_similarity(std::span<const Checkpoint> moelora_snapshots);

nlohmann::json to_json(const SimilarityReport& report);

/// layer,factor,expert,task,v0,v1,...
std::string vectors_csv(std::span<const FlatFactor> factors);

struct EfficiencyRow {
    Method method = Method::lora;
    std::size_t trainable_params = 0;
    /// Scalars the optimizer updated in one step, task keys included.
    std::size_t optimizer_scalars = 0;
    std::size_t key_params = 0;
    std::size_t batches = 0;
    double mean_ms = 0.0;
    double std_ms = 0.0;
};

/// Times forward+backward on `batches` minibatches per method, interleaving
/// the methods batch by batch so drift in machine load hits them equally.
std::vector<EfficiencyRow> efficiency_report(std::span<const Method> methods,
                                             const ExperimentConfig& config,
                                             std::size_t batches = 100);

/// method,trainable_params,optimizer_scalars,key_params,batches,mean_ms,std_ms
std::string efficiency_csv(std::span<const EfficiencyRow> rows);

} // namespace blora
