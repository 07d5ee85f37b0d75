// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sequential training and evaluation of every method over one synthetic
// stream, plus the report documents built from the results.
//
// report.json
//   { "format": "branchlora-report/1",
//     "config": {...},                      the resolved ExperimentConfig
//     "tasks": T,
//     "methods": [names in run order],
//     "summary": { "<method>": { "diagonal": [T], "last_row": [T],
//                                "taskwise_maa": [T],
//                                "metrics": {"ACC","MAA","BWT"},
//                                "trainable_params": n } },
//     "seeds": [ { "seed", "fingerprint",
//                  "methods": { "<method>": { "matrix": [[..]], "metrics",
//                                             "trainable_params",
//                                             "initial_loss": [..],
//                                             "final_loss": [..],
//                                             "immutability_checks",
//                                             branchlora only:
//                                             "oracle_matrix", "oracle_metrics",
//                                             "selector_accuracy" } } } ] }
//
// Summary entries are element-wise medians over seeds. Wall-clock numbers
// never appear in report.json; they go to timing.json so that the report is
// byte-identical across reruns.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "branchlora/config.hpp"
#include "branchlora/metrics.hpp"
#include "branchlora/model.hpp"
#include "branchlora/routing_freeze.hpp"
#include "branchlora/stream.hpp"

namespace blora {

enum class Selector { oracle, automatic };

struct TaskTrainResult {
    double initial_loss = 0.0; ///< task loss over the train split before training
    double final_loss = 0.0;   ///< same, after training
    std::size_t steps = 0;
    double ms_per_batch = 0.0;
    /// One record per adapter layer; empty unless the method freezes.
    std::vector<FreezeRecord> freezes;
};

/// Mean cross-entropy of the model on `data` with every row routed to `task`.
double task_loss(const ContinualModel& model, const TaskData& data, std::size_t task);

/// Trains the newest task. The caller must already have called
/// model.begin_task(). BranchLoRA optimizes task loss + lambda * alignment and
/// then freezes the branches chosen by the policy.
TaskTrainResult train_task(ContinualModel& model, const TaskData& data, std::size_t task_index,
                           const ExperimentConfig& config, std::uint64_t seed);

/// Joint training on the union of `tasks` (the multi-task upper bound).
TaskTrainResult train_joint(ContinualModel& model, std::span<const SyntheticTask> tasks,
                            const ExperimentConfig& config, std::uint64_t seed);

/// Task id chosen by the key selector for every row of `inputs`.
std::vector<std::size_t> select_tasks(const ContinualModel& model, const Matrix& inputs);

/// Fraction of the task's test split classified correctly. `automatic` routes
/// each sample through the key selector; `oracle` uses `task_index`.
double evaluate(const ContinualModel& model, const TaskData& data, std::size_t task_index,
                Selector selector);

struct MethodResult {
    Method method = Method::lora;
    std::string fingerprint;
    EvalMatrix matrix;
    Metrics metrics;
    std::optional<EvalMatrix> oracle_matrix;
    std::optional<Metrics> oracle_metrics;
    std::optional<double> selector_accuracy;
    std::size_t trainable_params = 0;
    std::vector<double> initial_loss;
    std::vector<double> final_loss;
    std::vector<FreezeLedger> ledgers; ///< per layer
    std::size_t immutability_checks = 0;
    // Wall clock; excluded from report.json.
    double ms_per_batch = 0.0;
    std::size_t steps = 0;
};

struct SeedReport {
    std::uint64_t seed = 0;
    std::string fingerprint;
    std::vector<MethodResult> methods;

    const MethodResult& method(Method m) const;
};

struct RunHooks {
    /// Called after each task's evaluation with the model as it stands.
    std::function<void(Method, std::size_t task, const ContinualModel&)> on_task_end;
};

SeedReport run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                          const RunHooks& hooks = {});

nlohmann::json seed_report_json(const SeedReport& report);
nlohmann::json report_json(const ExperimentConfig& config, std::span<const SeedReport> seeds);
nlohmann::json ledger_json(std::span<const SeedReport> seeds);
nlohmann::json timing_json(std::span<const SeedReport> seeds);
/// One row per method x metric: method,metric,median,min,max.
std::string report_csv(const nlohmann::json& report);

double median(std::vector<double> values);

} // namespace blora
