// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration and its JSON schema. Every field is optional and
// falls back to the default shown in default_config(); unknown fields are
// rejected with the path of the offending key.
//
// {
//   "stream":   { "tasks", "train_samples", "test_samples", "input_dim",
//                 "classes", "center_scale", "noise_scale",
//                 "repeat_first_task", "seeds": [..] },
//   "adapter":  { "rank", "alpha", "experts", "top_k", "lambda",
//                 "freeze_width", "freeze_policy", "layers", "hidden_dim" },
//   "training": { "epochs", "batch_size", "optimizer", "learning_rate",
//                 "beta1", "beta2", "epsilon", "timing_batches" },
//   "methods":  [ "zero_shot", "lora", "moelora", "branchlora", "multitask" ],
//   "output_dir": "out"
// }

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "branchlora/model.hpp"
#include "branchlora/optimizer.hpp"
#include "branchlora/routing_freeze.hpp"
#include "branchlora/stream.hpp"

namespace blora {

struct TrainingSpec {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    OptimizerConfig optimizer{OptimizerKind::adam, 1e-3, 0.9, 0.999, 1e-8};
    std::size_t timing_batches = 100;
};

struct ExperimentConfig {
    StreamSpec stream;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    ModelSpec model;
    /// Branches frozen per task; unset means "same as top_k".
    std::optional<std::size_t> freeze_width;
    FreezePolicy freeze_policy = FreezePolicy::gate_mass;
    TrainingSpec training;
    std::vector<Method> methods{Method::zero_shot, Method::lora, Method::moelora,
                                Method::branchlora, Method::multitask};
    std::string output_dir = "out";

    std::size_t effective_freeze_width() const { return freeze_width.value_or(model.hp.top_k); }
    /// Cross-field checks; throws ConfigError naming the field.
    void validate() const;
};

ExperimentConfig default_config();
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);

/// Reads and validates a config file. Malformed JSON raises ConfigError with
/// the parser's line/column in the message.
ExperimentConfig load_config(const std::filesystem::path& path);

} // namespace blora
