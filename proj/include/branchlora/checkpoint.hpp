// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// On-disk checkpoint layout (one directory per method and task index):
//
//   manifest.json     format tag, method, task index, model spec and
//                     hyperparameters, per-layer freeze mask and router ids,
//                     key task ids, and one entry per matrix
//                     {name, rows, cols, frozen, file}
//   <name>.f64        rows*cols little-endian IEEE-754 doubles, row-major

#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "branchlora/model.hpp"

namespace blora {

inline constexpr const char* kCheckpointFormat = "branchlora-checkpoint/1";

struct CheckpointMatrix {
    std::string name;
    Matrix value;
    bool frozen = false;
};

struct Checkpoint {
    Method method = Method::lora;
    std::size_t task_index = 0;
    std::size_t tasks_started = 0;
    ModelSpec spec;
    std::vector<std::vector<bool>> freeze_masks; ///< per layer, BranchLoRA only
    std::vector<CheckpointMatrix> matrices;

    const CheckpointMatrix& matrix(const std::string& name) const;
    bool contains(const std::string& name) const;
};

Checkpoint make_checkpoint(const ContinualModel& model, std::size_t task_index);
ContinualModel restore_model(const Checkpoint& checkpoint);

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

void write_f64(const std::filesystem::path& file, const Matrix& m);
Matrix read_f64(const std::filesystem::path& file, std::size_t rows, std::size_t cols);

} // namespace blora
