// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small experiment shapes that train in well under a second.

#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "branchlora/config.hpp"

namespace blora::testing {

inline ExperimentConfig small_config() {
    ExperimentConfig c = default_config();
    c.stream.tasks = 3;
    c.stream.train_samples = 192;
    c.stream.test_samples = 128;
    c.stream.input_dim = c.model.input_dim = 16;
    c.model.hidden_dim = 16;
    c.stream.classes = c.model.classes = 4;
    c.model.layers = 1;
    c.model.hp = {16, 32.0, 4, 2, 1.0};
    c.training.epochs = 12;
    c.training.batch_size = 16;
    c.training.optimizer.learning_rate = 3e-3;
    c.training.timing_batches = 5;
    c.seeds = {1};
    return c;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("branchlora_" + tag + "_" + std::to_string(rd()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace blora::testing
