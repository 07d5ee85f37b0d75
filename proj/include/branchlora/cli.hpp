// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Subcommands behind the `branchlora` executable.
//
//   run      --config FILE [--seed S]... [--jobs N] [--out DIR]
//   analyze  RUN_DIR
//   report   REPORT_JSON [--out DIR]
//
// Output directory precedence for `run`: --out, then $BRANCHLORA_OUT, then
// output_dir from the config. Exit codes: 0 success, 1 runtime failure,
// 2 config or schema error. Failures print one line to stderr:
//
//   error[<kind>]: <message>

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace blora {

inline constexpr const char* kOutputEnv = "BRANCHLORA_OUT";

struct RunOptions {
    std::filesystem::path config;
    std::vector<std::uint64_t> seeds; ///< overrides the config's list when non-empty
    std::size_t jobs = 1;
    std::optional<std::filesystem::path> out;
};

/// Runs every seed and writes report.json, report.csv, ledger.json,
/// timing.json, config.json and checkpoints/seed_<s>/<method>/task_<i>/.
/// Returns the output directory.
std::filesystem::path cmd_run(const RunOptions& options);

/// Reads a run directory and writes similarity.json, efficiency.csv and
/// vectors.csv into it. Nothing is written unless every input is valid.
void cmd_analyze(const std::filesystem::path& run_dir);

/// Prints the per-method table to `out` and writes taskwise_maa.csv into
/// `out_dir` (default: the report's directory). Schema problems raise
/// SchemaError naming the missing path.
void cmd_report(const std::filesystem::path& report, std::ostream& out,
                const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// The table printed by cmd_report.
std::string render_table(const nlohmann::json& report);

/// Entry point; maps exceptions to exit codes and the error line.
int run_cli(int argc, char** argv);

} // namespace blora
