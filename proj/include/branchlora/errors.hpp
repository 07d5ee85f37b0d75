// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy shared by all modules. Every error carries a short kind
// tag so the CLI can emit a single machine-parseable line.

#pragma once

#include <stdexcept>
#include <string>

namespace blora {

class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};

struct ParameterError : Error {
    explicit ParameterError(const std::string& m) : Error("parameter", m) {}
};

struct DegenerateInputError : Error {
    explicit DegenerateInputError(const std::string& m) : Error("degenerate-input", m) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& m) : Error("contract", m) {}
};

struct RoutingError : Error {
    explicit RoutingError(const std::string& m) : Error("routing", m) {}
};

struct PolicyError : Error {
    explicit PolicyError(const std::string& m) : Error("policy", m) {}
};

struct SelectorError : Error {
    explicit SelectorError(const std::string& m) : Error("selector", m) {}
};

struct AnalysisError : Error {
    explicit AnalysisError(const std::string& m) : Error("analysis", m) {}
};

struct IoError : Error {
    explicit IoError(const std::string& m) : Error("io", m) {}
};

/// Configuration or schema violation. `path` names the offending field,
/// e.g. "adapter.top_k".
class ConfigError : public Error {
public:
    ConfigError(std::string path, const std::string& message, std::string kind = "config")
        : Error(std::move(kind), path.empty() ? message : path + ": " + message),
          path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// A report or snapshot document that does not match its schema.
class SchemaError : public ConfigError {
public:
    SchemaError(std::string path, const std::string& message)
        : ConfigError(std::move(path), message, "schema") {}
};

} // namespace blora
