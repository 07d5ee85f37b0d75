// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchlora/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "branchlora/analysis.hpp"
#include "branchlora/checkpoint.hpp"
#include "branchlora/config.hpp"
#include "branchlora/errors.hpp"
#include "branchlora/harness.hpp"

namespace blora {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + file.string());
    }
    out << text;
    if (!out) {
        throw IoError("failed writing " + file.string());
    }
}

json read_json(const fs::path& file) {
    std::ifstream in(file);
    if (!in) {
        throw IoError("cannot read " + file.string());
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError(file.filename().string(), std::string("malformed JSON: ") + e.what());
    }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

fs::path checkpoint_dir(const fs::path& root, std::uint64_t seed, Method m, std::size_t task) {
    return root / "checkpoints" / ("seed_" + std::to_string(seed)) / to_string(m) /
           ("task_" + std::to_string(task));
}

std::vector<SeedReport> run_seeds(const ExperimentConfig& config, const fs::path& out,
                                  std::size_t jobs) {
    const std::size_t n = config.seeds.size();
    std::vector<SeedReport> reports(n);
    std::vector<std::exception_ptr> failures(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            const std::uint64_t seed = config.seeds[i];
            RunHooks hooks;
            hooks.on_task_end = [&](Method m, std::size_t task, const ContinualModel& model) {
                save_checkpoint(make_checkpoint(model, task), checkpoint_dir(out, seed, m, task));
            };
            try {
                reports[i] = run_experiment(config, seed, hooks);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::clamp<std::size_t>(jobs, 1, n);
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& t : pool) {
        t.join();
    }
    for (const auto& f : failures) {
        if (f) {
            std::rethrow_exception(f);
        }
    }
    return reports;
}

json efficiency_json(std::span<const EfficiencyRow> rows) {
    json out = json::array();
    for (const auto& r : rows) {
        out.push_back({{"method", to_string(r.method)},
                       {"trainable_params", r.trainable_params},
                       {"optimizer_scalars", r.optimizer_scalars},
                       {"key_params", r.key_params},
                       {"batches", r.batches},
                       {"mean_ms", r.mean_ms},
                       {"std_ms", r.std_ms}});
    }
    return out;
}

EfficiencyRow efficiency_row_from_json(const json& j, const std::string& path) {
    try {
        EfficiencyRow r;
        r.method = method_from_string(j.at("method").get<std::string>());
        r.trainable_params = j.at("trainable_params").get<std::size_t>();
        r.optimizer_scalars = j.at("optimizer_scalars").get<std::size_t>();
        r.key_params = j.at("key_params").get<std::size_t>();
        r.batches = j.at("batches").get<std::size_t>();
        r.mean_ms = j.at("mean_ms").get<double>();
        r.std_ms = j.at("std_ms").get<double>();
        return r;
    } catch (const json::exception& e) {
        throw SchemaError(path, e.what());
    } catch (const ParameterError& e) {
        throw SchemaError(path + ".method", e.what());
    }
}

/// Walks `path` (dot separated) from the root and checks the leaf's type.
const json& require_path(const json& root, const std::string& path, json::value_t type) {
    const json* node = &root;
    std::string done;
    std::stringstream parts(path);
    std::string part;
    while (std::getline(parts, part, '.')) {
        done = done.empty() ? part : done + "." + part;
        if (!node->is_object() || !node->contains(part)) {
            throw SchemaError(done, "missing field");
        }
        node = &(*node)[part];
    }
    const bool ok = type == json::value_t::number_float ? node->is_number() : node->type() == type;
    if (!ok) {
        throw SchemaError(path, std::string("expected ") + json(type).type_name() + ", found " +
                                    node->type_name());
    }
    return *node;
}

void require_numbers(const json& root, const std::string& path, std::size_t count) {
    const json& arr = require_path(root, path, json::value_t::array);
    if (arr.size() != count) {
        throw SchemaError(path, "expected " + std::to_string(count) + " entries, found " +
                                    std::to_string(arr.size()));
    }
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number()) {
            throw SchemaError(path + "[" + std::to_string(i) + "]", "expected a number");
        }
    }
}

/// Validates the parts of report.json that `report` reads; returns T.
std::size_t check_report_schema(const json& report) {
    if (!report.is_object()) {
        throw SchemaError("<root>", "expected an object");
    }
    const std::size_t tasks = require_path(report, "tasks", json::value_t::number_unsigned).get<std::size_t>();
    const json& methods = require_path(report, "methods", json::value_t::array);
    for (std::size_t i = 0; i < methods.size(); ++i) {
        if (!methods[i].is_string()) {
            throw SchemaError("methods[" + std::to_string(i) + "]", "expected a string");
        }
        const std::string base = "summary." + methods[i].get<std::string>();
        require_numbers(report, base + ".diagonal", tasks);
        require_numbers(report, base + ".last_row", tasks);
        require_numbers(report, base + ".taskwise_maa", tasks);
        for (const char* metric : {"ACC", "MAA", "BWT"}) {
            require_path(report, base + ".metrics." + metric, json::value_t::number_float);
        }
    }
    return tasks;
}

std::string pct(double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100.0 * v;
    return s.str();
}

} // namespace

fs::path cmd_run(const RunOptions& options) {
    ExperimentConfig config = load_config(options.config);
    if (!options.seeds.empty()) {
        config.seeds = options.seeds;
    }
    fs::path out = config.output_dir;
    if (const char* env = std::getenv(kOutputEnv); env && *env) {
        out = env;
    }
    if (options.out) {
        out = *options.out;
    }
    config.output_dir = out.string();
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) {
        throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
    }

    const auto reports = run_seeds(config, out, options.jobs);
    const auto efficiency =
        efficiency_report(config.methods, config, config.training.timing_batches);

    json report = report_json(config, reports);
    // The report must not depend on where it was written.
    report["config"].erase("output_dir");
    write_text(out / "report.json", dump(report));
    write_text(out / "report.csv", report_csv(report));
    write_text(out / "ledger.json", dump(ledger_json(reports)));
    write_text(out / "timing.json", dump({{"training", timing_json(reports)},
                                          {"efficiency", efficiency_json(efficiency)}}));
    write_text(out / "config.json", dump(to_json(config)));
    return out;
}

void cmd_analyze(const fs::path& run_dir) {
    const fs::path root = run_dir / "checkpoints";
    if (!fs::is_directory(root)) {
        throw AnalysisError("no snapshots under " + root.string());
    }
    std::map<std::uint64_t, std::vector<Checkpoint>> by_seed;
    for (const auto& seed_dir : fs::directory_iterator(root)) {
        const std::string name = seed_dir.path().filename().string();
        if (!seed_dir.is_directory() || name.rfind("seed_", 0) != 0) {
            continue;
        }
        const fs::path moe = seed_dir.path() / to_string(Method::moelora);
        if (!fs::is_directory(moe)) {
            continue;
        }
        std::vector<Checkpoint> snaps;
        for (const auto& task_dir : fs::directory_iterator(moe)) {
            snaps.push_back(load_checkpoint(task_dir.path()));
        }
        std::sort(snaps.begin(), snaps.end(),
                  [](const Checkpoint& a, const Checkpoint& b) { return a.task_index < b.task_index; });
        by_seed[std::stoull(name.substr(5))] = std::move(snaps);
    }
    if (by_seed.empty()) {
        throw AnalysisError("no moelora snapshots under " + root.string());
    }

    json seeds = json::array();
    std::vector<double> margins;
    std::vector<double> pooled;
    std::string vectors;
    for (const auto& [seed, snaps] : by_seed) {
        const SimilarityReport sim = expert_similarity(snaps);
        json entry = to_json(sim);
        entry["seed"] = seed;
        entry["snapshots"] = snaps.size();
        seeds.push_back(std::move(entry));
        margins.push_back(sim.margin);
        pooled.push_back(sim.pooled_margin);

        const std::string csv = vectors_csv(flatten_experts(snaps));
        std::istringstream lines(csv);
        std::string line;
        bool header = true;
        while (std::getline(lines, line)) {
            if (header) {
                if (vectors.empty()) {
                    vectors += "seed," + line + "\n";
                }
                header = false;
                continue;
            }
            vectors += std::to_string(seed) + "," + line + "\n";
        }
    }
    const json similarity = {{"seeds", seeds},
                             {"margin", median(margins)},
                             {"pooled_margin", median(pooled)}};

    const json timing = read_json(run_dir / "timing.json");
    if (!timing.contains("efficiency") || !timing["efficiency"].is_array()) {
        throw SchemaError("timing.json: efficiency", "missing field");
    }
    std::vector<EfficiencyRow> rows;
    for (std::size_t i = 0; i < timing["efficiency"].size(); ++i) {
        rows.push_back(efficiency_row_from_json(timing["efficiency"][i],
                                                "timing.json: efficiency[" + std::to_string(i) + "]"));
    }

    write_text(run_dir / "similarity.json", dump(similarity));
    write_text(run_dir / "efficiency.csv", efficiency_csv(rows));
    write_text(run_dir / "vectors.csv", vectors);
}

std::string render_table(const json& report) {
    const std::size_t tasks = check_report_schema(report);
    std::ostringstream out;
    out << std::left << std::setw(12) << "method" << std::setw(6) << "row";
    for (std::size_t t = 0; t < tasks; ++t) {
        out << std::right << std::setw(8) << ("task" + std::to_string(t + 1));
    }
    out << std::setw(8) << "ACC" << std::setw(8) << "MAA" << std::setw(8) << "BWT" << '\n';
    for (const auto& name : report["methods"]) {
        const json& s = report["summary"][name.get<std::string>()];
        for (const char* row : {"diagonal", "last_row"}) {
            const bool first = std::string(row) == "diagonal";
            out << std::left << std::setw(12) << (first ? name.get<std::string>() : "")
                << std::setw(6) << (first ? "A_ii" : "A_Ti") << std::right;
            for (const auto& v : s[row]) {
                out << std::setw(8) << pct(v.get<double>());
            }
            if (first) {
                out << std::setw(8) << pct(s["metrics"]["ACC"].get<double>()) << std::setw(8)
                    << pct(s["metrics"]["MAA"].get<double>()) << std::setw(8)
                    << pct(s["metrics"]["BWT"].get<double>());
            }
            out << '\n';
        }
    }
    return out.str();
}

void cmd_report(const fs::path& report_path, std::ostream& out,
                const std::optional<fs::path>& out_dir) {
    const json report = read_json(report_path);
    const std::string table = render_table(report);

    std::ostringstream csv;
    csv.precision(17);
    csv << "method,task,maa\n";
    for (const auto& name : report["methods"]) {
        const json& curve = report["summary"][name.get<std::string>()]["taskwise_maa"];
        for (std::size_t t = 0; t < curve.size(); ++t) {
            csv << name.get<std::string>() << ',' << t + 1 << ',' << curve[t].get<double>() << '\n';
        }
    }
    fs::path dir = out_dir ? *out_dir : report_path.parent_path();
    if (dir.empty()) {
        dir = ".";
    }
    write_text(dir / "taskwise_maa.csv", csv.str());
    out << table;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Continual adapter experiments on synthetic task streams", "branchlora"};
    app.require_subcommand(1);

    RunOptions run;
    auto* run_cmd = app.add_subcommand("run", "train every method over the configured stream");
    run_cmd->add_option("--config", run.config, "experiment config (JSON)")->required();
    run_cmd->add_option("--seed", run.seeds, "seed to run; repeat for several");
    run_cmd->add_option("--jobs", run.jobs, "seeds run in parallel")->check(CLI::PositiveNumber);
    std::string out;
    run_cmd->add_option("--out", out, "output directory");

    fs::path analyze_dir;
    auto* analyze_cmd = app.add_subcommand("analyze", "similarity and efficiency reports");
    analyze_cmd->add_option("run_dir", analyze_dir, "directory written by `run`")->required();

    fs::path report_file;
    std::string report_out;
    auto* report_cmd = app.add_subcommand("report", "print the results table");
    report_cmd->add_option("report", report_file, "report.json written by `run`")->required();
    report_cmd->add_option("--out", report_out, "directory for taskwise_maa.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error[usage]: " << e.what() << '\n';
        return 2;
    }

    try {
        if (*run_cmd) {
            if (!out.empty()) {
                run.out = out;
            }
            const fs::path dir = cmd_run(run);
            std::cout << "wrote " << dir.string() << '\n';
        } else if (*analyze_cmd) {
            cmd_analyze(analyze_dir);
            std::cout << "wrote " << (analyze_dir / "similarity.json").string() << '\n';
        } else if (*report_cmd) {
            cmd_report(report_file, std::cout,
                       report_out.empty() ? std::nullopt : std::optional<fs::path>(report_out));
        }
    } catch (const ConfigError& e) {
        std::cerr << "error[" << e.kind() << "]: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error[" << e.kind() << "]: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

} // namespace blora
