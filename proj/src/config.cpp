// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchlora/config.hpp"

#include <fstream>
#include <set>

#include "branchlora/errors.hpp"

namespace blora {

namespace {

using nlohmann::json;

/// Reads fields out of one JSON object, remembering which keys were used so
/// leftovers can be reported as unknown.
class ObjectReader {
public:
    ObjectReader(const json& object, std::string path) : object_(object), path_(std::move(path)) {
        if (!object_.is_object()) {
            throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
        }
    }

    std::string field_path(const std::string& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = object_.find(key);
        return it == object_.end() ? nullptr : &*it;
    }

    void read(const std::string& key, std::size_t& out, std::size_t min = 0) {
        if (const json* v = find(key)) {
            if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
                throw ConfigError(field_path(key), "expected a non-negative integer");
            }
            out = v->get<std::size_t>();
            if (out < min) {
                throw ConfigError(field_path(key), "must be >= " + std::to_string(min));
            }
        }
    }

    void read(const std::string& key, double& out) {
        if (const json* v = find(key)) {
            if (!v->is_number()) {
                throw ConfigError(field_path(key), "expected a number");
            }
            out = v->get<double>();
        }
    }

    void read(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) {
                throw ConfigError(field_path(key), "expected a boolean");
            }
            out = v->get<bool>();
        }
    }

    void read(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) {
                throw ConfigError(field_path(key), "expected a string");
            }
            out = v->get<std::string>();
        }
    }

    void finish() const {
        for (const auto& [key, value] : object_.items()) {
            if (!seen_.contains(key)) {
                throw ConfigError(field_path(key), "unknown field");
            }
        }
    }

private:
    const json& object_;
    std::string path_;
    std::set<std::string> seen_;
};

void require(bool ok, const std::string& path, const std::string& message) {
    if (!ok) {
        throw ConfigError(path, message);
    }
}

} // namespace

void ExperimentConfig::validate() const {
    require(stream.tasks >= 1, "stream.tasks", "must be >= 1");
    require(stream.classes >= 2, "stream.classes", "must be >= 2");
    require(stream.train_samples >= stream.classes, "stream.train_samples",
            "must be >= stream.classes");
    require(stream.test_samples >= stream.classes, "stream.test_samples",
            "must be >= stream.classes");
    require(stream.input_dim >= 2 && stream.input_dim % 2 == 0, "stream.input_dim",
            "must be even and >= 2");
    require(stream.center_scale > 0.0, "stream.center_scale", "must be positive");
    require(stream.noise_scale > 0.0, "stream.noise_scale", "must be positive");
    require(!seeds.empty(), "stream.seeds", "must list at least one seed");
    require(model.input_dim == stream.input_dim, "stream.input_dim", "must match model input");
    require(model.classes == stream.classes, "stream.classes", "must match model classes");

    const auto& hp = model.hp;
    require(hp.experts >= 1, "adapter.experts", "must be >= 1");
    require(hp.rank >= 1 && hp.rank % hp.experts == 0, "adapter.rank",
            "must be divisible by adapter.experts");
    require(hp.top_k >= 1 && hp.top_k <= hp.experts, "adapter.top_k",
            "must lie in [1, adapter.experts]");
    require(hp.alpha > 0.0, "adapter.alpha", "must be positive");
    require(hp.lambda >= 0.0, "adapter.lambda", "must be non-negative");
    require(model.layers >= 1, "adapter.layers", "must be >= 1");
    require(model.hidden_dim >= 1, "adapter.hidden_dim", "must be >= 1");
    if (freeze_width) {
        require(*freeze_width <= hp.experts, "adapter.freeze_width",
                "must not exceed adapter.experts");
    }

    require(training.epochs >= 1, "training.epochs", "must be >= 1");
    require(training.batch_size >= 1, "training.batch_size", "must be >= 1");
    require(training.optimizer.learning_rate > 0.0, "training.learning_rate", "must be positive");
    require(training.optimizer.beta1 >= 0.0 && training.optimizer.beta1 < 1.0, "training.beta1",
            "must lie in [0, 1)");
    require(training.optimizer.beta2 >= 0.0 && training.optimizer.beta2 < 1.0, "training.beta2",
            "must lie in [0, 1)");
    require(training.optimizer.epsilon > 0.0, "training.epsilon", "must be positive");
    require(!methods.empty(), "methods", "must list at least one method");
    require(!output_dir.empty(), "output_dir", "must not be empty");
}

ExperimentConfig default_config() { return ExperimentConfig{}; }

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig cfg = default_config();
    ObjectReader root(j, "");

    if (const json* s = root.find("stream")) {
        ObjectReader r(*s, "stream");
        r.read("tasks", cfg.stream.tasks);
        r.read("train_samples", cfg.stream.train_samples);
        r.read("test_samples", cfg.stream.test_samples);
        r.read("input_dim", cfg.stream.input_dim);
        r.read("classes", cfg.stream.classes);
        r.read("center_scale", cfg.stream.center_scale);
        r.read("noise_scale", cfg.stream.noise_scale);
        r.read("repeat_first_task", cfg.stream.repeat_first_task);
        if (const json* seeds = r.find("seeds")) {
            if (!seeds->is_array()) {
                throw ConfigError("stream.seeds", "expected an array of integers");
            }
            cfg.seeds.clear();
            for (std::size_t i = 0; i < seeds->size(); ++i) {
                const json& v = (*seeds)[i];
                if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
                    throw ConfigError("stream.seeds[" + std::to_string(i) + "]",
                                      "expected a non-negative integer");
                }
                cfg.seeds.push_back(v.get<std::uint64_t>());
            }
        }
        r.finish();
    }

    if (const json* a = root.find("adapter")) {
        ObjectReader r(*a, "adapter");
        r.read("rank", cfg.model.hp.rank);
        r.read("alpha", cfg.model.hp.alpha);
        r.read("experts", cfg.model.hp.experts);
        r.read("top_k", cfg.model.hp.top_k);
        r.read("lambda", cfg.model.hp.lambda);
        r.read("layers", cfg.model.layers);
        r.read("hidden_dim", cfg.model.hidden_dim);
        if (r.find("freeze_width") != nullptr) {
            std::size_t width = 0;
            r.read("freeze_width", width);
            cfg.freeze_width = width;
        }
        std::string policy = to_string(cfg.freeze_policy);
        r.read("freeze_policy", policy);
        try {
            cfg.freeze_policy = freeze_policy_from_string(policy);
        } catch (const ParameterError& e) {
            throw ConfigError("adapter.freeze_policy", e.what());
        }
        r.finish();
    }

    if (const json* t = root.find("training")) {
        ObjectReader r(*t, "training");
        r.read("epochs", cfg.training.epochs);
        r.read("batch_size", cfg.training.batch_size);
        r.read("learning_rate", cfg.training.optimizer.learning_rate);
        r.read("beta1", cfg.training.optimizer.beta1);
        r.read("beta2", cfg.training.optimizer.beta2);
        r.read("epsilon", cfg.training.optimizer.epsilon);
        r.read("timing_batches", cfg.training.timing_batches);
        std::string kind = cfg.training.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd";
        r.read("optimizer", kind);
        if (kind == "adam") {
            cfg.training.optimizer.kind = OptimizerKind::adam;
        } else if (kind == "sgd") {
            cfg.training.optimizer.kind = OptimizerKind::sgd;
        } else {
            throw ConfigError("training.optimizer", "expected \"adam\" or \"sgd\"");
        }
        r.finish();
    }

    if (const json* m = root.find("methods")) {
        if (!m->is_array()) {
            throw ConfigError("methods", "expected an array of method names");
        }
        cfg.methods.clear();
        for (std::size_t i = 0; i < m->size(); ++i) {
            const std::string path = "methods[" + std::to_string(i) + "]";
            if (!(*m)[i].is_string()) {
                throw ConfigError(path, "expected a string");
            }
            try {
                cfg.methods.push_back(method_from_string((*m)[i].get<std::string>()));
            } catch (const ParameterError& e) {
                throw ConfigError(path, e.what());
            }
        }
    }

    root.read("output_dir", cfg.output_dir);
    root.finish();

    cfg.model.input_dim = cfg.stream.input_dim;
    cfg.model.classes = cfg.stream.classes;
    cfg.validate();
    return cfg;
}

json to_json(const ExperimentConfig& c) {
    json methods = json::array();
    for (Method m : c.methods) {
        methods.push_back(to_string(m));
    }
    return {
        {"stream",
         {{"tasks", c.stream.tasks},
          {"train_samples", c.stream.train_samples},
          {"test_samples", c.stream.test_samples},
          {"input_dim", c.stream.input_dim},
          {"classes", c.stream.classes},
          {"center_scale", c.stream.center_scale},
          {"noise_scale", c.stream.noise_scale},
          {"repeat_first_task", c.stream.repeat_first_task},
          {"seeds", c.seeds}}},
        {"adapter",
         {{"rank", c.model.hp.rank},
          {"alpha", c.model.hp.alpha},
          {"experts", c.model.hp.experts},
          {"top_k", c.model.hp.top_k},
          {"lambda", c.model.hp.lambda},
          {"freeze_width", c.effective_freeze_width()},
          {"freeze_policy", to_string(c.freeze_policy)},
          {"layers", c.model.layers},
          {"hidden_dim", c.model.hidden_dim}}},
        {"training",
         {{"epochs", c.training.epochs},
          {"batch_size", c.training.batch_size},
          {"optimizer", c.training.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd"},
          {"learning_rate", c.training.optimizer.learning_rate},
          {"beta1", c.training.optimizer.beta1},
          {"beta2", c.training.optimizer.beta2},
          {"epsilon", c.training.optimizer.epsilon},
          {"timing_batches", c.training.timing_batches}}},
        {"methods", methods},
        {"output_dir", c.output_dir},
    };
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read config " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("", "malformed JSON in " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

} // namespace blora
