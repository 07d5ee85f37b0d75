// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchlora/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <map>

#include "branchlora/errors.hpp"

namespace blora {

namespace fs = std::filesystem;

class CheckpointAccess {
public:
    static void set_tasks_started(ContinualModel& model, std::size_t n) { model.tasks_started_ = n; }
};

const CheckpointMatrix& Checkpoint::matrix(const std::string& name) const {
    for (const auto& m : matrices) {
        if (m.name == name) {
            return m;
        }
    }
    throw IoError("checkpoint has no matrix '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
    for (const auto& m : matrices) {
        if (m.name == name) {
            return true;
        }
    }
    return false;
}

nlohmann::json to_json(const ModelSpec& spec) {
    return {{"input_dim", spec.input_dim},
            {"hidden_dim", spec.hidden_dim},
            {"classes", spec.classes},
            {"layers", spec.layers},
            {"rank", spec.hp.rank},
            {"alpha", spec.hp.alpha},
            {"experts", spec.hp.experts},
            {"top_k", spec.hp.top_k},
            {"lambda", spec.hp.lambda}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
    ModelSpec spec;
    spec.input_dim = j.at("input_dim").get<std::size_t>();
    spec.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    spec.classes = j.at("classes").get<std::size_t>();
    spec.layers = j.at("layers").get<std::size_t>();
    spec.hp.rank = j.at("rank").get<std::size_t>();
    spec.hp.alpha = j.at("alpha").get<double>();
    spec.hp.experts = j.at("experts").get<std::size_t>();
    spec.hp.top_k = j.at("top_k").get<std::size_t>();
    spec.hp.lambda = j.at("lambda").get<double>();
    return spec;
}

Checkpoint make_checkpoint(const ContinualModel& model, std::size_t task_index) {
    Checkpoint cp;
    cp.method = model.method();
    cp.task_index = task_index;
    cp.tasks_started = model.tasks_started();
    cp.spec = model.spec();
    for (const auto& layer : model.adapters()) {
        if (const auto* branch = std::get_if<BranchLoRALayer>(&layer)) {
            cp.freeze_masks.push_back(branch->freeze_mask());
        }
    }
    for (const Parameter* p : model.all_parameters()) {
        cp.matrices.push_back({p->name, p->value, p->frozen});
    }
    return cp;
}

ContinualModel restore_model(const Checkpoint& checkpoint) {
    ContinualModel model = ContinualModel::create(checkpoint.method, checkpoint.spec, 0);
    Rng unused(0);
    for (std::size_t t = 0; t < checkpoint.tasks_started; ++t) {
        model.begin_task(unused);
    }
    CheckpointAccess::set_tasks_started(model, checkpoint.tasks_started);

    std::map<std::string, const CheckpointMatrix*> by_name;
    for (const auto& m : checkpoint.matrices) {
        by_name[m.name] = &m;
    }
    for (const Parameter* cp : model.all_parameters()) {
        // all_parameters() exposes the model's own storage; the model is
        // non-const here.
        auto* p = const_cast<Parameter*>(cp);
        auto it = by_name.find(p->name);
        if (it == by_name.end()) {
            throw IoError("checkpoint is missing matrix '" + p->name + "'");
        }
        if (!it->second->value.same_shape(p->value)) {
            throw IoError("checkpoint matrix '" + p->name + "' has shape " +
                          it->second->value.shape_string() + ", expected " +
                          p->value.shape_string());
        }
        p->value = it->second->value;
        p->frozen = it->second->frozen;
        by_name.erase(it);
    }
    if (!by_name.empty()) {
        throw IoError("checkpoint has unexpected matrix '" + by_name.begin()->first + "'");
    }
    return model;
}

void write_f64(const fs::path& file, const Matrix& m) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + file.string() + " for writing");
    }
    std::vector<char> bytes;
    bytes.reserve(m.size() * 8);
    for (double v : m.data()) {
        const auto word = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) {
            bytes.push_back(static_cast<char>((word >> (8 * b)) & 0xffu));
        }
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("failed writing " + file.string());
    }
}

Matrix read_f64(const fs::path& file, std::size_t rows, std::size_t cols) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + file.string());
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() != rows * cols * 8) {
        throw IoError(file.string() + " holds " + std::to_string(bytes.size()) +
                      " bytes, expected " + std::to_string(rows * cols * 8));
    }
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) {
        std::uint64_t word = 0;
        for (int b = 0; b < 8; ++b) {
            word |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b])) << (8 * b);
        }
        m.data()[i] = std::bit_cast<double>(word);
    }
    return m;
}

void save_checkpoint(const Checkpoint& checkpoint, const fs::path& dir) {
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = kCheckpointFormat;
    manifest["method"] = to_string(checkpoint.method);
    manifest["task_index"] = checkpoint.task_index;
    manifest["tasks_started"] = checkpoint.tasks_started;
    manifest["spec"] = to_json(checkpoint.spec);
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& mask : checkpoint.freeze_masks) {
        std::vector<std::size_t> routers(checkpoint.tasks_started);
        for (std::size_t t = 0; t < routers.size(); ++t) {
            routers[t] = t;
        }
        layers.push_back({{"freeze_mask", mask}, {"router_tasks", routers}});
    }
    manifest["layers"] = layers;
    std::vector<std::size_t> key_tasks;
    if (checkpoint.method == Method::branchlora) {
        for (std::size_t t = 0; t < checkpoint.tasks_started; ++t) {
            key_tasks.push_back(t);
        }
    }
    manifest["key_tasks"] = key_tasks;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& m : checkpoint.matrices) {
        const std::string file = m.name + ".f64";
        write_f64(dir / file, m.value);
        entries.push_back({{"name", m.name},
                           {"rows", m.value.rows()},
                           {"cols", m.value.cols()},
                           {"frozen", m.frozen},
                           {"file", file}});
    }
    manifest["matrices"] = entries;
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) {
        throw IoError("cannot write manifest in " + dir.string());
    }
    out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) {
        throw IoError("no manifest.json in " + dir.string());
    }
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad manifest in " + dir.string() + ": " + e.what());
    }
    try {
        if (manifest.at("format").get<std::string>() != kCheckpointFormat) {
            throw IoError("unsupported checkpoint format in " + dir.string());
        }
        Checkpoint cp;
        cp.method = method_from_string(manifest.at("method").get<std::string>());
        cp.task_index = manifest.at("task_index").get<std::size_t>();
        cp.tasks_started = manifest.at("tasks_started").get<std::size_t>();
        cp.spec = model_spec_from_json(manifest.at("spec"));
        for (const auto& layer : manifest.at("layers")) {
            cp.freeze_masks.push_back(layer.at("freeze_mask").get<std::vector<bool>>());
        }
        for (const auto& e : manifest.at("matrices")) {
            const auto rows = e.at("rows").get<std::size_t>();
            const auto cols = e.at("cols").get<std::size_t>();
            cp.matrices.push_back({e.at("name").get<std::string>(),
                                   read_f64(dir / e.at("file").get<std::string>(), rows, cols),
                                   e.at("frozen").get<bool>()});
        }
        return cp;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
    }
}

} // namespace blora
