// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchlora/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "branchlora/errors.hpp"
#include "branchlora/optimizer.hpp"
#include "branchlora/task_selector.hpp"

namespace blora {

namespace {

constexpr std::size_t kEvalChunk = 256;

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
    Matrix out(rows.size(), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto src = m.row(rows[r]);
        std::copy(src.begin(), src.end(), out.data().begin() + r * m.cols());
    }
    return out;
}

std::vector<std::size_t> predictions(const ContinualModel& model, const Matrix& inputs,
                                     std::span<const std::size_t> routes) {
    std::vector<std::size_t> out;
    out.reserve(inputs.rows());
    for (std::size_t begin = 0; begin < inputs.rows(); begin += kEvalChunk) {
        const std::size_t n = std::min(kEvalChunk, inputs.rows() - begin);
        const Matrix logits =
            model.logits(slice_rows(inputs, begin, n), routes.subspan(begin, n));
        for (std::size_t r = 0; r < n; ++r) {
            out.push_back(argmax(logits.row(r)));
        }
    }
    return out;
}

/// One minibatch epoch loop shared by sequential and joint training.
struct Batches {
    const Matrix& inputs;
    std::span<const std::size_t> labels;
    std::span<const std::size_t> routes;
};

TaskTrainResult optimize(ContinualModel& model, const Batches& data, std::size_t task_index,
                         const ExperimentConfig& config, std::uint64_t seed) {
    TaskTrainResult result;
    const std::size_t n = data.inputs.rows();
    Optimizer optimizer(config.training.optimizer);
    std::vector<Parameter*> params = model.trainable_parameters(task_index);
    const bool align = model.uses_task_routers();
    const double lambda = config.model.hp.lambda;

    Rng rng(seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    double elapsed_ms = 0.0;
    Tape tape;
    for (std::size_t epoch = 0; epoch < config.training.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t begin = 0; begin < n; begin += config.training.batch_size) {
            const std::size_t count = std::min(config.training.batch_size, n - begin);
            const std::span<const std::size_t> idx(order.data() + begin, count);
            const Matrix x = gather_rows(data.inputs, idx);
            std::vector<std::size_t> y(count);
            std::vector<std::size_t> routes(count);
            for (std::size_t r = 0; r < count; ++r) {
                y[r] = data.labels[idx[r]];
                routes[r] = data.routes[idx[r]];
            }

            const auto start = std::chrono::steady_clock::now();
            tape.clear();
            Var loss = tape.cross_entropy(model.logits(tape, x, routes), y);
            if (align) {
                const EmbeddingBatch emb = EmbeddingBatch::from_inputs(x);
                Var a = alignment_loss(tape, emb, model.keys().at(task_index));
                loss = total_loss(tape, loss, a, lambda);
            }
            tape.backward(loss);
            optimizer.step(params);
            elapsed_ms += std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - start)
                              .count();
            ++result.steps;
        }
    }
    result.ms_per_batch = result.steps ? elapsed_ms / static_cast<double>(result.steps) : 0.0;
    return result;
}

/// Gate usage of every BranchLoRA layer over the task's training inputs.
std::vector<UsageStats> collect_usage(const ContinualModel& model, const TaskData& data,
                                      std::size_t task_index) {
    const auto& hp = model.spec().hp;
    std::vector<UsageStats> stats(model.adapters().size(), UsageStats(hp.experts, hp.top_k));
    const std::vector<std::size_t> routes(data.size(), task_index);
    for (std::size_t begin = 0; begin < data.size(); begin += kEvalChunk) {
        const std::size_t n = std::min(kEvalChunk, data.size() - begin);
        Tape tape;
        std::vector<Matrix> gates;
        model.logits(tape, slice_rows(data.inputs, begin, n),
                     std::span(routes).subspan(begin, n), &gates);
        for (std::size_t l = 0; l < gates.size(); ++l) {
            stats[l].record_gate(gates[l]);
        }
    }
    return stats;
}

struct FrozenSnapshot {
    std::vector<std::pair<std::string, Matrix>> values;
};

/// Every matrix that must stay bit-identical while the next task trains:
/// frozen branches, earlier routers and earlier keys.
FrozenSnapshot snapshot_frozen(const ContinualModel& model, std::size_t task_index) {
    FrozenSnapshot snap;
    for (const auto& layer : model.adapters()) {
        const auto* branch = std::get_if<BranchLoRALayer>(&layer);
        if (!branch) {
            continue;
        }
        for (const auto& b : branch->branches()) {
            if (b.frozen) {
                snap.values.emplace_back(b.name, b.value);
            }
        }
        for (std::size_t t = 0; t < task_index; ++t) {
            snap.values.emplace_back(branch->router(t).name, branch->router(t).value);
        }
    }
    for (std::size_t t = 0; t < task_index && t < model.keys().size(); ++t) {
        const auto& k = model.keys().at(t);
        snap.values.emplace_back(k.image.name, k.image.value);
        snap.values.emplace_back(k.text.name, k.text.value);
    }
    return snap;
}

bool bit_identical(const Matrix& a, const Matrix& b) {
    return a.same_shape(b) &&
           std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(double)) == 0;
}

std::size_t verify_frozen(const ContinualModel& model, const FrozenSnapshot& snap,
                          std::size_t task_index) {
    std::map<std::string, const Parameter*> current;
    for (const Parameter* p : model.all_parameters()) {
        current[p->name] = p;
    }
    for (const auto& [name, value] : snap.values) {
        auto it = current.find(name);
        if (it == current.end() || !bit_identical(it->second->value, value)) {
            throw ContractError("frozen parameter '" + name + "' changed while training task " +
                                std::to_string(task_index));
        }
    }
    return snap.values.size();
}

std::uint64_t method_salt(Method m) { return 0x7a11 + static_cast<std::uint64_t>(m); }

} // namespace

double task_loss(const ContinualModel& model, const TaskData& data, std::size_t task) {
    const std::vector<std::size_t> routes(data.size(), task);
    double total = 0.0;
    for (std::size_t begin = 0; begin < data.size(); begin += kEvalChunk) {
        const std::size_t n = std::min(kEvalChunk, data.size() - begin);
        Tape tape;
        Var logits =
            model.logits(tape, slice_rows(data.inputs, begin, n), std::span(routes).subspan(begin, n));
        Var ce = tape.cross_entropy(
            logits, std::span<const std::size_t>(data.labels).subspan(begin, n));
        total += tape.value(ce)(0, 0) * static_cast<double>(n);
    }
    return total / static_cast<double>(data.size());
}

TaskTrainResult train_task(ContinualModel& model, const TaskData& data, std::size_t task_index,
                           const ExperimentConfig& config, std::uint64_t seed) {
    if (model.uses_task_routers() && task_index + 1 != model.tasks_started()) {
        throw ContractError("train_task: task " + std::to_string(task_index) +
                            " is not the newest registered task");
    }
    const double before = task_loss(model, data, task_index);
    const std::vector<std::size_t> routes(data.size(), task_index);
    TaskTrainResult result =
        optimize(model, Batches{data.inputs, data.labels, routes}, task_index, config, seed);
    result.initial_loss = before;
    result.final_loss = task_loss(model, data, task_index);

    if (model.uses_task_routers()) {
        const auto usage = collect_usage(model, data, task_index);
        for (std::size_t l = 0; l < usage.size(); ++l) {
            auto& layer = std::get<BranchLoRALayer>(model.adapters()[l]);
            FreezeRecord record;
            record.task = task_index;
            record.frozen = select_freeze_set(usage[l], config.effective_freeze_width(),
                                              layer.freeze_mask(), config.freeze_policy);
            record.normalized_mass = usage[l].normalized_mass();
            record.selection_counts = usage[l].counts();
            apply_freeze(layer, record.frozen);
            result.freezes.push_back(std::move(record));
        }
    }
    return result;
}

TaskTrainResult train_joint(ContinualModel& model, std::span<const SyntheticTask> tasks,
                            const ExperimentConfig& config, std::uint64_t seed) {
    if (tasks.empty()) {
        throw ParameterError("train_joint needs at least one task");
    }
    std::vector<Matrix> parts;
    std::vector<std::size_t> labels;
    for (const auto& t : tasks) {
        parts.push_back(t.train.inputs);
        labels.insert(labels.end(), t.train.labels.begin(), t.train.labels.end());
    }
    const TaskData joint{vstack(parts), labels};
    const std::vector<std::size_t> routes(joint.size(), 0);
    const double before = task_loss(model, joint, 0);
    TaskTrainResult result = optimize(model, Batches{joint.inputs, joint.labels, routes}, 0, config, seed);
    result.initial_loss = before;
    result.final_loss = task_loss(model, joint, 0);
    return result;
}

std::vector<std::size_t> select_tasks(const ContinualModel& model, const Matrix& inputs) {
    const auto keys = model.keys().keys();
    std::vector<std::size_t> out(inputs.rows());
    for (std::size_t r = 0; r < inputs.rows(); ++r) {
        out[r] = select_task(SampleEmbeddings::from_input(inputs.row(r)), keys);
    }
    return out;
}

double evaluate(const ContinualModel& model, const TaskData& data, std::size_t task_index,
                Selector selector) {
    if (data.size() == 0) {
        return 0.0;
    }
    std::vector<std::size_t> routes(data.size(), task_index);
    if (model.uses_task_routers() && selector == Selector::automatic) {
        routes = select_tasks(model, data.inputs);
    }
    const auto pred = predictions(model, data.inputs, routes);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < pred.size(); ++r) {
        correct += pred[r] == data.labels[r] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

const MethodResult& SeedReport::method(Method m) const {
    for (const auto& r : methods) {
        if (r.method == m) {
            return r;
        }
    }
    throw ContractError("seed report has no entry for method " + to_string(m));
}

namespace {

MethodResult run_method(Method method, const TaskStream& stream, const ExperimentConfig& config,
                        std::uint64_t seed, const RunHooks& hooks) {
    const std::size_t T = stream.size();
    MethodResult res;
    res.method = method;
    res.fingerprint = stream.fingerprint();
    res.matrix = EvalMatrix(T);
    const bool routed = method == Method::branchlora;
    if (routed) {
        res.oracle_matrix = EvalMatrix(T);
        res.ledgers.resize(config.model.layers);
    }

    ContinualModel model = ContinualModel::create(method, config.model, seed);
    Rng key_rng(mix_seed(seed, 0x6e75));
    const std::uint64_t train_seed = mix_seed(seed, method_salt(method));
    double ms_total = 0.0;

    auto fill_static_rows = [&](const ContinualModel& m) {
        std::vector<double> acc(T);
        for (std::size_t k = 0; k < T; ++k) {
            acc[k] = evaluate(m, stream.tasks[k].test, k, Selector::oracle);
        }
        for (std::size_t i = 0; i < T; ++i) {
            for (std::size_t k = 0; k <= i; ++k) {
                res.matrix.set(i, k, acc[k]);
            }
        }
    };

    if (method == Method::zero_shot) {
        fill_static_rows(model);
        if (hooks.on_task_end) {
            hooks.on_task_end(method, T - 1, model);
        }
    } else if (method == Method::multitask) {
        model.begin_task(key_rng);
        const auto r = train_joint(model, stream.tasks, config, train_seed);
        res.initial_loss.push_back(r.initial_loss);
        res.final_loss.push_back(r.final_loss);
        res.steps = r.steps;
        ms_total = r.ms_per_batch * static_cast<double>(r.steps);
        fill_static_rows(model);
        if (hooks.on_task_end) {
            hooks.on_task_end(method, T - 1, model);
        }
    } else {
        for (std::size_t i = 0; i < T; ++i) {
            const std::size_t task = model.begin_task(key_rng);
            const FrozenSnapshot snap = snapshot_frozen(model, task);
            const auto r = train_task(model, stream.tasks[i].train, task,
                                      config, mix_seed(train_seed, i));
            res.immutability_checks += verify_frozen(model, snap, task);
            res.initial_loss.push_back(r.initial_loss);
            res.final_loss.push_back(r.final_loss);
            res.steps += r.steps;
            ms_total += r.ms_per_batch * static_cast<double>(r.steps);
            for (std::size_t l = 0; l < r.freezes.size(); ++l) {
                res.ledgers[l].append(r.freezes[l]);
            }
            for (std::size_t k = 0; k <= i; ++k) {
                const auto& test = stream.tasks[k].test;
                res.matrix.set(i, k, evaluate(model, test, k, Selector::automatic));
                if (routed) {
                    res.oracle_matrix->set(i, k, evaluate(model, test, k, Selector::oracle));
                }
            }
            if (hooks.on_task_end) {
                hooks.on_task_end(method, i, model);
            }
        }
    }

    res.metrics = compute_metrics(res.matrix);
    if (routed) {
        res.oracle_metrics = compute_metrics(*res.oracle_matrix);
        std::vector<SampleEmbeddings> samples;
        std::vector<std::size_t> truth;
        for (std::size_t k = 0; k < T; ++k) {
            const auto& test = stream.tasks[k].test;
            for (std::size_t r = 0; r < test.size(); ++r) {
                samples.push_back(SampleEmbeddings::from_input(test.inputs.row(r)));
                truth.push_back(k);
            }
        }
        res.selector_accuracy = selector_accuracy(samples, truth, model.keys().keys());
    }
    res.trainable_params = model.count_trainable_params();
    res.ms_per_batch = res.steps ? ms_total / static_cast<double>(res.steps) : 0.0;
    return res;
}

nlohmann::json matrix_rows(const EvalMatrix& m) { return m.to_json(); }

std::vector<double> column_medians(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) {
        return {};
    }
    std::vector<double> out(rows.front().size());
    for (std::size_t c = 0; c < out.size(); ++c) {
        std::vector<double> col;
        for (const auto& r : rows) {
            col.push_back(r.at(c));
        }
        out[c] = median(std::move(col));
    }
    return out;
}

} // namespace

SeedReport run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                          const RunHooks& hooks) {
    config.validate();
    const TaskStream stream = generate_stream(config.stream, seed);
    SeedReport report;
    report.seed = seed;
    report.fingerprint = stream.fingerprint();
    for (Method m : config.methods) {
        report.methods.push_back(run_method(m, stream, config, seed, hooks));
        if (report.methods.back().fingerprint != report.fingerprint) {
            throw ContractError("stream fingerprint differs between methods");
        }
    }
    return report;
}

double median(std::vector<double> values) {
    if (values.empty()) {
        throw ContractError("median of an empty sample");
    }
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

nlohmann::json seed_report_json(const SeedReport& report) {
    nlohmann::json methods = nlohmann::json::object();
    for (const auto& r : report.methods) {
        nlohmann::json j = {
            {"matrix", matrix_rows(r.matrix)},
            {"metrics", to_json(r.metrics)},
            {"trainable_params", r.trainable_params},
            {"initial_loss", r.initial_loss},
            {"final_loss", r.final_loss},
            {"immutability_checks", r.immutability_checks},
        };
        if (r.oracle_matrix) {
            j["oracle_matrix"] = matrix_rows(*r.oracle_matrix);
            j["oracle_metrics"] = to_json(*r.oracle_metrics);
        }
        if (r.selector_accuracy) {
            j["selector_accuracy"] = *r.selector_accuracy;
        }
        methods[to_string(r.method)] = std::move(j);
    }
    return {{"seed", report.seed}, {"fingerprint", report.fingerprint}, {"methods", methods}};
}

nlohmann::json report_json(const ExperimentConfig& config, std::span<const SeedReport> seeds) {
    if (seeds.empty()) {
        throw ContractError("report needs at least one seed");
    }
    nlohmann::json names = nlohmann::json::array();
    nlohmann::json summary = nlohmann::json::object();
    for (const auto& first : seeds.front().methods) {
        const Method m = first.method;
        names.push_back(to_string(m));
        std::vector<std::vector<double>> diag, last, maa;
        std::vector<double> acc, avg, bwt;
        for (const auto& s : seeds) {
            const auto& r = s.method(m);
            diag.push_back(r.matrix.diagonal());
            last.push_back(r.matrix.last_row());
            maa.push_back(taskwise_maa(r.matrix));
            acc.push_back(r.metrics.acc);
            avg.push_back(r.metrics.maa);
            bwt.push_back(r.metrics.bwt);
        }
        summary[to_string(m)] = {
            {"diagonal", column_medians(diag)},
            {"last_row", column_medians(last)},
            {"taskwise_maa", column_medians(maa)},
            {"metrics", {{"ACC", median(acc)}, {"MAA", median(avg)}, {"BWT", median(bwt)}}},
            {"trainable_params", first.trainable_params},
        };
    }
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& s : seeds) {
        per_seed.push_back(seed_report_json(s));
    }
    return {
        {"format", "branchlora-report/1"},
        {"config", to_json(config)},
        {"tasks", config.stream.tasks},
        {"methods", names},
        {"summary", summary},
        {"seeds", per_seed},
    };
}

nlohmann::json ledger_json(std::span<const SeedReport> seeds) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& s : seeds) {
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& r : s.methods) {
            if (r.method != Method::branchlora) {
                continue;
            }
            for (std::size_t l = 0; l < r.ledgers.size(); ++l) {
                layers.push_back({{"layer", l}, {"records", r.ledgers[l].to_json()}});
            }
        }
        out.push_back({{"seed", s.seed}, {"method", "branchlora"}, {"layers", layers}});
    }
    return out;
}

nlohmann::json timing_json(std::span<const SeedReport> seeds) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& s : seeds) {
        nlohmann::json methods = nlohmann::json::object();
        for (const auto& r : s.methods) {
            methods[to_string(r.method)] = {{"ms_per_batch", r.ms_per_batch}, {"steps", r.steps}};
        }
        out.push_back({{"seed", s.seed}, {"methods", methods}});
    }
    return out;
}

std::string report_csv(const nlohmann::json& report) {
    std::ostringstream out;
    out.precision(17);
    out << "method,metric,median,min,max\n";
    for (const auto& name : report.at("methods")) {
        const std::string m = name.get<std::string>();
        for (const char* metric : {"ACC", "MAA", "BWT"}) {
            std::vector<double> values;
            for (const auto& s : report.at("seeds")) {
                values.push_back(s.at("methods").at(m).at("metrics").at(metric).get<double>());
            }
            out << m << ',' << metric << ',' << median(values) << ','
                << *std::min_element(values.begin(), values.end()) << ','
                << *std::max_element(values.begin(), values.end()) << '\n';
        }
    }
    return out.str();
}

} // namespace blora
