// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchlora/analysis.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "branchlora/errors.hpp"
#include "branchlora/harness.hpp"
#include "branchlora/optimizer.hpp"

namespace blora {

namespace {

double norm(const std::vector<double>& v) { return l2_norm(v); }

std::vector<const std::vector<double>*> usable(std::span<const std::vector<double>> vectors) {
    std::vector<const std::vector<double>*> out;
    for (const auto& v : vectors) {
        if (norm(v) > 0.0) {
            out.push_back(&v);
        }
    }
    return out;
}

} // namespace

double mean_pairwise_cosine(std::span<const std::vector<double>> vectors) {
    const auto vs = usable(vectors);
    if (vs.size() < 2) {
        throw AnalysisError("need at least two nonzero vectors to compare, got " +
                            std::to_string(vs.size()));
    }
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < vs.size(); ++i) {
        for (std::size_t j = i + 1; j < vs.size(); ++j) {
            if (vs[i]->size() != vs[j]->size()) {
                throw AnalysisError("cannot compare vectors of length " +
                                    std::to_string(vs[i]->size()) + " and " +
                                    std::to_string(vs[j]->size()));
            }
            total += cosine_similarity(*vs[i], *vs[j]);
            ++pairs;
        }
    }
    return total / static_cast<double>(pairs);
}

std::vector<FlatFactor> flatten_experts(std::span<const Checkpoint> snapshots) {
    std::vector<FlatFactor> out;
    for (const auto& cp : snapshots) {
        if (cp.method != Method::moelora) {
            throw AnalysisError("expert similarity needs moelora snapshots, got " +
                                to_string(cp.method));
        }
        for (std::size_t l = 0; l < cp.spec.layers; ++l) {
            for (std::size_t e = 0; e < cp.spec.hp.experts; ++e) {
                const std::string base = "layer" + std::to_string(l) + ".expert" + std::to_string(e);
                for (char factor : {'A', 'B'}) {
                    const Matrix& m = cp.matrix(base + "." + factor).value;
                    out.push_back({l, e, cp.task_index, factor, {m.data().begin(), m.data().end()}});
                }
            }
        }
    }
    return out;
}

SimilarityReport expert_similarity(std::span<const Checkpoint> snapshots) {
    if (snapshots.empty()) {
        throw AnalysisError("no snapshots to analyze");
    }
    const ModelSpec& spec = snapshots.front().spec;
    if (spec.hp.experts < 2) {
        throw AnalysisError("expert similarity needs at least two experts");
    }
    const auto factors = flatten_experts(snapshots);

    SimilarityReport report;
    std::vector<std::vector<double>> pooled_a;
    std::vector<std::vector<double>> pooled_b;
    for (std::size_t l = 0; l < spec.layers; ++l) {
        std::vector<std::vector<double>> as;
        std::vector<std::vector<double>> bs;
        for (const auto& f : factors) {
            if (f.layer == l) {
                (f.factor == 'A' ? as : bs).push_back(f.values);
            }
        }
        LayerSimilarity s;
        s.layer = l;
        s.mean_a = mean_pairwise_cosine(as);
        s.mean_b = mean_pairwise_cosine(bs);
        s.margin = s.mean_a - s.mean_b;
        s.vectors_a = usable(as).size();
        s.vectors_b = usable(bs).size();
        report.layers.push_back(s);
        report.margin += s.margin / static_cast<double>(spec.layers);
        pooled_a.insert(pooled_a.end(), as.begin(), as.end());
        pooled_b.insert(pooled_b.end(), bs.begin(), bs.end());
    }
    // Layers of different widths flatten to different lengths and cannot be
    // pooled; the per-layer figures stand alone then.
    const auto same_length = [](const std::vector<std::vector<double>>& vs) {
        return std::all_of(vs.begin(), vs.end(),
                           [&](const auto& v) { return v.size() == vs.front().size(); });
    };
    if (same_length(pooled_a) && same_length(pooled_b)) {
        report.pooled_a = mean_pairwise_cosine(pooled_a);
        report.pooled_b = mean_pairwise_cosine(pooled_b);
    } else {
        report.pooled_a = report.pooled_b = 0.0;
        for (const auto& s : report.layers) {
            report.pooled_a += s.mean_a / static_cast<double>(report.layers.size());
            report.pooled_b += s.mean_b / static_cast<double>(report.layers.size());
        }
    }
    report.pooled_margin = report.pooled_a - report.pooled_b;
    return report;
}

nlohmann::json to_json(const SimilarityReport& r) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& s : r.layers) {
        layers.push_back({{"layer", s.layer},
                          {"mean_sim_A", s.mean_a},
                          {"mean_sim_B", s.mean_b},
                          {"margin", s.margin},
                          {"vectors_A", s.vectors_a},
                          {"vectors_B", s.vectors_b}});
    }
    return {{"layers", layers},
            {"pooled", {{"mean_sim_A", r.pooled_a}, {"mean_sim_B", r.pooled_b}, {"margin", r.pooled_margin}}},
            {"margin", r.margin}};
}

std::string vectors_csv(std::span<const FlatFactor> factors) {
    std::ostringstream out;
    out.precision(17);
    std::size_t width = 0;
    for (const auto& f : factors) {
        width = std::max(width, f.values.size());
    }
    out << "layer,factor,expert,task";
    for (std::size_t i = 0; i < width; ++i) {
        out << ",v" << i;
    }
    out << '\n';
    for (const auto& f : factors) {
        out << f.layer << ',' << f.factor << ',' << f.expert << ',' << f.task;
        for (double v : f.values) {
            out << ',' << v;
        }
        out << '\n';
    }
    return out.str();
}

std::vector<EfficiencyRow> efficiency_report(std::span<const Method> methods,
                                             const ExperimentConfig& config, std::size_t batches) {
    if (batches == 0) {
        throw ParameterError("efficiency_report needs at least one batch");
    }
    const std::uint64_t seed = config.seeds.empty() ? 0 : config.seeds.front();
    StreamSpec stream_spec = config.stream;
    stream_spec.tasks = 1;
    const TaskStream stream = generate_stream(stream_spec, seed);
    const TaskData& data = stream.tasks.front().train;
    const std::size_t bs = std::min(config.training.batch_size, data.size());

    struct Slot {
        ContinualModel model;
        Optimizer optimizer;
        std::vector<double> ms;
    };
    std::vector<Slot> slots;
    std::vector<EfficiencyRow> rows;
    for (Method m : methods) {
        Rng rng(mix_seed(seed, 0xeff1));
        Slot slot{ContinualModel::create(m, config.model, seed), Optimizer(config.training.optimizer), {}};
        slot.model.begin_task(rng);
        EfficiencyRow row;
        row.method = m;
        row.trainable_params = slot.model.count_trainable_params();
        row.batches = batches;
        if (slot.model.uses_task_routers()) {
            const auto& k = slot.model.keys().at(0);
            row.key_params = k.image.value.size() + k.text.value.size();
        }
        rows.push_back(row);
        slots.push_back(std::move(slot));
    }

    // One untimed step per method: warms caches and counts updated scalars.
    const std::size_t warmup = 1;
    for (std::size_t b = 0; b < batches + warmup; ++b) {
        const std::size_t begin = (b * bs) % (data.size() - bs + 1);
        const Matrix x = slice_rows(data.inputs, begin, bs);
        const std::span<const std::size_t> y(data.labels.data() + begin, bs);
        const std::vector<std::size_t> routes(bs, 0);
        for (std::size_t i = 0; i < slots.size(); ++i) {
            Slot& s = slots[i];
            auto params = s.model.trainable_parameters(0);
            const auto start = std::chrono::steady_clock::now();
            Tape tape;
            Var loss = tape.cross_entropy(s.model.logits(tape, x, routes), y);
            if (s.model.uses_task_routers()) {
                Var a = alignment_loss(tape, EmbeddingBatch::from_inputs(x), s.model.keys().at(0));
                loss = total_loss(tape, loss, a, config.model.hp.lambda);
            }
            if (!params.empty()) {
                tape.backward(loss);
            }
            const double ms = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - start)
                                  .count();
            if (b < warmup) {
                rows[i].optimizer_scalars = params.empty() ? 0 : s.optimizer.step(params);
            } else {
                s.ms.push_back(ms);
                for (Parameter* p : params) {
                    p->clear_grad();
                }
            }
        }
    }

    for (std::size_t i = 0; i < slots.size(); ++i) {
        const auto& ms = slots[i].ms;
        double mean = 0.0;
        for (double v : ms) {
            mean += v;
        }
        mean /= static_cast<double>(ms.size());
        double var = 0.0;
        for (double v : ms) {
            var += (v - mean) * (v - mean);
        }
        rows[i].mean_ms = mean;
        rows[i].std_ms = ms.size() > 1 ? std::sqrt(var / static_cast<double>(ms.size() - 1)) : 0.0;
    }
    return rows;
}

std::string efficiency_csv(std::span<const EfficiencyRow> rows) {
    std::ostringstream out;
    out.precision(10);
    out << "method,trainable_params,optimizer_scalars,key_params,batches,mean_ms,std_ms\n";
    for (const auto& r : rows) {
        out << to_string(r.method) << ',' << r.trainable_params << ',' << r.optimizer_scalars << ','
            << r.key_params << ',' << r.batches << ',' << r.mean_ms << ',' << r.std_ms << '\n';
    }
    return out.str();
}

} // namespace blora
