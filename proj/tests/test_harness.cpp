// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "branchlora/errors.hpp"
#include "branchlora/harness.hpp"
#include "branchlora/task_selector.hpp"
#include "fixtures.hpp"

using namespace blora;
using blora::testing::small_config;

namespace {

EvalMatrix matrix_from(const std::vector<std::vector<double>>& rows) {
    EvalMatrix m(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t k = 0; k < rows[i].size(); ++k) {
            m.set(i, k, rows[i][k]);
        }
    }
    return m;
}

} // namespace

TEST_CASE("metric examples") {
    const Metrics m = compute_metrics(matrix_from({{0.8}, {0.6, 0.9}}));
    CHECK(m.acc == doctest::Approx(0.75));
    CHECK(m.maa == doctest::Approx(0.775));
    CHECK(m.bwt == doctest::Approx(-0.1));

    const Metrics flat = compute_metrics(matrix_from({{0.5}, {0.5, 0.5}, {0.5, 0.5, 0.5}}));
    CHECK(flat.acc == doctest::Approx(0.5));
    CHECK(flat.maa == doctest::Approx(0.5));
    CHECK(flat.bwt == doctest::Approx(0.0));

    const Metrics one = compute_metrics(matrix_from({{0.7}}));
    CHECK(one.acc == doctest::Approx(0.7));
    CHECK(one.bwt == 0.0);

    // Every off-diagonal entry below its diagonal.
    const Metrics fading = compute_metrics(matrix_from({{0.9}, {0.7, 0.9}, {0.5, 0.7, 0.9}}));
    CHECK(fading.bwt < 0.0);
}

TEST_CASE("incomplete matrices are rejected") {
    EvalMatrix m(2);
    m.set(0, 0, 0.5);
    m.set(1, 0, 0.5);
    CHECK_FALSE(m.complete());
    CHECK_THROWS_AS(compute_metrics(m), ContractError);
    CHECK_THROWS_AS(m.set(0, 1, 0.5), DimensionError);
}

TEST_CASE("evaluation matrices round-trip through JSON") {
    const EvalMatrix m = matrix_from({{0.25}, {0.5, 0.75}});
    CHECK(EvalMatrix::from_json(m.to_json()) == m);
    CHECK(taskwise_maa(m) == std::vector<double>{0.25, 0.625});
}

TEST_CASE("streams are deterministic in the seed") {
    const StreamSpec spec = small_config().stream;
    const TaskStream a = generate_stream(spec, 11);
    const TaskStream b = generate_stream(spec, 11);
    const TaskStream c = generate_stream(spec, 12);
    CHECK(a.fingerprint() == b.fingerprint());
    CHECK(a.fingerprint() != c.fingerprint());
    CHECK(a.fingerprint().size() == 16);
    CHECK(a.tasks[1].train.inputs == b.tasks[1].train.inputs);

    StreamSpec repeated = spec;
    repeated.repeat_first_task = true;
    const TaskStream r = generate_stream(repeated, 11);
    CHECK(r.tasks[2].train.inputs == r.tasks[0].train.inputs);
    CHECK(r.tasks[2].test.labels == r.tasks[0].test.labels);
}

TEST_CASE("training lowers the task loss and beats an untrained model") {
    const ExperimentConfig config = small_config();
    const TaskStream stream = generate_stream(config.stream, 3);
    for (Method m : {Method::lora, Method::moelora, Method::branchlora}) {
        CAPTURE(to_string(m));
        ContinualModel model = ContinualModel::create(m, config.model, 3);
        Rng rng(1);
        model.begin_task(rng);
        const double before = evaluate(model, stream.tasks[0].test, 0, Selector::oracle);
        const auto r = train_task(model, stream.tasks[0].train, 0, config, 5);
        CHECK(r.final_loss < r.initial_loss);
        CHECK(r.steps == config.training.epochs * 12);
        CHECK(evaluate(model, stream.tasks[0].test, 0, Selector::oracle) > before);
    }
}

TEST_CASE("untrained models sit near chance") {
    ExperimentConfig config = small_config();
    config.stream.tasks = 8;
    const TaskStream stream = generate_stream(config.stream, 5);
    const ContinualModel model = ContinualModel::create(Method::lora, config.model, 5);
    double mean = 0.0;
    for (std::size_t t = 0; t < stream.size(); ++t) {
        mean += evaluate(model, stream.tasks[t].test, 0, Selector::oracle) / 8.0;
    }
    const double chance = 1.0 / static_cast<double>(config.model.classes);
    CHECK(mean == doctest::Approx(chance).epsilon(0.5));
}

TEST_CASE("with lambda = 0 the keys never move") {
    ExperimentConfig config = small_config();
    config.model.hp.lambda = 0.0;
    const TaskStream stream = generate_stream(config.stream, 2);
    ContinualModel model = ContinualModel::create(Method::branchlora, config.model, 2);
    Rng rng(9);
    model.begin_task(rng);
    const Matrix img = model.keys().at(0).image.value;
    const Matrix txt = model.keys().at(0).text.value;
    train_task(model, stream.tasks[0].train, 0, config, 4);
    CHECK(model.keys().at(0).image.value == img);
    CHECK(model.keys().at(0).text.value == txt);
}

TEST_CASE("a single task gives zero forgetting and ACC equal to the diagonal") {
    ExperimentConfig config = small_config();
    config.stream.tasks = 1;
    config.methods = {Method::lora, Method::branchlora};
    const SeedReport report = run_experiment(config, 1);
    for (const auto& r : report.methods) {
        CHECK(r.metrics.bwt == 0.0);
        CHECK(r.metrics.acc == r.matrix.at(0, 0));
    }
}

TEST_CASE("sequential run: freezing, immutability, selector and forgetting") {
    const ExperimentConfig config = small_config();
    const SeedReport report = run_experiment(config, 1);
    CHECK(report.fingerprint == generate_stream(config.stream, 1).fingerprint());
    CHECK(report.methods.size() == config.methods.size());

    const MethodResult& b = report.method(Method::branchlora);
    const std::size_t expected =
        std::min(config.model.hp.experts, config.stream.tasks * config.effective_freeze_width());
    REQUIRE(b.ledgers.size() == config.model.layers);
    for (const auto& ledger : b.ledgers) {
        CHECK(ledger.total_frozen() == expected);
        CHECK(ledger.records().size() == config.stream.tasks);
    }
    CHECK(b.immutability_checks > 0);
    REQUIRE(b.oracle_metrics.has_value());
    REQUIRE(b.selector_accuracy.has_value());
    CHECK(*b.selector_accuracy >= 0.9);
    CHECK(b.oracle_metrics->acc >= b.metrics.acc - 0.02);

    const MethodResult& lora = report.method(Method::lora);
    CHECK(lora.metrics.bwt < 0.0);

    for (Method m : {Method::zero_shot, Method::multitask}) {
        CHECK(report.method(m).metrics.bwt == 0.0);
    }
    CHECK(report.method(Method::multitask).metrics.acc > report.method(Method::zero_shot).metrics.acc);
}

TEST_CASE("repeating the first task produces no forgetting") {
    ExperimentConfig config = small_config();
    config.stream.repeat_first_task = true;
    config.methods = {Method::lora, Method::branchlora};
    const SeedReport report = run_experiment(config, 4);
    for (const auto& r : report.methods) {
        CAPTURE(to_string(r.method));
        CHECK(std::abs(r.metrics.bwt) <= 0.02);
    }
}

TEST_CASE("frozen branches preserve an earlier task's restricted output") {
    const ExperimentConfig config = small_config();
    const TaskStream stream = generate_stream(config.stream, 6);
    ContinualModel model = ContinualModel::create(Method::branchlora, config.model, 6);
    Rng rng(6);
    model.begin_task(rng);
    const auto r0 = train_task(model, stream.tasks[0].train, 0, config, 1);
    REQUIRE(r0.freezes.size() == 1);
    const std::vector<std::size_t> frozen = r0.freezes[0].frozen;
    REQUIRE_FALSE(frozen.empty());

    auto& layer = std::get<BranchLoRALayer>(model.adapters()[0]);
    const std::size_t k = config.model.hp.top_k;
    const Matrix probe = slice_rows(stream.tasks[0].test.inputs, 0, 32);

    // x A sum_{j frozen} g_j B_j, computed from the raw matrices.
    auto restricted = [&] {
        const Matrix gate = row_softmax(topk_mask(matmul(probe, layer.router(0).value), k));
        const Matrix xa = matmul(probe, layer.shared_a().value);
        Matrix out(probe.rows(), layer.dims().d_out);
        for (std::size_t j : frozen) {
            const Matrix branch = matmul(xa, layer.branches()[j].value);
            for (std::size_t r = 0; r < out.rows(); ++r) {
                for (std::size_t c = 0; c < out.cols(); ++c) {
                    out(r, c) += gate(r, j) * branch(r, c);
                }
            }
        }
        return out;
    };
    const Matrix before = restricted();
    const Matrix a_before = layer.shared_a().value;

    model.begin_task(rng);
    train_task(model, stream.tasks[1].train, 1, config, 2);
    const Matrix a_after = layer.shared_a().value;
    CHECK(a_after != a_before);

    layer.shared_a().value = a_before;
    CHECK(restricted() == before);
    layer.shared_a().value = a_after;
}
