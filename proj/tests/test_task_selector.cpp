// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "branchlora/errors.hpp"
#include "branchlora/optimizer.hpp"
#include "branchlora/task_selector.hpp"
#include "gradcheck.hpp"

using namespace blora;
using namespace blora::testing;

namespace {

TaskKeys make_keys(std::size_t task, const Matrix& img, const Matrix& txt) {
    return {task, Parameter("k" + std::to_string(task) + ".img", img),
            Parameter("k" + std::to_string(task) + ".txt", txt)};
}

std::vector<SampleEmbeddings> random_samples(std::size_t n, std::size_t d, std::mt19937_64& rng) {
    std::vector<SampleEmbeddings> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back({random_matrix(1, d, rng), random_matrix(1, d, rng)});
    }
    return out;
}

/// Direct per-sample sum of (1 - cos) over both views.
double oracle_alignment(const std::vector<SampleEmbeddings>& batch, const Matrix& ki, const Matrix& kt) {
    auto cosine = [](const Matrix& a, const Matrix& b) {
        double ab = 0.0, aa = 0.0, bb = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            ab += a.data()[i] * b.data()[i];
            aa += a.data()[i] * a.data()[i];
            bb += b.data()[i] * b.data()[i];
        }
        return ab / std::sqrt(aa * bb);
    };
    double total = 0.0;
    for (const auto& s : batch) {
        total += (1.0 - cosine(s.image, ki)) + (1.0 - cosine(s.text, kt));
    }
    return total;
}

} // namespace

TEST_CASE("input rows split into image and text halves") {
    const std::vector<double> row{1, 2, 3, 4, 5, 6};
    const auto e = SampleEmbeddings::from_input(row);
    CHECK(e.image == Matrix::from_rows({{1, 2, 3}}));
    CHECK(e.text == Matrix::from_rows({{4, 5, 6}}));
    const auto batch = EmbeddingBatch::from_inputs(Matrix::from_rows({{1, 2, 3, 4}, {5, 6, 7, 8}}));
    CHECK(batch.image == Matrix::from_rows({{1, 2}, {5, 6}}));
    CHECK(batch.text == Matrix::from_rows({{3, 4}, {7, 8}}));
}

TEST_CASE("alignment loss examples") {
    std::mt19937_64 rng(3);
    const auto samples = random_samples(1, 4, rng);
    const TaskKeys same = make_keys(0, samples[0].image, samples[0].text);
    CHECK(alignment_loss(samples, same) == doctest::Approx(0.0).epsilon(1e-15));

    const std::vector<SampleEmbeddings> one{{Matrix::from_rows({{1, 0}}), Matrix::from_rows({{0, 3}})}};
    const TaskKeys ortho = make_keys(0, Matrix::from_rows({{0, 2}}), Matrix::from_rows({{5, 0}}));
    CHECK(alignment_loss(one, ortho) == doctest::Approx(2.0));
}

TEST_CASE("alignment loss matches an independent loop on random batches") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const auto batch = random_samples(9, 5, rng);
        TaskKeys keys = make_keys(0, random_matrix(1, 5, rng), random_matrix(1, 5, rng));
        const double oracle = oracle_alignment(batch, keys.image.value, keys.text.value);
        CHECK(alignment_loss(batch, keys) == doctest::Approx(oracle).epsilon(1e-9));

        Tape tape;
        const Var v = alignment_loss(tape, EmbeddingBatch::from_samples(batch), keys);
        CHECK(tape.value(v)(0, 0) == doctest::Approx(oracle).epsilon(1e-9));
        CHECK(tape.value(v)(0, 0) >= 0.0);
    }
}

TEST_CASE("total loss") {
    CHECK(total_loss(0.5, 0.25, 1.0) == 0.75);
    CHECK(total_loss(0.5, 0.25, 0.0) == 0.5);
}

TEST_CASE("key gradient of the total loss is lambda times the alignment gradient") {
    std::mt19937_64 rng(9);
    const auto batch = EmbeddingBatch::from_samples(random_samples(6, 4, rng));
    TaskKeys keys = make_keys(0, random_matrix(1, 4, rng), random_matrix(1, 4, rng));
    Parameter* params[] = {&keys.image, &keys.text};
    const double lambda = 0.7;

    CHECK(check_gradients(params, [&](Tape& t) {
              const Var task = t.constant(Matrix(1, 1, 1.3));
              return total_loss(t, task, alignment_loss(t, batch, keys), lambda);
          }).max_rel_error <= 1e-4);

    Tape t1;
    t1.backward(alignment_loss(t1, batch, keys));
    const Matrix g_align = keys.image.grad;
    Tape t2;
    t2.backward(total_loss(t2, t2.constant(Matrix(1, 1, 0.0)), alignment_loss(t2, batch, keys), lambda));
    for (std::size_t i = 0; i < g_align.size(); ++i) {
        CHECK(keys.image.grad.data()[i] == doctest::Approx(lambda * g_align.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("key-only gradient steps do not increase the alignment loss") {
    std::mt19937_64 rng(12);
    const auto samples = random_samples(16, 4, rng);
    const auto batch = EmbeddingBatch::from_samples(samples);
    TaskKeys keys = make_keys(0, random_matrix(1, 4, rng), random_matrix(1, 4, rng));
    Optimizer opt({OptimizerKind::sgd, 0.01});
    Parameter* params[] = {&keys.image, &keys.text};
    double prev = alignment_loss(samples, keys);
    for (int step = 0; step < 50; ++step) {
        Tape tape;
        tape.backward(alignment_loss(tape, batch, keys));
        opt.step(params);
        const double now = alignment_loss(samples, keys);
        CHECK(now <= prev + 1e-12);
        prev = now;
    }
}

TEST_CASE("zero-norm embeddings are degenerate") {
    const std::vector<SampleEmbeddings> bad{{Matrix(1, 2), Matrix::from_rows({{1, 0}})}};
    const TaskKeys keys = make_keys(0, Matrix::from_rows({{1, 0}}), Matrix::from_rows({{1, 0}}));
    CHECK_THROWS_AS(alignment_loss(bad, keys), DegenerateInputError);
}

TEST_CASE("task selection") {
    std::mt19937_64 rng(4);
    const SampleEmbeddings s{random_matrix(1, 3, rng), random_matrix(1, 3, rng)};
    std::vector<TaskKeys> one;
    one.push_back(make_keys(0, random_matrix(1, 3, rng), random_matrix(1, 3, rng)));
    CHECK(select_task(s, one) == 0);
    CHECK_THROWS_AS(select_task(s, std::span<const TaskKeys>{}), SelectorError);

    // Sample equal to task 2's keys; other keys orthogonal to it.
    const SampleEmbeddings e{Matrix::from_rows({{1, 0, 0}}), Matrix::from_rows({{0, 1, 0}})};
    std::vector<TaskKeys> keys;
    keys.push_back(make_keys(0, Matrix::from_rows({{0, 1, 0}}), Matrix::from_rows({{1, 0, 0}})));
    keys.push_back(make_keys(1, Matrix::from_rows({{0, 0, 1}}), Matrix::from_rows({{0, 0, 1}})));
    keys.push_back(make_keys(2, e.image, e.text));
    CHECK(select_task(e, keys) == 2);

    // Positive rescaling of the sample or a key leaves the choice alone.
    const SampleEmbeddings scaled{scale(e.image, 7.5), scale(e.text, 0.01)};
    CHECK(select_task(scaled, keys) == 2);
    keys[2].image.value = scale(keys[2].image.value, 40.0);
    CHECK(select_task(e, keys) == 2);

    // Exact ties go to the lowest task index.
    std::vector<TaskKeys> twins;
    twins.push_back(make_keys(0, e.image, e.text));
    twins.push_back(make_keys(1, e.image, e.text));
    CHECK(select_task(e, twins) == 0);
}

TEST_CASE("trained keys on orthogonal clusters select perfectly; random keys sit near chance") {
    std::mt19937_64 rng(31);
    const std::size_t d = 8, tasks = 4, per_task = 200;
    std::vector<SampleEmbeddings> samples;
    std::vector<std::size_t> truth;
    std::vector<std::vector<SampleEmbeddings>> by_task(tasks);
    for (std::size_t t = 0; t < tasks; ++t) {
        for (std::size_t i = 0; i < per_task; ++i) {
            Matrix img = random_matrix(1, d, rng, 0.3);
            Matrix txt = random_matrix(1, d, rng, 0.3);
            img(0, t) += 3.0;
            txt(0, d - 1 - t) += 3.0;
            by_task[t].push_back({img, txt});
            samples.push_back({img, txt});
            truth.push_back(t);
        }
    }
    TaskKeyStore store(d);
    Rng key_rng(5);
    for (std::size_t t = 0; t < tasks; ++t) {
        store.add_task(key_rng);
    }
    // Untrained keys: average over many random draws approaches 1/T.
    double chance = 0.0;
    for (int rep = 0; rep < 40; ++rep) {
        TaskKeyStore fresh(d);
        Rng r(100 + rep);
        for (std::size_t t = 0; t < tasks; ++t) {
            fresh.add_task(r);
        }
        chance += selector_accuracy(samples, truth, fresh.keys()) / 40.0;
    }
    CHECK(chance == doctest::Approx(0.25).epsilon(0.4));

    for (std::size_t t = 0; t < tasks; ++t) {
        Optimizer opt({OptimizerKind::adam, 0.05});
        TaskKeys& k = store.at(t);
        k.image.frozen = k.text.frozen = false;
        Parameter* params[] = {&k.image, &k.text};
        const auto batch = EmbeddingBatch::from_samples(by_task[t]);
        for (int step = 0; step < 200; ++step) {
            Tape tape;
            tape.backward(alignment_loss(tape, batch, k));
            opt.step(params);
        }
    }
    CHECK(selector_accuracy(samples, truth, store.keys()) == 1.0);

    TaskKeyStore single(d);
    Rng r1(1);
    single.add_task(r1);
    const std::vector<std::size_t> zeros(samples.size(), 0);
    CHECK(selector_accuracy(samples, zeros, single.keys()) == 1.0);
}

TEST_CASE("adding a task freezes earlier keys") {
    TaskKeyStore store(3);
    Rng rng(2);
    store.add_task(rng);
    CHECK_FALSE(store.at(0).image.frozen);
    store.add_task(rng);
    CHECK(store.at(0).image.frozen);
    CHECK(store.at(0).text.frozen);
    CHECK_FALSE(store.at(1).image.frozen);
    CHECK(store.size() == 2);
}
