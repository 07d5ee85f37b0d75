// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "branchlora/adapters.hpp"
#include "branchlora/errors.hpp"
#include "gradcheck.hpp"

using namespace blora;
using namespace blora::testing;

namespace {

AdapterHyperparams small_hp() { return {8, 16.0, 4, 2, 1.0}; }

std::size_t enumerate_scalars(const std::vector<Parameter*>& params) {
    std::size_t n = 0;
    for (const Parameter* p : params) {
        n += p->value.size();
    }
    return n;
}

Matrix run(AdapterLayer& layer, const Matrix& x) {
    Tape tape;
    const Var in = tape.constant(x);
    if (auto* l = std::get_if<LoRALayer>(&layer)) {
        return tape.value(l->forward(tape, in).h);
    }
    if (auto* m = std::get_if<MoELoRALayer>(&layer)) {
        return tape.value(m->forward(tape, in).h);
    }
    auto& b = std::get<BranchLoRALayer>(layer);
    b.add_task_router();
    return tape.value(b.forward(tape, in, 0).h);
}

} // namespace

TEST_CASE("default adapter hyperparameters: rank 128 over 8 experts") {
    const AdapterHyperparams hp;
    CHECK(hp.rank == 128);
    CHECK(hp.per_expert_rank() == 16);
    CHECK(hp.scaling() == 2.0);
}

TEST_CASE("hyperparameter validation") {
    CHECK_THROWS_AS((AdapterHyperparams{10, 1.0, 4, 2, 1.0}.validate()), ParameterError);
    CHECK_THROWS_AS((AdapterHyperparams{8, 1.0, 4, 5, 1.0}.validate()), ParameterError);
    CHECK_THROWS_AS((AdapterHyperparams{8, 1.0, 4, 0, 1.0}.validate()), ParameterError);
    CHECK_THROWS_AS((AdapterHyperparams{8, 1.0, 4, 2, -1.0}.validate()), ParameterError);
    CHECK_NOTHROW(small_hp().validate());
}

TEST_CASE("fresh adapters of every kind reproduce the backbone exactly") {
    std::mt19937_64 rng(5);
    const LayerDims dims{6, 5};
    const Matrix w = random_matrix(6, 5, rng);
    const Matrix x = random_matrix(3, 6, rng);
    for (AdapterKind kind : {AdapterKind::lora, AdapterKind::moelora, AdapterKind::branchlora}) {
        CAPTURE(to_string(kind));
        AdapterLayer layer = init_adapter(kind, dims, small_hp(), 9, w);
        CHECK(run(layer, x) == matmul(x, w));
    }
}

TEST_CASE("same seed gives bit-identical initial parameters") {
    const LayerDims dims{6, 5};
    for (AdapterKind kind : {AdapterKind::lora, AdapterKind::moelora, AdapterKind::branchlora}) {
        const auto a = init_adapter(kind, dims, small_hp(), 42);
        const auto b = init_adapter(kind, dims, small_hp(), 42);
        if (kind == AdapterKind::lora) {
            CHECK(std::get<LoRALayer>(a).a().value == std::get<LoRALayer>(b).a().value);
        } else if (kind == AdapterKind::moelora) {
            CHECK(std::get<MoELoRALayer>(a).experts()[3].a.value ==
                  std::get<MoELoRALayer>(b).experts()[3].a.value);
        } else {
            CHECK(std::get<BranchLoRALayer>(a).shared_a().value ==
                  std::get<BranchLoRALayer>(b).shared_a().value);
        }
    }
}

TEST_CASE("trainable parameter counts match enumeration and the closed forms") {
    for (std::size_t d_in : {4, 16, 33}) {
        for (std::size_t d_out : {4, 10}) {
            for (AdapterHyperparams hp : {AdapterHyperparams{8, 16, 4, 2, 1}, AdapterHyperparams{12, 3, 3, 1, 1},
                                          AdapterHyperparams{16, 32, 8, 2, 1}}) {
                const LayerDims dims{d_in, d_out};
                const std::size_t r = hp.rank, n = hp.experts, q = hp.per_expert_rank();
                auto lora = std::get<LoRALayer>(init_adapter(AdapterKind::lora, dims, hp, 1));
                auto moe = std::get<MoELoRALayer>(init_adapter(AdapterKind::moelora, dims, hp, 1));
                auto branch = std::get<BranchLoRALayer>(init_adapter(AdapterKind::branchlora, dims, hp, 1));
                branch.add_task_router();

                CHECK(lora.count_trainable_params() == d_in * r + r * d_out);
                CHECK(lora.count_trainable_params() == enumerate_scalars(lora.trainable_parameters()));
                CHECK(moe.count_trainable_params() == n * (d_in * q + q * d_out) + d_in * n);
                CHECK(moe.count_trainable_params() == enumerate_scalars(moe.trainable_parameters()));
                CHECK(branch.count_trainable_params() == d_in * q + n * q * d_out + d_in * n);
                CHECK(branch.count_trainable_params() == enumerate_scalars(branch.trainable_parameters(0)));
                CHECK(branch.count_trainable_params() < moe.count_trainable_params());

                const std::size_t frozen[] = {0};
                branch.freeze_branches(frozen);
                branch.add_task_router();
                CHECK(branch.count_trainable_params() == d_in * q + (n - 1) * q * d_out + d_in * n);
                CHECK(branch.count_trainable_params() == enumerate_scalars(branch.trainable_parameters(1)));
            }
        }
    }
}

TEST_CASE("large shapes order the counts branch < moe < dense") {
    const LayerDims dims{512, 1376};
    const AdapterHyperparams hp;
    const auto moe = init_adapter(AdapterKind::moelora, dims, hp, 1);
    auto branch = std::get<BranchLoRALayer>(init_adapter(AdapterKind::branchlora, dims, hp, 1));
    branch.add_task_router();
    CHECK(branch.count_trainable_params() < count_trainable_params(moe));
    CHECK(count_trainable_params(moe) < dense_param_count(dims));
}

TEST_CASE("shared-product forward equals the per-branch reference") {
    std::mt19937_64 rng(8);
    auto layer = std::get<BranchLoRALayer>(init_adapter(AdapterKind::branchlora, {7, 5}, small_hp(), 3));
    for (auto& b : layer.branches()) {
        b.value = random_matrix(b.value.rows(), b.value.cols(), rng);
    }
    layer.add_task_router();
    layer.add_task_router();
    const Matrix x = random_matrix(4, 7, rng);
    for (std::size_t task : {0, 1}) {
        for (Routing routing : {Routing::first_token, Routing::per_row}) {
            Tape tape;
            const Matrix fast = tape.value(layer.forward(tape, tape.constant(x), task, routing).h);
            const Matrix ref = layer.forward_reference(x, task, routing);
            for (std::size_t i = 0; i < fast.size(); ++i) {
                CHECK(fast.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("branch gates carry exactly k nonzeros") {
    std::mt19937_64 rng(2);
    auto layer = std::get<BranchLoRALayer>(init_adapter(AdapterKind::branchlora, {6, 6}, small_hp(), 3));
    layer.add_task_router();
    Tape tape;
    const auto out = layer.forward(tape, tape.constant(random_matrix(20, 6, rng)), 0, Routing::per_row);
    const Matrix& g = tape.value(*out.gate);
    for (std::size_t r = 0; r < g.rows(); ++r) {
        std::size_t nonzero = 0;
        double total = 0.0;
        for (double v : g.row(r)) {
            nonzero += v != 0.0 ? 1 : 0;
            total += v;
        }
        CHECK(nonzero == 2);
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("adapter layers pass finite-difference gradient checks") {
    std::mt19937_64 rng(21);
    const LayerDims dims{5, 4};
    const Matrix x = random_matrix(3, 5, rng);
    const Matrix target = random_matrix(3, 4, rng);

    auto lora = std::get<LoRALayer>(init_adapter(AdapterKind::lora, dims, small_hp(), 1));
    lora.b().value = random_matrix(8, 4, rng);
    CHECK(check_gradients(lora.trainable_parameters(), [&](Tape& t) {
              return t.mse(lora.forward(t, t.constant(x)).h, target);
          }).max_rel_error <= 1e-4);

    auto moe = std::get<MoELoRALayer>(init_adapter(AdapterKind::moelora, dims, small_hp(), 1));
    for (auto& e : moe.experts()) {
        e.b.value = random_matrix(e.b.value.rows(), e.b.value.cols(), rng);
    }
    moe.router().value = random_matrix(5, 4, rng);
    CHECK(check_gradients(moe.trainable_parameters(), [&](Tape& t) {
              return t.mse(moe.forward(t, t.constant(x), Routing::per_row).h, target);
          }).max_rel_error <= 1e-4);

    auto branch = std::get<BranchLoRALayer>(init_adapter(AdapterKind::branchlora, dims, small_hp(), 1));
    for (auto& b : branch.branches()) {
        b.value = random_matrix(b.value.rows(), b.value.cols(), rng);
    }
    branch.add_task_router();
    CHECK(check_gradients(branch.trainable_parameters(0), [&](Tape& t) {
              return t.mse(branch.forward(t, t.constant(x), 0, Routing::per_row).h, target);
          }).max_rel_error <= 1e-4);
}

TEST_CASE("frozen branches receive no gradient") {
    std::mt19937_64 rng(4);
    auto layer = std::get<BranchLoRALayer>(init_adapter(AdapterKind::branchlora, {4, 4}, {8, 16.0, 4, 4, 1.0}, 3));
    for (auto& b : layer.branches()) {
        b.value = random_matrix(b.value.rows(), b.value.cols(), rng);
    }
    const std::size_t frozen[] = {1, 2};
    layer.freeze_branches(frozen);
    layer.add_task_router();
    Tape tape;
    const Var h = layer.forward(tape, tape.constant(random_matrix(3, 4, rng)), 0).h;
    tape.backward(tape.sum(h));
    CHECK_FALSE(layer.branches()[1].has_grad);
    CHECK_FALSE(layer.branches()[2].has_grad);
    CHECK(layer.branches()[0].has_grad);
    CHECK(layer.freeze_mask() == std::vector<bool>{false, true, true, false});
    CHECK(layer.frozen_count() == 2);
}

TEST_CASE("router bookkeeping") {
    auto layer = std::get<BranchLoRALayer>(init_adapter(AdapterKind::branchlora, {4, 4}, small_hp(), 3));
    CHECK_THROWS_AS((void)layer.router(0), RoutingError);
    CHECK(layer.add_task_router() == 0);
    CHECK_FALSE(layer.router(0).frozen);
    CHECK(layer.add_task_router() == 1);
    CHECK(layer.router(0).frozen);
    CHECK_FALSE(layer.router(1).frozen);
    CHECK(layer.task_count() == 2);

    const std::size_t once[] = {3};
    layer.freeze_branches(once);
    CHECK_THROWS_AS(layer.freeze_branches(once), PolicyError);
    const std::size_t bad[] = {4};
    CHECK_THROWS_AS(layer.freeze_branches(bad), ParameterError);
}

TEST_CASE("dimension mismatches are rejected") {
    auto lora = std::get<LoRALayer>(init_adapter(AdapterKind::lora, {4, 3}, small_hp(), 1));
    Tape tape;
    CHECK_THROWS_AS(lora.forward(tape, tape.constant(Matrix(2, 5))), DimensionError);
    CHECK_THROWS_AS(init_adapter(AdapterKind::lora, {4, 3}, small_hp(), 1, Matrix(3, 3)), DimensionError);
}
