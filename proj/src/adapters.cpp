// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchlora/adapters.hpp"

#include <algorithm>
#include <cmath>

#include "branchlora/errors.hpp"

namespace blora {

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (double& v : m.data()) {
        v = dist(rng);
    }
    return m;
}

void AdapterHyperparams::validate() const {
    if (experts < 1) {
        throw ParameterError("expert count must be >= 1");
    }
    if (rank < 1 || rank % experts != 0) {
        throw ParameterError("rank " + std::to_string(rank) + " is not divisible by expert count " +
                             std::to_string(experts));
    }
    if (top_k < 1 || top_k > experts) {
        throw ParameterError("top_k " + std::to_string(top_k) + " outside [1, " +
                             std::to_string(experts) + "]");
    }
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw ParameterError("alpha must be positive");
    }
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw ParameterError("lambda must be non-negative");
    }
}

std::string to_string(AdapterKind kind) {
    switch (kind) {
    case AdapterKind::lora:
        return "lora";
    case AdapterKind::moelora:
        return "moelora";
    case AdapterKind::branchlora:
        return "branchlora";
    }
    return "unknown";
}

AdapterKind adapter_kind_from_string(const std::string& text) {
    if (text == "lora") {
        return AdapterKind::lora;
    }
    if (text == "moelora") {
        return AdapterKind::moelora;
    }
    if (text == "branchlora") {
        return AdapterKind::branchlora;
    }
    throw ParameterError("unknown adapter kind '" + text + "'");
}

namespace {

void check_backbone(const Matrix& backbone, LayerDims dims) {
    if (backbone.rows() != dims.d_in || backbone.cols() != dims.d_out) {
        throw DimensionError("backbone " + backbone.shape_string() + " does not match dims (" +
                             std::to_string(dims.d_in) + "," + std::to_string(dims.d_out) + ")");
    }
}

void check_input(const Tape& tape, Var x, LayerDims dims) {
    const Matrix& v = tape.value(x);
    if (v.cols() != dims.d_in || v.rows() == 0) {
        throw DimensionError("adapter input " + v.shape_string() + " does not match d_in " +
                             std::to_string(dims.d_in));
    }
}

double init_stddev(LayerDims dims) { return 1.0 / std::sqrt(static_cast<double>(dims.d_in)); }

} // namespace

FrozenBackbone::FrozenBackbone(std::string name, Matrix weight)
    : weight_(std::move(name), std::move(weight), /*frozen=*/true) {}

Var FrozenBackbone::forward(Tape& tape, Var x) const {
    return tape.matmul(x, tape.parameter(weight_));
}

// ---------------------------------------------------------------- LoRA

LoRALayer::LoRALayer(const std::string& prefix, LayerDims dims, AdapterHyperparams hp,
                     Matrix backbone, Rng& rng)
    : dims_(dims), hp_(hp) {
    hp_.validate();
    check_backbone(backbone, dims);
    backbone_ = FrozenBackbone(prefix + ".backbone", std::move(backbone));
    a_ = Parameter(prefix + ".lora.A", gaussian_matrix(dims.d_in, hp.rank, init_stddev(dims), rng));
    b_ = Parameter(prefix + ".lora.B", Matrix(hp.rank, dims.d_out));
}

template <class Self>
LayerOutput LoRALayer::forward_impl(Self& self, Tape& tape, Var x) {
    check_input(tape, x, self.dims_);
    const Var base = self.backbone_.forward(tape, x);
    const Var a = tape.parameter(self.a_);
    const Var b = tape.parameter(self.b_);
    const Var delta = tape.matmul(tape.matmul(x, a), b);
    return {tape.add(base, tape.scale(delta, self.hp_.scaling())), std::nullopt};
}

LayerOutput LoRALayer::forward(Tape& tape, Var x) { return forward_impl(*this, tape, x); }
LayerOutput LoRALayer::forward(Tape& tape, Var x) const { return forward_impl(*this, tape, x); }

Matrix LoRALayer::forward(const Matrix& x) const {
    Tape tape;
    return tape.value(forward(tape, tape.constant(x)).h);
}

std::vector<Parameter*> LoRALayer::trainable_parameters() { return {&a_, &b_}; }

std::size_t LoRALayer::count_trainable_params() const { return a_.value.size() + b_.value.size(); }

// ---------------------------------------------------------------- MoELoRA

MoELoRALayer::MoELoRALayer(const std::string& prefix, LayerDims dims, AdapterHyperparams hp,
                           Matrix backbone, Rng& rng)
    : dims_(dims), hp_(hp) {
    hp_.validate();
    check_backbone(backbone, dims);
    backbone_ = FrozenBackbone(prefix + ".backbone", std::move(backbone));
    const std::size_t r = hp_.per_expert_rank();
    experts_.reserve(hp_.experts);
    for (std::size_t j = 0; j < hp_.experts; ++j) {
        const std::string name = prefix + ".expert" + std::to_string(j);
        Expert e;
        e.a = Parameter(name + ".A", gaussian_matrix(dims.d_in, r, init_stddev(dims), rng));
        e.b = Parameter(name + ".B", Matrix(r, dims.d_out));
        experts_.push_back(std::move(e));
    }
    router_ = Parameter(prefix + ".router", Matrix(dims.d_in, hp_.experts));
}

template <class Self>
LayerOutput MoELoRALayer::forward_impl(Self& self, Tape& tape, Var x, Routing routing) {
    check_input(tape, x, self.dims_);
    const Var base = self.backbone_.forward(tape, x);
    const Var router_in = routing == Routing::first_token ? tape.slice_rows(x, 0, 1) : x;
    const Var gate = tape.row_softmax(tape.matmul(router_in, tape.parameter(self.router_)));
    std::optional<Var> mix;
    for (std::size_t j = 0; j < self.experts_.size(); ++j) {
        auto& e = self.experts_[j];
        const Var out = tape.matmul(tape.matmul(x, tape.parameter(e.a)), tape.parameter(e.b));
        const Var weighted = tape.scale_rows(out, gate, j);
        mix = mix ? tape.add(*mix, weighted) : weighted;
    }
    return {tape.add(base, tape.scale(*mix, self.hp_.scaling())), gate};
}

LayerOutput MoELoRALayer::forward(Tape& tape, Var x, Routing routing) {
    return forward_impl(*this, tape, x, routing);
}
LayerOutput MoELoRALayer::forward(Tape& tape, Var x, Routing routing) const {
    return forward_impl(*this, tape, x, routing);
}

std::vector<Parameter*> MoELoRALayer::trainable_parameters() {
    std::vector<Parameter*> out;
    for (auto& e : experts_) {
        out.push_back(&e.a);
        out.push_back(&e.b);
    }
    out.push_back(&router_);
    return out;
}

std::size_t MoELoRALayer::count_trainable_params() const {
    std::size_t total = router_.value.size();
    for (const auto& e : experts_) {
        total += e.a.value.size() + e.b.value.size();
    }
    return total;
}

// ---------------------------------------------------------------- BranchLoRA

BranchLoRALayer::BranchLoRALayer(const std::string& prefix, LayerDims dims,
                                 AdapterHyperparams hp, Matrix backbone, Rng& rng)
    : dims_(dims), hp_(hp), prefix_(prefix) {
    hp_.validate();
    check_backbone(backbone, dims);
    backbone_ = FrozenBackbone(prefix + ".backbone", std::move(backbone));
    const std::size_t r = hp_.per_expert_rank();
    a_shared_ = Parameter(prefix + ".shared.A", gaussian_matrix(dims.d_in, r, init_stddev(dims), rng));
    branches_.reserve(hp_.experts);
    for (std::size_t j = 0; j < hp_.experts; ++j) {
        branches_.emplace_back(prefix + ".branch" + std::to_string(j) + ".B", Matrix(r, dims.d_out));
    }
    router_rng_.seed(rng());
}

std::size_t BranchLoRALayer::add_task_router() {
    for (auto& router : routers_) {
        router.frozen = true;
        router.clear_grad();
    }
    // A zero router ties every score, so top-k would always pick the same
    // branches and their identical updates would keep the router gradient at
    // zero. Random scores break the tie.
    routers_.emplace_back(prefix_ + ".router" + std::to_string(routers_.size()),
                          gaussian_matrix(dims_.d_in, hp_.experts, init_stddev(dims_), router_rng_));
    return routers_.size() - 1;
}

Parameter& BranchLoRALayer::router(std::size_t task) {
    if (task >= routers_.size()) {
        throw RoutingError("no router registered for task " + std::to_string(task) + " (" +
                           std::to_string(routers_.size()) + " routers)");
    }
    return routers_[task];
}

const Parameter& BranchLoRALayer::router(std::size_t task) const {
    if (task >= routers_.size()) {
        throw RoutingError("no router registered for task " + std::to_string(task) + " (" +
                           std::to_string(routers_.size()) + " routers)");
    }
    return routers_[task];
}

template <class Self>
LayerOutput BranchLoRALayer::forward_impl(Self& self, Tape& tape, Var x,
                                          std::span<const std::size_t> task_per_row,
                                          bool per_row) {
    check_input(tape, x, self.dims_);
    for (std::size_t t : task_per_row) {
        self.router(t);
    }
    const std::size_t k = self.hp_.top_k;
    if (k > self.hp_.experts) {
        throw ParameterError("top_k exceeds expert count");
    }
    const Var base = self.backbone_.forward(tape, x);
    const Var a = tape.parameter(self.a_shared_);
    std::vector<Var> branch_vars;
    branch_vars.reserve(self.branches_.size());
    for (auto& b : self.branches_) {
        branch_vars.push_back(tape.parameter(b));
    }

    const Var router_in = per_row ? x : tape.slice_rows(x, 0, 1);
    Var scores;
    const bool uniform =
        std::all_of(task_per_row.begin(), task_per_row.end(),
                    [&](std::size_t t) { return t == task_per_row.front(); });
    if (uniform) {
        scores = tape.matmul(router_in, tape.parameter(self.routers_[task_per_row.front()]));
    } else {
        std::vector<std::size_t> distinct(task_per_row.begin(), task_per_row.end());
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        std::vector<Var> sources;
        for (std::size_t t : distinct) {
            sources.push_back(tape.matmul(router_in, tape.parameter(self.routers_[t])));
        }
        std::vector<std::size_t> choice;
        choice.reserve(task_per_row.size());
        for (std::size_t t : task_per_row) {
            choice.push_back(static_cast<std::size_t>(
                std::lower_bound(distinct.begin(), distinct.end(), t) - distinct.begin()));
        }
        scores = tape.select_rows(sources, choice);
    }
    const Var gate = tape.row_softmax(tape.topk_mask(scores, k));

    // x A is shared by every branch.
    const Var xa = tape.matmul(x, a);
    const Matrix g = tape.value(gate);
    std::optional<Var> mix;
    for (std::size_t j = 0; j < branch_vars.size(); ++j) {
        bool selected = false;
        for (std::size_t r = 0; r < g.rows() && !selected; ++r) {
            selected = g(r, j) != 0.0;
        }
        if (!selected) {
            continue;
        }
        const Var weighted = tape.scale_rows(tape.matmul(xa, branch_vars[j]), gate, j);
        mix = mix ? tape.add(*mix, weighted) : weighted;
    }
    return {tape.add(base, tape.scale(*mix, self.hp_.scaling())), gate};
}

LayerOutput BranchLoRALayer::forward(Tape& tape, Var x, std::size_t task, Routing routing) {
    const std::size_t one[] = {task};
    if (routing == Routing::per_row) {
        std::vector<std::size_t> rows(tape.value(x).rows(), task);
        return forward_impl(*this, tape, x, rows, true);
    }
    return forward_impl(*this, tape, x, one, false);
}

LayerOutput BranchLoRALayer::forward(Tape& tape, Var x, std::size_t task,
                                     Routing routing) const {
    const std::size_t one[] = {task};
    if (routing == Routing::per_row) {
        std::vector<std::size_t> rows(tape.value(x).rows(), task);
        return forward_impl(*this, tape, x, rows, true);
    }
    return forward_impl(*this, tape, x, one, false);
}

LayerOutput BranchLoRALayer::forward(Tape& tape, Var x, std::span<const std::size_t> task_per_row) {
    if (task_per_row.size() != tape.value(x).rows()) {
        throw DimensionError("per-row routing needs one task id per input row");
    }
    return forward_impl(*this, tape, x, task_per_row, true);
}

LayerOutput BranchLoRALayer::forward(Tape& tape, Var x,
                                     std::span<const std::size_t> task_per_row) const {
    if (task_per_row.size() != tape.value(x).rows()) {
        throw DimensionError("per-row routing needs one task id per input row");
    }
    return forward_impl(*this, tape, x, task_per_row, true);
}

Matrix BranchLoRALayer::forward_reference(const Matrix& x, std::size_t task,
                                          Routing routing) const {
    if (x.cols() != dims_.d_in) {
        throw DimensionError("adapter input " + x.shape_string() + " does not match d_in");
    }
    const Matrix& router_w = router(task).value;
    const Matrix router_in = routing == Routing::first_token ? slice_rows(x, 0, 1) : x;
    const Matrix gate = row_softmax(topk_mask(matmul(router_in, router_w), hp_.top_k));
    Matrix h = matmul(x, backbone_.weight().value);
    Matrix mix(x.rows(), dims_.d_out);
    for (std::size_t j = 0; j < branches_.size(); ++j) {
        const Matrix out = matmul(matmul(x, a_shared_.value), branches_[j].value);
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const double w = gate(gate.rows() == 1 ? 0 : r, j);
            if (w == 0.0) {
                continue;
            }
            for (std::size_t c = 0; c < dims_.d_out; ++c) {
                mix(r, c) += w * out(r, c);
            }
        }
    }
    add_in_place(h, scale(mix, hp_.scaling()));
    return h;
}

void BranchLoRALayer::freeze_branches(std::span<const std::size_t> indices) {
    for (std::size_t j : indices) {
        if (j >= branches_.size()) {
            throw ParameterError("branch index " + std::to_string(j) + " out of range");
        }
        if (branches_[j].frozen) {
            throw PolicyError("branch " + std::to_string(j) + " is already frozen");
        }
    }
    for (std::size_t j : indices) {
        branches_[j].frozen = true;
        branches_[j].clear_grad();
    }
}

std::vector<bool> BranchLoRALayer::freeze_mask() const {
    std::vector<bool> mask;
    mask.reserve(branches_.size());
    for (const auto& b : branches_) {
        mask.push_back(b.frozen);
    }
    return mask;
}

std::size_t BranchLoRALayer::frozen_count() const {
    return static_cast<std::size_t>(std::count_if(
        branches_.begin(), branches_.end(), [](const Parameter& b) { return b.frozen; }));
}

std::vector<Parameter*> BranchLoRALayer::trainable_parameters(std::size_t task) {
    std::vector<Parameter*> out;
    if (!a_shared_.frozen) {
        out.push_back(&a_shared_);
    }
    for (auto& b : branches_) {
        if (!b.frozen) {
            out.push_back(&b);
        }
    }
    Parameter& r = router(task);
    if (!r.frozen) {
        out.push_back(&r);
    }
    return out;
}

std::size_t BranchLoRALayer::count_trainable_params() const {
    const std::size_t r = hp_.per_expert_rank();
    std::size_t total = a_shared_.frozen ? 0 : a_shared_.value.size();
    total += (branches_.size() - frozen_count()) * r * dims_.d_out;
    total += dims_.d_in * hp_.experts;
    return total;
}

// ---------------------------------------------------------------- factory

AdapterLayer init_adapter(AdapterKind kind, LayerDims dims, const AdapterHyperparams& hp,
                          std::uint64_t seed, std::optional<Matrix> backbone,
                          const std::string& prefix) {
    hp.validate();
    Rng rng(seed);
    if (!backbone) {
        Rng backbone_rng(seed ^ 0x9e3779b97f4a7c15ULL);
        backbone = gaussian_matrix(dims.d_in, dims.d_out, init_stddev(dims), backbone_rng);
    }
    switch (kind) {
    case AdapterKind::lora:
        return LoRALayer(prefix, dims, hp, std::move(*backbone), rng);
    case AdapterKind::moelora:
        return MoELoRALayer(prefix, dims, hp, std::move(*backbone), rng);
    case AdapterKind::branchlora:
        return BranchLoRALayer(prefix, dims, hp, std::move(*backbone), rng);
    }
    throw ParameterError("unknown adapter kind");
}

std::size_t count_trainable_params(const AdapterLayer& layer) {
    return std::visit([](const auto& l) { return l.count_trainable_params(); }, layer);
}

} // namespace blora
