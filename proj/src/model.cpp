// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchlora/model.hpp"

#include <cmath>

#include "branchlora/errors.hpp"
#include "branchlora/stream.hpp"

namespace blora {

std::string to_string(Method method) {
    switch (method) {
    case Method::zero_shot:
        return "zero_shot";
    case Method::lora:
        return "lora";
    case Method::moelora:
        return "moelora";
    case Method::branchlora:
        return "branchlora";
    case Method::multitask:
        return "multitask";
    }
    return "unknown";
}

Method method_from_string(const std::string& text) {
    for (Method m : {Method::zero_shot, Method::lora, Method::moelora, Method::branchlora,
                     Method::multitask}) {
        if (to_string(m) == text) {
            return m;
        }
    }
    throw ParameterError("unknown method '" + text + "'");
}

ContinualModel ContinualModel::create(Method method, const ModelSpec& spec, std::uint64_t seed) {
    spec.hp.validate();
    if (spec.layers < 1) {
        throw ParameterError("model needs at least one layer");
    }
    ContinualModel model;
    model.method_ = method;
    model.spec_ = spec;
    model.keys_ = TaskKeyStore(spec.input_dim / 2);

    Rng backbone_rng(mix_seed(seed, 0xb4c6));
    std::vector<Matrix> weights;
    for (std::size_t l = 0; l < spec.layers; ++l) {
        const std::size_t d_in = l == 0 ? spec.input_dim : spec.hidden_dim;
        weights.push_back(gaussian_matrix(d_in, spec.hidden_dim,
                                          1.0 / std::sqrt(static_cast<double>(d_in)), backbone_rng));
    }
    model.head_ = FrozenBackbone(
        "head", gaussian_matrix(spec.hidden_dim, spec.classes,
                                1.0 / std::sqrt(static_cast<double>(spec.hidden_dim)), backbone_rng));

    const AdapterKind kind = method == Method::moelora      ? AdapterKind::moelora
                             : method == Method::branchlora ? AdapterKind::branchlora
                                                            : AdapterKind::lora;
    for (std::size_t l = 0; l < spec.layers; ++l) {
        const std::string prefix = "layer" + std::to_string(l);
        if (method == Method::zero_shot) {
            model.backbones_.emplace_back(prefix + ".backbone", std::move(weights[l]));
            continue;
        }
        const LayerDims dims{weights[l].rows(), weights[l].cols()};
        model.adapters_.push_back(init_adapter(kind, dims, spec.hp,
                                               mix_seed(seed, 0xada0 + l + 16 * static_cast<std::uint64_t>(kind)),
                                               std::move(weights[l]), prefix));
    }
    return model;
}

std::size_t ContinualModel::begin_task(Rng& rng) {
    if (method_ == Method::branchlora) {
        for (auto& layer : adapters_) {
            std::get<BranchLoRALayer>(layer).add_task_router();
        }
        keys_.add_task(rng);
    }
    return tasks_started_++;
}

template <class Self>
Var ContinualModel::logits_impl(Self& self, Tape& tape, const Matrix& x,
                                std::span<const std::size_t> task_per_row,
                                std::vector<Matrix>* gates) {
    if (x.cols() != self.spec_.input_dim) {
        throw DimensionError("model input " + x.shape_string() + " does not match input_dim " +
                             std::to_string(self.spec_.input_dim));
    }
    Var h = tape.constant(x);
    const std::size_t layers = self.spec_.layers;
    for (std::size_t l = 0; l < layers; ++l) {
        if (l > 0) {
            h = tape.tanh(h);
        }
        if (self.adapters_.empty()) {
            h = self.backbones_[l].forward(tape, h);
            continue;
        }
        auto& layer = self.adapters_[l];
        LayerOutput out;
        if (auto* lora = std::get_if<LoRALayer>(&layer)) {
            out = lora->forward(tape, h);
        } else if (auto* moe = std::get_if<MoELoRALayer>(&layer)) {
            out = moe->forward(tape, h, Routing::per_row);
        } else {
            auto& branch = std::get<BranchLoRALayer>(layer);
            if (task_per_row.size() != x.rows()) {
                throw RoutingError("task-routed model needs one task id per input row");
            }
            out = branch.forward(tape, h, task_per_row);
        }
        if (gates && out.gate) {
            gates->push_back(tape.value(*out.gate));
        }
        h = out.h;
    }
    return self.head_.forward(tape, h);
}

Var ContinualModel::logits(Tape& tape, const Matrix& x, std::span<const std::size_t> task_per_row,
                           std::vector<Matrix>* gates) {
    return logits_impl(*this, tape, x, task_per_row, gates);
}

Var ContinualModel::logits(Tape& tape, const Matrix& x, std::span<const std::size_t> task_per_row,
                           std::vector<Matrix>* gates) const {
    return logits_impl(*this, tape, x, task_per_row, gates);
}

Matrix ContinualModel::logits(const Matrix& x, std::span<const std::size_t> task_per_row) const {
    Tape tape;
    return tape.value(logits(tape, x, task_per_row));
}

std::vector<Parameter*> ContinualModel::trainable_parameters(std::size_t task) {
    std::vector<Parameter*> out;
    for (auto& layer : adapters_) {
        std::vector<Parameter*> params;
        if (auto* lora = std::get_if<LoRALayer>(&layer)) {
            params = lora->trainable_parameters();
        } else if (auto* moe = std::get_if<MoELoRALayer>(&layer)) {
            params = moe->trainable_parameters();
        } else {
            params = std::get<BranchLoRALayer>(layer).trainable_parameters(task);
        }
        out.insert(out.end(), params.begin(), params.end());
    }
    if (method_ == Method::branchlora && task < keys_.size()) {
        TaskKeys& k = keys_.at(task);
        if (!k.image.frozen) {
            out.push_back(&k.image);
        }
        if (!k.text.frozen) {
            out.push_back(&k.text);
        }
    }
    return out;
}

std::size_t ContinualModel::count_trainable_params() const {
    std::size_t total = 0;
    for (const auto& layer : adapters_) {
        total += blora::count_trainable_params(layer);
    }
    return total;
}

std::vector<const Parameter*> ContinualModel::all_parameters() const {
    std::vector<const Parameter*> out;
    for (const auto& b : backbones_) {
        out.push_back(&b.weight());
    }
    for (const auto& layer : adapters_) {
        if (const auto* lora = std::get_if<LoRALayer>(&layer)) {
            out.push_back(&lora->backbone().weight());
            out.push_back(&lora->a());
            out.push_back(&lora->b());
        } else if (const auto* moe = std::get_if<MoELoRALayer>(&layer)) {
            out.push_back(&moe->backbone().weight());
            for (const auto& e : moe->experts()) {
                out.push_back(&e.a);
                out.push_back(&e.b);
            }
            out.push_back(&moe->router());
        } else {
            const auto& branch = std::get<BranchLoRALayer>(layer);
            out.push_back(&branch.backbone().weight());
            out.push_back(&branch.shared_a());
            for (const auto& b : branch.branches()) {
                out.push_back(&b);
            }
            for (std::size_t t = 0; t < branch.task_count(); ++t) {
                out.push_back(&branch.router(t));
            }
        }
    }
    out.push_back(&head_.weight());
    for (const auto& k : keys_.keys()) {
        out.push_back(&k.image);
        out.push_back(&k.text);
    }
    return out;
}

} // namespace blora
