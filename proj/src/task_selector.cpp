// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchlora/task_selector.hpp"

#include <cmath>

#include "branchlora/errors.hpp"

namespace blora {

namespace {

void require_nonzero(std::span<const double> v, const char* what) {
    if (l2_norm(v) == 0.0) {
        throw DegenerateInputError(std::string(what) + " has zero norm");
    }
}

} // namespace

SampleEmbeddings SampleEmbeddings::from_input(std::span<const double> input) {
    if (input.size() < 2 || input.size() % 2 != 0) {
        throw DimensionError("embedding views need an even-length input, got " +
                             std::to_string(input.size()));
    }
    const std::size_t half = input.size() / 2;
    return {Matrix::row_vector(input.first(half)), Matrix::row_vector(input.subspan(half))};
}

EmbeddingBatch EmbeddingBatch::from_inputs(const Matrix& inputs) {
    if (inputs.cols() < 2 || inputs.cols() % 2 != 0) {
        throw DimensionError("embedding views need an even input width, got " +
                             inputs.shape_string());
    }
    const std::size_t half = inputs.cols() / 2;
    return {slice_cols(inputs, 0, half), slice_cols(inputs, half, half)};
}

EmbeddingBatch EmbeddingBatch::from_samples(std::span<const SampleEmbeddings> samples) {
    std::vector<Matrix> image;
    std::vector<Matrix> text;
    image.reserve(samples.size());
    text.reserve(samples.size());
    for (const auto& s : samples) {
        image.push_back(s.image);
        text.push_back(s.text);
    }
    return {vstack(image), vstack(text)};
}

Var alignment_loss(Tape& tape, const EmbeddingBatch& batch, TaskKeys& keys) {
    if (batch.size() == 0) {
        throw DimensionError("alignment_loss: empty batch");
    }
    const Var img = tape.row_cosine(tape.constant(batch.image), tape.parameter(keys.image));
    const Var txt = tape.row_cosine(tape.constant(batch.text), tape.parameter(keys.text));
    // sum(1 - c_img) + sum(1 - c_txt) = 2n - sum(c_img) - sum(c_txt)
    const Var both = tape.add(tape.sum(img), tape.sum(txt));
    return tape.add_scalar(tape.scale(both, -1.0), 2.0 * static_cast<double>(batch.size()));
}

double alignment_loss(std::span<const SampleEmbeddings> batch, const TaskKeys& keys) {
    if (batch.empty()) {
        throw DimensionError("alignment_loss: empty batch");
    }
    double total = 0.0;
    for (const auto& s : batch) {
        total += 1.0 - cosine_similarity(s.image, keys.image.value);
    }
    for (const auto& s : batch) {
        total += 1.0 - cosine_similarity(s.text, keys.text.value);
    }
    return total;
}

double total_loss(double task_loss, double align, double lambda) {
    return task_loss + lambda * align;
}

Var total_loss(Tape& tape, Var task_loss, Var align, double lambda) {
    return tape.add(task_loss, tape.scale(align, lambda));
}

TaskKeys& TaskKeyStore::add_task(Rng& rng, double init_std) {
    TaskKeys keys;
    keys.task = keys_.size();
    const std::string base = "keys.task" + std::to_string(keys.task);
    keys.image = Parameter(base + ".image", gaussian_matrix(1, dim_, init_std, rng));
    keys.text = Parameter(base + ".text", gaussian_matrix(1, dim_, init_std, rng));
    push(std::move(keys));
    return keys_.back();
}

void TaskKeyStore::push(TaskKeys keys) {
    if (keys.image.value.cols() != dim_ || keys.text.value.cols() != dim_) {
        throw DimensionError("task keys do not match embedding dim " + std::to_string(dim_));
    }
    for (auto& k : keys_) {
        k.image.frozen = true;
        k.text.frozen = true;
        k.image.clear_grad();
        k.text.clear_grad();
    }
    keys_.push_back(std::move(keys));
}

double selection_score(const SampleEmbeddings& sample, const TaskKeys& keys) {
    return cosine_similarity(sample.image, keys.image.value) +
           cosine_similarity(sample.text, keys.text.value);
}

std::size_t select_task(const SampleEmbeddings& sample, std::span<const TaskKeys> all_keys) {
    if (all_keys.empty()) {
        throw SelectorError("select_task: no trained task keys");
    }
    require_nonzero(sample.image.data(), "image embedding");
    require_nonzero(sample.text.data(), "text embedding");
    std::size_t best = 0;
    double best_score = selection_score(sample, all_keys[0]);
    for (std::size_t t = 1; t < all_keys.size(); ++t) {
        const double s = selection_score(sample, all_keys[t]);
        if (s > best_score) {
            best = t;
            best_score = s;
        }
    }
    return all_keys[best].task;
}

double selector_accuracy(std::span<const SampleEmbeddings> samples,
                         std::span<const std::size_t> true_tasks,
                         std::span<const TaskKeys> all_keys) {
    if (samples.size() != true_tasks.size()) {
        throw DimensionError("selector_accuracy: label count mismatch");
    }
    if (samples.empty()) {
        return 0.0;
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        hits += select_task(samples[i], all_keys) == true_tasks[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

} // namespace blora
