// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-task key pairs aligned to the two embedding views of a task's samples,
// and key-similarity task selection at inference time.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "branchlora/adapters.hpp"
#include "branchlora/autodiff.hpp"

namespace blora {

struct SampleEmbeddings {
    Matrix image; ///< (1, d_e)
    Matrix text;  ///< (1, d_e)

    /// Splits an input row into its two views: first half is the image view,
    /// second half the text view.
    static SampleEmbeddings from_input(std::span<const double> input);
};

/// Row-stacked embeddings of a batch; row j of `image` and `text` belong to
/// sample j.
struct EmbeddingBatch {
    Matrix image;
    Matrix text;

    static EmbeddingBatch from_inputs(const Matrix& inputs);
    static EmbeddingBatch from_samples(std::span<const SampleEmbeddings> samples);
    std::size_t size() const noexcept { return image.rows(); }
};

struct TaskKeys {
    std::size_t task = 0;
    Parameter image;
    Parameter text;
};

/// sum_j (1 - cos(e_img_j, k_img)) + sum_j (1 - cos(e_txt_j, k_txt)), recorded
/// on the tape so gradients reach the keys.
Var alignment_loss(Tape& tape, const EmbeddingBatch& batch, TaskKeys& keys);
/// Plain evaluation of the same quantity.
double alignment_loss(std::span<const SampleEmbeddings> batch, const TaskKeys& keys);

/// task_loss + lambda * align.
double total_loss(double task_loss, double align, double lambda);
Var total_loss(Tape& tape, Var task_loss, Var align, double lambda);

/// Append-per-task store of key pairs. Adding a task freezes every earlier
/// key pair.
class TaskKeyStore {
public:
    TaskKeyStore() = default;
    explicit TaskKeyStore(std::size_t embedding_dim) : dim_(embedding_dim) {}

    /// New key pair drawn as small N(0, init_std^2) perturbations of zero.
    TaskKeys& add_task(Rng& rng, double init_std = 1e-2);
    void push(TaskKeys keys);

    std::size_t size() const noexcept { return keys_.size(); }
    std::size_t embedding_dim() const noexcept { return dim_; }
    TaskKeys& at(std::size_t task) { return keys_.at(task); }
    const TaskKeys& at(std::size_t task) const { return keys_.at(task); }
    std::span<const TaskKeys> keys() const noexcept { return keys_; }

private:
    std::size_t dim_ = 0;
    std::vector<TaskKeys> keys_;
};

/// Combined score cos(e_img, k_img) + cos(e_txt, k_txt).
double selection_score(const SampleEmbeddings& sample, const TaskKeys& keys);

/// Task id of the highest-scoring key pair; ties go to the lowest position.
std::size_t select_task(const SampleEmbeddings& sample, std::span<const TaskKeys> all_keys);

/// Fraction of samples whose selected task matches the label.
double selector_accuracy(std::span<const SampleEmbeddings> samples,
                         std::span<const std::size_t> true_tasks,
                         std::span<const TaskKeys> all_keys);

} // namespace blora
