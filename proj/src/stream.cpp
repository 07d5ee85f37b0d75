// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchlora/stream.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <random>

#include "branchlora/adapters.hpp"
#include "branchlora/errors.hpp"

namespace blora {

void StreamSpec::validate() const {
    if (tasks < 1) {
        throw ParameterError("stream needs at least one task");
    }
    if (classes < 2) {
        throw ParameterError("stream needs at least two classes");
    }
    if (train_samples < classes || test_samples < classes) {
        throw ParameterError("samples per split must be >= class count");
    }
    if (input_dim < 2 || input_dim % 2 != 0) {
        throw ParameterError("input_dim must be even and >= 2");
    }
    if (!(center_scale > 0.0) || !(noise_scale > 0.0)) {
        throw ParameterError("center_scale and noise_scale must be positive");
    }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {

/// Unit vectors in `dim` dimensions, mutually orthogonal while count <= dim.
std::vector<std::vector<double>> spread_directions(std::size_t count, std::size_t dim, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<std::vector<double>> out;
    while (out.size() < count) {
        std::vector<double> v(dim);
        for (double& x : v) {
            x = dist(rng);
        }
        if (out.size() < dim) {
            for (const auto& u : out) {
                const double p = dot(v, u);
                for (std::size_t i = 0; i < dim; ++i) {
                    v[i] -= p * u[i];
                }
            }
        }
        const double n = l2_norm(v);
        if (n < 1e-8) {
            continue;
        }
        for (double& x : v) {
            x /= n;
        }
        out.push_back(std::move(v));
    }
    return out;
}

TaskData draw_split(const Matrix& center, const Matrix& target_map, std::size_t n,
                    double noise_scale, std::uint64_t seed) {
    const std::size_t d = center.cols();
    const std::size_t classes = target_map.cols();
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, noise_scale);
    for (int attempt = 0; attempt < 64; ++attempt) {
        TaskData data{Matrix(n, d), std::vector<std::size_t>(n)};
        std::vector<std::size_t> per_class(classes, 0);
        Matrix eps(1, d);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < d; ++c) {
                eps(0, c) = noise(rng);
                data.inputs(i, c) = center(0, c) + eps(0, c);
            }
            const std::size_t label = argmax(matmul(eps, target_map).row(0));
            data.labels[i] = label;
            ++per_class[label];
        }
        bool complete = true;
        for (std::size_t c : per_class) {
            complete = complete && c > 0;
        }
        if (complete) {
            return data;
        }
    }
    throw ParameterError("could not draw a split covering every class; increase samples");
}

} // namespace

TaskStream generate_stream(const StreamSpec& spec, std::uint64_t seed) {
    spec.validate();
    TaskStream stream;
    stream.seed = seed;
    Rng rng(mix_seed(seed, 0x5eed));
    const std::size_t half = spec.input_dim / 2;
    const auto image_dirs = spread_directions(spec.tasks, half, rng);
    const auto text_dirs = spread_directions(spec.tasks, half, rng);
    const double half_scale = spec.center_scale / std::sqrt(2.0);

    for (std::size_t t = 0; t < spec.tasks; ++t) {
        const std::size_t source = spec.repeat_first_task ? 0 : t;
        SyntheticTask task;
        task.id = t;
        task.classes = spec.classes;
        task.seed = mix_seed(seed, 1000 + source);
        if (spec.repeat_first_task && t > 0) {
            SyntheticTask copy = stream.tasks.front();
            copy.id = t;
            stream.tasks.push_back(std::move(copy));
            continue;
        }
        task.center = Matrix(1, spec.input_dim);
        for (std::size_t i = 0; i < half; ++i) {
            task.center(0, i) = half_scale * image_dirs[source][i];
            task.center(0, half + i) = half_scale * text_dirs[source][i];
        }
        Rng map_rng(mix_seed(task.seed, 1));
        task.target_map = gaussian_matrix(spec.input_dim, spec.classes, 1.0, map_rng);
        task.train = draw_split(task.center, task.target_map, spec.train_samples, spec.noise_scale,
                                mix_seed(task.seed, 2));
        task.test = draw_split(task.center, task.target_map, spec.test_samples, spec.noise_scale,
                               mix_seed(task.seed, 3));
        stream.tasks.push_back(std::move(task));
    }
    return stream;
}

std::string TaskStream::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](std::uint64_t word) {
        for (int b = 0; b < 8; ++b) {
            h ^= (word >> (8 * b)) & 0xffu;
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& task : tasks) {
        feed(task.id);
        for (const TaskData* split : {&task.train, &task.test}) {
            for (double v : split->inputs.data()) {
                feed(std::bit_cast<std::uint64_t>(v));
            }
            for (std::size_t l : split->labels) {
                feed(l);
            }
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace blora
