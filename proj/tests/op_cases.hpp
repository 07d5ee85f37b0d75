// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// One random gradient-check case per differentiable tape operation.

#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace blora::testing {

struct OpCase {
    std::vector<Parameter> params;
    LossBuilder build;
};

using CaseFactory = std::function<OpCase(std::mt19937_64&)>;

inline std::size_t draw(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Scores whose k-th and (k+1)-th largest entries differ by at least `gap` in
/// every row, so a finite-difference step cannot change the selection.
inline Matrix separated_scores(std::size_t rows, std::size_t cols, std::size_t k,
                               std::mt19937_64& rng, double gap = 0.05) {
    for (;;) {
        Matrix m = random_matrix(rows, cols, rng);
        bool ok = true;
        for (std::size_t r = 0; r < rows && ok; ++r) {
            std::vector<double> v(m.row(r).begin(), m.row(r).end());
            std::sort(v.rbegin(), v.rend());
            ok = k >= cols || v[k - 1] - v[k] >= gap;
        }
        if (ok) {
            return m;
        }
    }
}

/// Named factories covering every differentiable op. Each reduces to a scalar
/// through mse against a random target (or is itself the reduction).
inline std::vector<std::pair<std::string, CaseFactory>> op_cases() {
    std::vector<std::pair<std::string, CaseFactory>> cases;
    auto param = [](const std::string& name, Matrix m) { return Parameter(name, std::move(m)); };

    cases.emplace_back("matmul", [=](std::mt19937_64& rng) {
        const std::size_t n = draw(rng, 1, 4), k = draw(rng, 1, 4), m = draw(rng, 1, 4);
        Matrix target = random_matrix(n, m, rng);
        return OpCase{{param("a", random_matrix(n, k, rng)), param("b", random_matrix(k, m, rng))},
                      [target](Tape& t, std::vector<Var>& v) {
                          return t.mse(t.matmul(v[0], v[1]), target);
                      }};
    });
    cases.emplace_back("add", [=](std::mt19937_64& rng) {
        const std::size_t n = draw(rng, 1, 4), m = draw(rng, 1, 4);
        Matrix target = random_matrix(n, m, rng);
        return OpCase{{param("a", random_matrix(n, m, rng)), param("b", random_matrix(n, m, rng))},
                      [target](Tape& t, std::vector<Var>& v) {
                          return t.mse(t.add(v[0], v[1]), target);
                      }};
    });
    cases.emplace_back("scale", [=](std::mt19937_64& rng) {
        const std::size_t n = draw(rng, 1, 4), m = draw(rng, 1, 4);
        Matrix target = random_matrix(n, m, rng);
        const double f = std::normal_distribution<double>(0.0, 2.0)(rng);
        return OpCase{{param("a", random_matrix(n, m, rng))},
                      [target, f](Tape& t, std::vector<Var>& v) {
                          return t.mse(t.scale(v[0], f), target);
                      }};
    });
    cases.emplace_back("add_scalar", [=](std::mt19937_64& rng) {
        const std::size_t n = draw(rng, 1, 4), m = draw(rng, 1, 4);
        Matrix target = random_matrix(n, m, rng);
        const double c = std::normal_distribution<double>(0.0, 1.0)(rng);
        return OpCase{{param("a", random_matrix(n, m, rng))},
                      [target, c](Tape& t, std::vector<Var>& v) {
                          return t.mse(t.add_scalar(v[0], c), target);
                      }};
    });
    cases.emplace_back("tanh", [=](std::mt19937_64& rng) {
        const std::size_t n = draw(rng, 1, 4), m = draw(rng, 1, 4);
        Matrix target = random_matrix(n, m, rng);
        return OpCase{{param("a", random_matrix(n, m, rng))},
                      [target](Tape& t, std::vector<Var>& v) { return t.mse(t.tanh(v[0]), target); }};
    });
    cases.emplace_back("row_softmax", [=](std::mt19937_64& rng) {
        const std::size_t n = draw(rng, 1, 4), m = draw(rng, 2, 5);
        Matrix target = random_matrix(n, m, rng);
        return OpCase{{param("a", random_matrix(n, m, rng))},
                      [target](Tape& t, std::vector<Var>& v) {
                          return t.mse(t.row_softmax(v[0]), target);
                      }};
    });
    cases.emplace_back("topk_mask", [=](std::mt19937_64& rng) {
        const std::size_t n = draw(rng, 1, 4), m = draw(rng, 2, 6), k = draw(rng, 1, m);
        Matrix target = random_matrix(n, m, rng);
        return OpCase{{param("s", separated_scores(n, m, k, rng))},
                      [target, k](Tape& t, std::vector<Var>& v) {
                          return t.mse(t.row_softmax(t.topk_mask(v[0], k)), target);
                      }};
    });
    cases.emplace_back("slice_rows", [=](std::mt19937_64& rng) {
        const std::size_t n = draw(rng, 2, 5), m = draw(rng, 1, 4);
        const std::size_t begin = draw(rng, 0, n - 1), count = draw(rng, 1, n - begin);
        Matrix target = random_matrix(count, m, rng);
        return OpCase{{param("a", random_matrix(n, m, rng))},
                      [target, begin, count](Tape& t, std::vector<Var>& v) {
                          return t.mse(t.slice_rows(v[0], begin, count), target);
                      }};
    });
    cases.emplace_back("scale_rows", [=](std::mt19937_64& rng) {
        const std::size_t n = draw(rng, 1, 4), m = draw(rng, 1, 4), g = draw(rng, 1, 4);
        const std::size_t col = draw(rng, 0, g - 1);
        const std::size_t gate_rows = draw(rng, 0, 1) ? n : 1;
        Matrix target = random_matrix(n, m, rng);
        return OpCase{{param("a", random_matrix(n, m, rng)), param("g", random_matrix(gate_rows, g, rng))},
                      [target, col](Tape& t, std::vector<Var>& v) {
                          return t.mse(t.scale_rows(v[0], v[1], col), target);
                      }};
    });
    cases.emplace_back("select_rows", [=](std::mt19937_64& rng) {
        const std::size_t n = draw(rng, 1, 5), m = draw(rng, 1, 4), s = draw(rng, 1, 3);
        std::vector<Parameter> ps;
        for (std::size_t i = 0; i < s; ++i) {
            ps.push_back(param("s" + std::to_string(i), random_matrix(n, m, rng)));
        }
        std::vector<std::size_t> choice(n);
        for (auto& c : choice) {
            c = draw(rng, 0, s - 1);
        }
        Matrix target = random_matrix(n, m, rng);
        return OpCase{std::move(ps), [target, choice](Tape& t, std::vector<Var>& v) {
                          return t.mse(t.select_rows(v, choice), target);
                      }};
    });
    cases.emplace_back("row_cosine", [=](std::mt19937_64& rng) {
        const std::size_t n = draw(rng, 1, 4), d = draw(rng, 2, 5);
        Matrix target = random_matrix(n, 1, rng);
        return OpCase{{param("e", random_matrix(n, d, rng)), param("k", random_matrix(1, d, rng))},
                      [target](Tape& t, std::vector<Var>& v) {
                          return t.mse(t.row_cosine(v[0], v[1]), target);
                      }};
    });
    cases.emplace_back("cross_entropy", [=](std::mt19937_64& rng) {
        const std::size_t n = draw(rng, 1, 5), c = draw(rng, 2, 5);
        std::vector<std::size_t> labels(n);
        for (auto& l : labels) {
            l = draw(rng, 0, c - 1);
        }
        return OpCase{{param("z", random_matrix(n, c, rng, 2.0))},
                      [labels](Tape& t, std::vector<Var>& v) { return t.cross_entropy(v[0], labels); }};
    });
    cases.emplace_back("mse", [=](std::mt19937_64& rng) {
        const std::size_t n = draw(rng, 1, 4), m = draw(rng, 1, 4);
        Matrix target = random_matrix(n, m, rng);
        return OpCase{{param("a", random_matrix(n, m, rng))},
                      [target](Tape& t, std::vector<Var>& v) { return t.mse(v[0], target); }};
    });
    cases.emplace_back("sum", [=](std::mt19937_64& rng) {
        const std::size_t n = draw(rng, 1, 4), m = draw(rng, 1, 4);
        return OpCase{{param("a", random_matrix(n, m, rng))},
                      [](Tape& t, std::vector<Var>& v) { return t.sum(t.tanh(v[0])); }};
    });
    cases.emplace_back("mean", [=](std::mt19937_64& rng) {
        const std::size_t n = draw(rng, 1, 4), m = draw(rng, 1, 4);
        return OpCase{{param("a", random_matrix(n, m, rng))},
                      [](Tape& t, std::vector<Var>& v) { return t.mean(t.tanh(v[0])); }};
    });
    return cases;
}

} // namespace blora::testing
