// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchlora/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "branchlora/errors.hpp"

namespace blora {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string());
    }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw DimensionError("ragged row list: expected " + std::to_string(c) +
                                 " columns, got " + std::to_string(row.size()));
        }
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

Matrix Matrix::row_vector(std::span<const double> values) {
    return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

std::string Matrix::shape_string() const {
    return "(" + std::to_string(rows_) + "," + std::to_string(cols_) + ")";
}

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

std::string shape_of(const Matrix& m) { return m.shape_string(); }

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                             b.shape_string());
    }
}

} // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: cannot multiply " + a.shape_string() + " by " +
                             b.shape_string());
    }
    Matrix out(a.rows(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* out_row = out.row(i).data();
        for (std::size_t p = 0; p < a.cols(); ++p) {
            const double av = a(i, p);
            if (av == 0.0) {
                continue;
            }
            const double* b_row = b.row(p).data();
            for (std::size_t j = 0; j < n; ++j) {
                out_row[j] += av * b_row[j];
            }
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_tn: cannot multiply transpose of " + a.shape_string() +
                             " by " + b.shape_string());
    }
    Matrix out(a.cols(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t p = 0; p < a.rows(); ++p) {
        const double* b_row = b.row(p).data();
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double av = a(p, i);
            if (av == 0.0) {
                continue;
            }
            double* out_row = out.row(i).data();
            for (std::size_t j = 0; j < n; ++j) {
                out_row[j] += av * b_row[j];
            }
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: cannot multiply " + a.shape_string() +
                             " by transpose of " + b.shape_string());
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            out(i, j) = dot(a.row(i), b.row(j));
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix out = a;
    add_in_place(out, b);
    return out;
}

void add_in_place(Matrix& target, const Matrix& increment) {
    require_same_shape(target, increment, "add_in_place");
    auto t = target.data();
    auto s = increment.data();
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] += s[i];
    }
}

Matrix scale(const Matrix& a, double factor) {
    Matrix out = a;
    for (double& v : out.data()) {
        v *= factor;
    }
    return out;
}

Matrix tanh(const Matrix& a) {
    Matrix out = a;
    for (double& v : out.data()) {
        v = std::tanh(v);
    }
    return out;
}

Matrix slice_rows(const Matrix& a, std::size_t begin, std::size_t count) {
    if (begin + count > a.rows()) {
        throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") out of range for " +
                             a.shape_string());
    }
    auto first = a.data().begin() + static_cast<std::ptrdiff_t>(begin * a.cols());
    return Matrix(count, a.cols(),
                  std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * a.cols())));
}

Matrix slice_cols(const Matrix& a, std::size_t begin, std::size_t count) {
    if (begin + count > a.cols()) {
        throw DimensionError("slice_cols: columns out of range for " + a.shape_string());
    }
    Matrix out(a.rows(), count);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < count; ++j) {
            out(i, j) = a(i, begin + j);
        }
    }
    return out;
}

Matrix vstack(std::span<const Matrix> parts) {
    if (parts.empty()) {
        return {};
    }
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) {
            throw DimensionError("vstack: column mismatch " + parts.front().shape_string() +
                                 " vs " + p.shape_string());
        }
        rows += p.rows();
    }
    std::vector<double> data;
    data.reserve(rows * cols);
    for (const auto& p : parts) {
        data.insert(data.end(), p.data().begin(), p.data().end());
    }
    return Matrix(rows, cols, std::move(data));
}

Matrix row_softmax(const Matrix& a) {
    Matrix out = a;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto row = out.row(i);
        const double max = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (double& v : row) {
            v = std::exp(v - max);
            total += v;
        }
        for (double& v : row) {
            v /= total;
        }
    }
    return out;
}

std::vector<std::size_t> topk_indices(std::span<const double> row, std::size_t k) {
    if (k < 1 || k > row.size()) {
        throw ParameterError("top-k width " + std::to_string(k) + " outside [1, " +
                             std::to_string(row.size()) + "]");
    }
    std::vector<std::size_t> order(row.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t lhs, std::size_t rhs) {
                          if (row[lhs] != row[rhs]) {
                              return row[lhs] > row[rhs];
                          }
                          return lhs < rhs;
                      });
    order.resize(k);
    return order;
}

Matrix topk_mask(const Matrix& scores, std::size_t k) {
    if (k < 1 || k > scores.cols()) {
        throw ParameterError("top-k width " + std::to_string(k) + " outside [1, " +
                             std::to_string(scores.cols()) + "]");
    }
    Matrix out(scores.rows(), scores.cols(), kMaskedScore);
    for (std::size_t i = 0; i < scores.rows(); ++i) {
        for (std::size_t j : topk_indices(scores.row(i), k)) {
            out(i, j) = scores(i, j);
        }
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionError("dot: length mismatch " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        total += a[i] * b[i];
    }
    return total;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionError("cosine_similarity: length mismatch " + std::to_string(a.size()) +
                             " vs " + std::to_string(b.size()));
    }
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) {
        throw DegenerateInputError("cosine_similarity: zero-norm vector");
    }
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double cosine_similarity(const Matrix& a, const Matrix& b) {
    return cosine_similarity(a.data(), b.data());
}

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) {
        throw DimensionError("argmax of empty range");
    }
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) -
                                    values.begin());
}

bool all_finite(const Matrix& m) {
    return std::all_of(m.data().begin(), m.data().end(),
                       [](double v) { return std::isfinite(v); });
}

} // namespace blora
