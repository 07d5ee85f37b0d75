// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrices of 64-bit reals and the plain (non-recording)
// kernels used by both the tape and the evaluation paths.

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace blora {

/// Score written into masked-out router entries. exp(kMaskedScore - m) is
/// exactly 0.0 in double precision for any finite m, so a softmax over a
/// masked row assigns hard zeros without ever touching infinities.
inline constexpr double kMaskedScore = -1.0e300;

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    /// Builds a matrix from nested rows; all rows must have equal length.
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix row_vector(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    std::string shape_string() const;
    void fill(double value);

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

std::string shape_of(const Matrix& m);

Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * b^T without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
void add_in_place(Matrix& target, const Matrix& increment);
Matrix scale(const Matrix& a, double factor);
Matrix tanh(const Matrix& a);
Matrix slice_rows(const Matrix& a, std::size_t begin, std::size_t count);
Matrix slice_cols(const Matrix& a, std::size_t begin, std::size_t count);
Matrix vstack(std::span<const Matrix> parts);

/// Numerically stable softmax applied independently to every row.
Matrix row_softmax(const Matrix& a);

/// Keeps the k largest entries of each row and writes kMaskedScore into the
/// rest. Ties resolve toward the lowest column index.
Matrix topk_mask(const Matrix& scores, std::size_t k);

/// Column indices of the k largest entries of `row`, in selection order
/// (descending value, ascending index among equals).
std::vector<std::size_t> topk_indices(std::span<const double> row, std::size_t k);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

/// Cosine similarity of two equal-length vectors (any shape, compared as
/// flattened data). Throws DegenerateInputError on a zero-norm argument.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(const Matrix& a, const Matrix& b);

std::size_t argmax(std::span<const double> values);
bool all_finite(const Matrix& m);

} // namespace blora
