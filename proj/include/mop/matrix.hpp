#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "mop/simd/kernels.hpp"

namespace mop {

/// Row-major dense matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    return simd::dot(a.data(), b.data(), a.size());
}

/// out = m * x
inline void matvec(const Matrix& m, std::span<const double> x, std::span<double> out) {
    for (std::size_t r = 0; r < m.rows(); ++r) out[r] = simd::dot(m.row(r).data(), x.data(), m.cols());
}

/// Projects every row of `in` through `m`: out.row(i) = m * in.row(i).
inline Matrix project_rows(const Matrix& m, const Matrix& in) {
    Matrix out(in.rows(), m.rows());
    for (std::size_t i = 0; i < in.rows(); ++i) matvec(m, in.row(i), out.row(i));
    return out;
}

/// m += alpha * a b^T
inline void add_outer(Matrix& m, double alpha, std::span<const double> a, std::span<const double> b) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        if (a[r] != 0.0) simd::axpy(alpha * a[r], b.data(), m.row(r).data(), m.cols());
    }
}

}  // namespace mop
