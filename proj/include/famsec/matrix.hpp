// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "famsec/common.hpp"

namespace famsec {

// Dense row-major matrix. Sized for desk-scale transformer work: plain
// loops, no expression templates, contiguous storage.
template <typename T>
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols) : rows_(rows), cols_(cols), data_(std::size_t(rows) * cols, T{}) {}

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int i, int j) { return data_[std::size_t(i) * cols_ + j]; }
    const T& operator()(int i, int j) const { return data_[std::size_t(i) * cols_ + j]; }

    T* row(int i) { return data_.data() + std::size_t(i) * cols_; }
    const T* row(int i) const { return data_.data() + std::size_t(i) * cols_; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T{}); }

    Matrix transposed() const {
        Matrix t(cols_, rows_);
        for (int i = 0; i < rows_; ++i)
            for (int j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<T> data_;
};

namespace detail {
template <typename T>
void check_mm(int an, int bn, const char* what) {
    FAMSEC_REQUIRE(an == bn, contract_error, std::string("matrix shape mismatch in ") + what);
}
}  // namespace detail

// C = A * B
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    detail::check_mm<T>(a.cols(), b.rows(), "matmul");
    Matrix<T> c(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        T* ci = c.row(i);
        const T* ai = a.row(i);
        for (int k = 0; k < a.cols(); ++k) {
            const T aik = ai[k];
            if (aik == T{}) continue;
            const T* bk = b.row(k);
            for (int j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

// C = A * B^T  (rows of both operands are contiguous: dot-product kernel)
template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
    detail::check_mm<T>(a.cols(), b.cols(), "matmul_nt");
    Matrix<T> c(a.rows(), b.rows());
    for (int i = 0; i < a.rows(); ++i) {
        const T* ai = a.row(i);
        T* ci = c.row(i);
        for (int j = 0; j < b.rows(); ++j) {
            const T* bj = b.row(j);
            T s{};
            for (int k = 0; k < a.cols(); ++k) s += ai[k] * bj[k];
            ci[j] = s;
        }
    }
    return c;
}

// C += A^T * B, with A (m x n), B (m x p), C (n x p). Accumulating form used
// for weight gradients.
template <typename T>
void matmul_tn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
    detail::check_mm<T>(a.rows(), b.rows(), "matmul_tn_acc");
    FAMSEC_REQUIRE(c.rows() == a.cols() && c.cols() == b.cols(), contract_error,
                   "matmul_tn_acc: bad output shape");
    for (int i = 0; i < a.rows(); ++i) {
        const T* ai = a.row(i);
        const T* bi = b.row(i);
        for (int k = 0; k < a.cols(); ++k) {
            const T aik = ai[k];
            if (aik == T{}) continue;
            T* ck = c.row(k);
            for (int j = 0; j < b.cols(); ++j) ck[j] += aik * bi[j];
        }
    }
}

template <typename T>
T dot(const T* a, const T* b, int n) {
    T s{};
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
T norm(const T* a, int n) {
    return std::sqrt(dot(a, a, n));
}

template <typename T>
T norm(const std::vector<T>& a) {
    return norm(a.data(), int(a.size()));
}

// y += alpha * x
template <typename T>
void axpy(T alpha, const T* x, T* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
    FAMSEC_REQUIRE(a.rows() == b.rows() && a.cols() == b.cols(), contract_error,
                   "max_abs_diff: shape mismatch");
    T m{};
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

// Singular values by one-sided Jacobi (columns of a working copy are
// orthogonalized by plane rotations; their norms converge to the singular
// values). High relative accuracy on small matrices, which matters for the
// rank-bound checks at tight tolerances.
template <typename T>
std::vector<T> singular_values(const Matrix<T>& m) {
    // Work with the transpose when needed so rows >= cols.
    Matrix<T> a = m.rows() >= m.cols() ? m : m.transposed();
    const int rows = a.rows(), n = a.cols();
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (int i = 0; i < n - 1; ++i) {
            for (int j = i + 1; j < n; ++j) {
                T aii{}, ajj{}, aij{};
                for (int k = 0; k < rows; ++k) {
                    aii += a(k, i) * a(k, i);
                    ajj += a(k, j) * a(k, j);
                    aij += a(k, i) * a(k, j);
                }
                if (std::abs(aij) <= T(1e-30) + T(1e-15) * std::sqrt(aii * ajj)) continue;
                rotated = true;
                T theta = (ajj - aii) / (2 * aij);
                T t = (theta >= 0 ? T(1) : T(-1)) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                T c = 1 / std::sqrt(t * t + 1);
                T s = t * c;
                for (int k = 0; k < rows; ++k) {
                    T aki = a(k, i), akj = a(k, j);
                    a(k, i) = c * aki - s * akj;
                    a(k, j) = s * aki + c * akj;
                }
            }
        }
        if (!rotated) break;
    }
    std::vector<T> sv(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        T acc{};
        for (int k = 0; k < rows; ++k) acc += a(k, i) * a(k, i);
        sv[static_cast<std::size_t>(i)] = std::sqrt(acc);
    }
    std::sort(sv.begin(), sv.end(), std::greater<T>());
    return sv;
}

// Number of singular values above tol.
template <typename T>
int numerical_rank(const Matrix<T>& m, T tol) {
    auto sv = singular_values(m);
    int rank = 0;
    for (T s : sv)
        if (s > tol) ++rank;
    return rank;
}

}  // namespace famsec
