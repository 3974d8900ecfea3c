// Row-major dense matrix and the handful of dense kernels the engine needs.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "vqgnn/common.hpp"

namespace vqgnn {

template <typename T>
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;  // rows*cols, row-major

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

    T& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    T* row(std::size_t r) { return data.data() + r * cols; }
    const T* row(std::size_t r) const { return data.data() + r * cols; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }

    template <typename U>
    DenseMatrix<U> cast() const {
        DenseMatrix<U> out(rows, cols);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <typename T>
DenseMatrix<T> dense_identity(std::size_t n) {
    DenseMatrix<T> m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = T(1);
    return m;
}

// out = a * b
template <typename T>
DenseMatrix<T> matmul(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
    if (a.cols != b.rows) throw input_error("matmul: inner dimensions disagree");
    DenseMatrix<T> out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const T* arow = a.row(i);
        T* orow = out.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const T aik = arow[k];
            if (aik == T(0)) continue;
            const T* brow = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

// out = a^T * b
template <typename T>
DenseMatrix<T> matmul_at_b(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
    if (a.rows != b.rows) throw input_error("matmul_at_b: row counts disagree");
    DenseMatrix<T> out(a.cols, b.cols);
    for (std::size_t r = 0; r < a.rows; ++r) {
        const T* arow = a.row(r);
        const T* brow = b.row(r);
        for (std::size_t i = 0; i < a.cols; ++i) {
            const T ari = arow[i];
            if (ari == T(0)) continue;
            T* orow = out.row(i);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += ari * brow[j];
        }
    }
    return out;
}

// out = a * b^T
template <typename T>
DenseMatrix<T> matmul_a_bt(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
    if (a.cols != b.cols) throw input_error("matmul_a_bt: column counts disagree");
    DenseMatrix<T> out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const T* arow = a.row(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const T* brow = b.row(j);
            T acc = T(0);
            for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            out.at(i, j) = acc;
        }
    }
    return out;
}

template <typename T>
void add_inplace(DenseMatrix<T>& a, const DenseMatrix<T>& b) {
    if (!a.same_shape(b)) throw input_error("add_inplace: shape mismatch");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

template <typename T>
void scale_inplace(DenseMatrix<T>& a, T s) {
    for (auto& v : a.data) v *= s;
}

template <typename T>
T frob_norm(const DenseMatrix<T>& a) {
    double acc = 0;
    for (const auto& v : a.data) acc += static_cast<double>(v) * static_cast<double>(v);
    return static_cast<T>(std::sqrt(acc));
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace vqgnn
