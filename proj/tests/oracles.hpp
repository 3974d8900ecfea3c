// Independent reference implementations used only by tests. Everything here
// is deliberately naive (dense buffers, per-node loops) so it cannot share a
// failure mode with the CSR / blocked production paths.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "vqgnn/common.hpp"
#include "vqgnn/dense.hpp"
#include "vqgnn/sparse.hpp"

namespace oracle {

using vqgnn::DenseMatrix;
using vqgnn::Index;

// Plain dense matmul, accumulate in the scalar type, no skipping.
template <typename T>
DenseMatrix<T> matmul(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
    DenseMatrix<T> out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.cols; ++j) {
            T acc = T(0);
            for (std::size_t k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(k, j);
            out.at(i, j) = acc;
        }
    return out;
}

template <typename T>
DenseMatrix<T> row_slice(const DenseMatrix<T>& m, const std::vector<Index>& idx) {
    DenseMatrix<T> out(idx.size(), m.cols);
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t c = 0; c < m.cols; ++c) out.at(r, c) = m.at(idx[r], c);
    return out;
}

template <typename T>
DenseMatrix<T> transpose(const DenseMatrix<T>& m) {
    DenseMatrix<T> out(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) out.at(j, i) = m.at(i, j);
    return out;
}

template <typename T>
double max_abs_diff(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
    double worst = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return worst;
}

template <typename T>
double rel_frob_diff(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        num += d * d;
        den += static_cast<double>(b.data[i]) * static_cast<double>(b.data[i]);
    }
    if (den == 0) return std::sqrt(num);
    return std::sqrt(num / den);
}

// Random dense matrix with entries uniform in [-1, 1].
template <typename T>
DenseMatrix<T> random_dense(std::size_t rows, std::size_t cols, vqgnn::Rng& rng) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    DenseMatrix<T> m(rows, cols);
    for (auto& v : m.data) v = static_cast<T>(dist(rng));
    return m;
}

// Random sparse matrix in CSR form with approximately the given density.
template <typename T>
vqgnn::CsrMatrix<T> random_csr(std::size_t rows, std::size_t cols, double density,
                               vqgnn::Rng& rng) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_real_distribution<double> val(-1.0, 1.0);
    std::vector<std::tuple<Index, Index, T>> trip;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            if (coin(rng) < density)
                trip.push_back({static_cast<Index>(r), static_cast<Index>(c), static_cast<T>(val(rng))});
    return vqgnn::csr_from_triplets<T>(rows, cols, std::move(trip));
}

// Central finite differences of a scalar function with respect to one slot of
// a parameter buffer.
inline double central_diff(std::function<double(double)> f, double x0, double h) {
    return (f(x0 + h) - f(x0 - h)) / (2.0 * h);
}

}  // namespace oracle
