// Compressed sparse row matrices plus the slicing primitives used to cut
// per-mini-batch views out of full convolution matrices.
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vqgnn/common.hpp"
#include "vqgnn/dense.hpp"

namespace vqgnn {

using Index = std::uint32_t;

template <typename T>
struct CsrMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> indptr;  // rows+1 monotone offsets
    std::vector<Index> indices;       // column ids, strictly increasing per row
    std::vector<T> values;

    CsrMatrix() : indptr(1, 0) {}
    CsrMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), indptr(r + 1, 0) {}

    std::size_t nnz() const { return values.size(); }

    std::size_t row_begin(std::size_t r) const { return indptr[r]; }
    std::size_t row_end(std::size_t r) const { return indptr[r + 1]; }

    void validate() const {
        if (indptr.size() != rows + 1) throw input_error("csr: indptr length != rows+1");
        if (indptr.front() != 0) throw input_error("csr: indptr[0] != 0");
        if (indptr.back() != indices.size() || indices.size() != values.size())
            throw input_error("csr: offsets disagree with buffer lengths");
        for (std::size_t r = 0; r < rows; ++r) {
            if (indptr[r] > indptr[r + 1]) throw input_error("csr: indptr not monotone");
            for (std::size_t p = indptr[r]; p < indptr[r + 1]; ++p) {
                if (indices[p] >= cols) throw input_error("csr: column id out of range");
                if (p > indptr[r] && indices[p] <= indices[p - 1])
                    throw input_error("csr: columns not strictly increasing in row");
            }
        }
    }

    template <typename U>
    CsrMatrix<U> cast() const {
        CsrMatrix<U> out(rows, cols);
        out.indptr = indptr;
        out.indices = indices;
        out.values.resize(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<U>(values[i]);
        return out;
    }
};

// Builds a CSR matrix from (row, col, value) triplets; duplicates are summed.
template <typename T>
CsrMatrix<T> csr_from_triplets(std::size_t rows, std::size_t cols,
                               std::vector<std::tuple<Index, Index, T>> trip) {
    for (const auto& [r, c, v] : trip) {
        if (r >= rows || c >= cols) throw input_error("csr_from_triplets: index out of range");
        (void)v;
    }
    std::sort(trip.begin(), trip.end(), [](const auto& a, const auto& b) {
        return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
    });
    CsrMatrix<T> m(rows, cols);
    std::vector<std::size_t> counts(rows, 0);
    std::size_t i = 0;
    std::vector<std::pair<std::pair<Index, Index>, T>> merged;
    merged.reserve(trip.size());
    while (i < trip.size()) {
        auto [r, c, v] = trip[i++];
        while (i < trip.size() && std::get<0>(trip[i]) == r && std::get<1>(trip[i]) == c)
            v += std::get<2>(trip[i++]);
        merged.push_back({{r, c}, v});
        ++counts[r];
    }
    m.indices.reserve(merged.size());
    m.values.reserve(merged.size());
    for (std::size_t r = 0; r < rows; ++r) m.indptr[r + 1] = m.indptr[r] + counts[r];
    for (const auto& [rc, v] : merged) {
        m.indices.push_back(rc.second);
        m.values.push_back(v);
    }
    return m;
}

template <typename T>
CsrMatrix<T> csr_identity(std::size_t n) {
    CsrMatrix<T> m(n, n);
    m.indices.resize(n);
    m.values.assign(n, T(1));
    for (std::size_t i = 0; i < n; ++i) {
        m.indices[i] = static_cast<Index>(i);
        m.indptr[i + 1] = i + 1;
    }
    return m;
}

// Rows of the result are rows idx[0], idx[1], ... of m. Duplicates allowed,
// order preserved.
template <typename T>
CsrMatrix<T> row_slice(const CsrMatrix<T>& m, const std::vector<Index>& idx) {
    CsrMatrix<T> out(idx.size(), m.cols);
    std::size_t total = 0;
    for (Index r : idx) {
        if (r >= m.rows) throw input_error("row_slice: row index out of range");
        total += m.row_end(r) - m.row_begin(r);
    }
    out.indices.reserve(total);
    out.values.reserve(total);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const Index r = idx[i];
        for (std::size_t p = m.row_begin(r); p < m.row_end(r); ++p) {
            out.indices.push_back(m.indices[p]);
            out.values.push_back(m.values[p]);
        }
        out.indptr[i + 1] = out.values.size();
    }
    return out;
}

// Splits batch rows M_B into the exact intra-batch block C_in (dense b x b,
// C_in[r][c] = M_B[r][idx[c]]) and the out-of-batch remainder C_out (M_B with
// the idx columns removed structurally). Scattering C_in back over C_out
// reconstructs M_B exactly.
template <typename T>
std::pair<DenseMatrix<T>, CsrMatrix<T>> split_in_out(const CsrMatrix<T>& m_b,
                                                     const std::vector<Index>& idx) {
    {
        std::unordered_set<Index> seen(idx.begin(), idx.end());
        if (seen.size() != idx.size()) throw input_error("split_in_out: duplicate batch indices");
    }
    const std::size_t b = idx.size();
    if (m_b.rows != b) throw input_error("split_in_out: row count != batch size");
    std::vector<std::int64_t> col_to_batch(m_b.cols, -1);
    for (std::size_t c = 0; c < b; ++c) {
        if (idx[c] >= m_b.cols) throw input_error("split_in_out: batch index out of range");
        col_to_batch[idx[c]] = static_cast<std::int64_t>(c);
    }
    DenseMatrix<T> c_in(b, b);
    CsrMatrix<T> c_out(b, m_b.cols);
    for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t p = m_b.row_begin(r); p < m_b.row_end(r); ++p) {
            const Index j = m_b.indices[p];
            if (col_to_batch[j] >= 0) {
                c_in.at(r, static_cast<std::size_t>(col_to_batch[j])) = m_b.values[p];
            } else {
                c_out.indices.push_back(j);
                c_out.values.push_back(m_b.values[p]);
            }
        }
        c_out.indptr[r + 1] = c_out.values.size();
    }
    return {std::move(c_in), std::move(c_out)};
}

template <typename T>
DenseMatrix<T> spmm(const CsrMatrix<T>& m, const DenseMatrix<T>& x) {
    if (m.cols != x.rows) throw input_error("spmm: inner dimensions disagree");
    DenseMatrix<T> out(m.rows, x.cols);
    for (std::size_t r = 0; r < m.rows; ++r) {
        T* orow = out.row(r);
        for (std::size_t p = m.row_begin(r); p < m.row_end(r); ++p) {
            const T v = m.values[p];
            const T* xrow = x.row(m.indices[p]);
            for (std::size_t c = 0; c < x.cols; ++c) orow[c] += v * xrow[c];
        }
    }
    return out;
}

template <typename T>
CsrMatrix<T> transpose(const CsrMatrix<T>& m) {
    CsrMatrix<T> out(m.cols, m.rows);
    std::vector<std::size_t> counts(m.cols, 0);
    for (Index c : m.indices) ++counts[c];
    for (std::size_t c = 0; c < m.cols; ++c) out.indptr[c + 1] = out.indptr[c] + counts[c];
    out.indices.resize(m.nnz());
    out.values.resize(m.nnz());
    std::vector<std::size_t> cursor(out.indptr.begin(), out.indptr.end() - 1);
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t p = m.row_begin(r); p < m.row_end(r); ++p) {
            const std::size_t q = cursor[m.indices[p]]++;
            out.indices[q] = static_cast<Index>(r);
            out.values[q] = m.values[p];
        }
    }
    return out;
}

template <typename T>
T frob_norm(const CsrMatrix<T>& m) {
    double acc = 0;
    for (const auto& v : m.values) acc += static_cast<double>(v) * static_cast<double>(v);
    return static_cast<T>(std::sqrt(acc));
}

template <typename T>
DenseMatrix<T> to_dense(const CsrMatrix<T>& m) {
    DenseMatrix<T> out(m.rows, m.cols);
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t p = m.row_begin(r); p < m.row_end(r); ++p)
            out.at(r, m.indices[p]) += m.values[p];
    return out;
}

}  // namespace vqgnn
