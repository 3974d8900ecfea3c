// Node-classification head: softmax cross-entropy over a batch of logits.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "vqgnn/common.hpp"
#include "vqgnn/dense.hpp"

namespace vqgnn {

template <typename T>
struct LossResult {
    double loss = 0;
    DenseMatrix<T> grad;  // (softmax - onehot) / b
};

// Mean cross-entropy over the batch, log-sum-exp stabilized.
template <typename T>
LossResult<T> softmax_xent(const DenseMatrix<T>& logits, const std::vector<std::int64_t>& labels) {
    if (labels.size() != logits.rows) throw input_error("softmax_xent: label count mismatch");
    const std::size_t b = logits.rows, c = logits.cols;
    LossResult<T> res;
    res.grad = DenseMatrix<T>(b, c);
    double total = 0;
    for (std::size_t r = 0; r < b; ++r) {
        const auto y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw input_error("softmax_xent: label out of range");
        const T* row = logits.row(r);
        T hi = row[0];
        for (std::size_t j = 1; j < c; ++j) hi = std::max(hi, row[j]);
        double z = 0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - hi));
        const double logz = std::log(z) + static_cast<double>(hi);
        total += logz - static_cast<double>(row[y]);
        for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(static_cast<double>(row[j]) - logz);
            res.grad.at(r, j) = static_cast<T>((p - (static_cast<std::size_t>(y) == j ? 1.0 : 0.0)) /
                                               static_cast<double>(b));
        }
    }
    res.loss = total / static_cast<double>(b);
    return res;
}

template <typename T>
std::vector<std::int64_t> argmax_rows(const DenseMatrix<T>& logits) {
    std::vector<std::int64_t> out(logits.rows);
    for (std::size_t r = 0; r < logits.rows; ++r) {
        const T* row = logits.row(r);
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols; ++j)
            if (row[j] > row[best]) best = j;
        out[r] = static_cast<std::int64_t>(best);
    }
    return out;
}

}  // namespace vqgnn
