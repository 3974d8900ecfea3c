// Product vector quantization of concatenated feature-and-gradient vectors.
// Codewords are maintained as exponential moving averages of whitened
// mini-batch inputs (online k-means); whitening statistics are themselves
// EMA-smoothed and undone when codewords are read back.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "vqgnn/common.hpp"
#include "vqgnn/dense.hpp"

namespace vqgnn {

constexpr double kVarFloor = 1e-5;   // whitening division floor
constexpr double kEtaFloor = 1e-3;   // below this a cluster counts as starving

template <typename T>
struct WhitenStats {
    std::vector<T> mean;
    std::vector<T> var;

    static WhitenStats from_rows(const DenseMatrix<T>& v) {
        WhitenStats s;
        s.mean.assign(v.cols, T(0));
        s.var.assign(v.cols, T(0));
        for (std::size_t r = 0; r < v.rows; ++r)
            for (std::size_t c = 0; c < v.cols; ++c) s.mean[c] += v.at(r, c);
        for (auto& m : s.mean) m /= static_cast<T>(v.rows);
        for (std::size_t r = 0; r < v.rows; ++r)
            for (std::size_t c = 0; c < v.cols; ++c) {
                const T d = v.at(r, c) - s.mean[c];
                s.var[c] += d * d;
            }
        for (auto& vv : s.var) vv /= static_cast<T>(v.rows);
        return s;
    }
};

template <typename T>
DenseMatrix<T> whiten_with(const DenseMatrix<T>& v, const WhitenStats<T>& stats) {
    DenseMatrix<T> out(v.rows, v.cols);
    for (std::size_t r = 0; r < v.rows; ++r)
        for (std::size_t c = 0; c < v.cols; ++c)
            out.at(r, c) = (v.at(r, c) - stats.mean[c]) /
                           std::sqrt(stats.var[c] + static_cast<T>(kVarFloor));
    return out;
}

template <typename T>
DenseMatrix<T> unwhiten_with(const DenseMatrix<T>& v, const WhitenStats<T>& stats) {
    DenseMatrix<T> out(v.rows, v.cols);
    for (std::size_t r = 0; r < v.rows; ++r)
        for (std::size_t c = 0; c < v.cols; ++c)
            out.at(r, c) = v.at(r, c) * std::sqrt(stats.var[c] + static_cast<T>(kVarFloor)) +
                           stats.mean[c];
    return out;
}

// Whitens v by its own mini-batch moments and folds those moments into the
// smoothed statistics: s <- s*beta + batch*(1-beta).
template <typename T>
DenseMatrix<T> whiten(const DenseMatrix<T>& v, WhitenStats<T>& stats, T beta) {
    if (v.rows == 0) throw input_error("whiten: empty input");
    auto batch = WhitenStats<T>::from_rows(v);
    auto out = whiten_with(v, batch);
    for (std::size_t c = 0; c < v.cols; ++c) {
        stats.mean[c] = stats.mean[c] * beta + batch.mean[c] * (T(1) - beta);
        stats.var[c] = stats.var[c] * beta + batch.var[c] * (T(1) - beta);
    }
    return out;
}

// One branch of the product quantizer.
template <typename T>
struct Codebook {
    DenseMatrix<T> codewords;  // k x f_prod, stored whitened
    std::vector<T> eta;        // EMA cluster sizes
    DenseMatrix<T> sums;       // EMA cluster vector sums
    WhitenStats<T> stats;      // smoothed mean / variance of raw inputs
    T gamma = T(0.9);
    T beta = T(0.9);

    std::size_t k() const { return codewords.rows; }
    std::size_t width() const { return codewords.cols; }

    DenseMatrix<T> unwhitened() const { return unwhiten_with(codewords, stats); }
};

// Per-layer codeword assignments, one index array per product-VQ branch.
struct AssignmentTable {
    std::vector<std::vector<Index>> branch;

    std::size_t num_branches() const { return branch.size(); }
    std::size_t n() const { return branch.empty() ? 0 : branch.front().size(); }
};

struct ProductVqConfig {
    std::size_t f_prod = 4;  // block width
    std::size_t k = 256;     // codewords per branch
    double gamma = 0.9;
    double beta = 0.9;

    std::size_t num_branches(std::size_t width) const {
        if (f_prod == 0) throw config_error("vq: f_prod must be >= 1");
        return (width + f_prod - 1) / f_prod;
    }
    void validate() const {
        if (f_prod < 1 || k < 1) throw config_error("vq: f_prod and k must be >= 1");
        if (gamma <= 0 || gamma >= 1 || beta <= 0 || beta >= 1)
            throw config_error("vq: decay rates must lie in (0, 1)");
    }
};

// Codewords drawn uniformly with replacement from the whitened sample; stats
// seeded from the sample moments. Deterministic given the seed.
template <typename T>
Codebook<T> init_codebook(const DenseMatrix<T>& sample, std::size_t k, std::uint64_t seed,
                          T gamma = T(0.9), T beta = T(0.9)) {
    if (sample.rows == 0) throw input_error("init_codebook: empty sample");
    Codebook<T> cb;
    cb.gamma = gamma;
    cb.beta = beta;
    cb.stats = WhitenStats<T>::from_rows(sample);
    auto whitened = whiten_with(sample, cb.stats);
    auto rng = make_rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, sample.rows - 1);
    cb.codewords = DenseMatrix<T>(k, sample.cols);
    for (std::size_t v = 0; v < k; ++v) {
        const std::size_t r = pick(rng);
        for (std::size_t c = 0; c < sample.cols; ++c) cb.codewords.at(v, c) = whitened.at(r, c);
    }
    cb.eta.assign(k, T(1));
    cb.sums = cb.codewords;
    return cb;
}

// Argmin over squared Euclidean distance; ties go to the lowest index.
template <typename T>
std::vector<Index> find_nearest(const DenseMatrix<T>& rows, const DenseMatrix<T>& codewords) {
    if (rows.cols != codewords.cols) throw input_error("find_nearest: width mismatch");
    std::vector<Index> out(rows.rows);
    for (std::size_t r = 0; r < rows.rows; ++r) {
        T best = std::numeric_limits<T>::max();
        Index arg = 0;
        for (std::size_t v = 0; v < codewords.rows; ++v) {
            T d = T(0);
            for (std::size_t c = 0; c < rows.cols; ++c) {
                const T diff = rows.at(r, c) - codewords.at(v, c);
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                arg = static_cast<Index>(v);
            }
        }
        out[r] = arg;
    }
    return out;
}

// EMA core: eta <- eta*gamma + counts*(1-gamma), sums <- sums*gamma +
// R^T Vbar * (1-gamma), codeword_v <- sums_v / eta_v. Starving clusters are
// reseeded to the batch vector farthest from its assigned codeword.
template <typename T>
void ema_update(Codebook<T>& cb, const DenseMatrix<T>& whitened_batch,
                const std::vector<Index>& assign) {
    const std::size_t k = cb.k();
    std::vector<T> counts(k, T(0));
    DenseMatrix<T> batch_sums(k, cb.width());
    for (std::size_t r = 0; r < whitened_batch.rows; ++r) {
        const Index v = assign[r];
        counts[v] += T(1);
        for (std::size_t c = 0; c < cb.width(); ++c)
            batch_sums.at(v, c) += whitened_batch.at(r, c);
    }
    const T g = cb.gamma;
    for (std::size_t v = 0; v < k; ++v) {
        cb.eta[v] = cb.eta[v] * g + counts[v] * (T(1) - g);
        for (std::size_t c = 0; c < cb.width(); ++c)
            cb.sums.at(v, c) = cb.sums.at(v, c) * g + batch_sums.at(v, c) * (T(1) - g);
    }
    std::size_t farthest = 0;
    T far_dist = T(-1);
    for (std::size_t r = 0; r < whitened_batch.rows; ++r) {
        T d = T(0);
        for (std::size_t c = 0; c < cb.width(); ++c) {
            const T diff = whitened_batch.at(r, c) - cb.codewords.at(assign[r], c);
            d += diff * diff;
        }
        if (d > far_dist) {
            far_dist = d;
            farthest = r;
        }
    }
    for (std::size_t v = 0; v < k; ++v) {
        if (cb.eta[v] >= static_cast<T>(kEtaFloor)) {
            for (std::size_t c = 0; c < cb.width(); ++c)
                cb.codewords.at(v, c) = cb.sums.at(v, c) / cb.eta[v];
        } else if (whitened_batch.rows > 0) {
            for (std::size_t c = 0; c < cb.width(); ++c) {
                cb.codewords.at(v, c) = whitened_batch.at(farthest, c);
                cb.sums.at(v, c) = whitened_batch.at(farthest, c);
            }
            cb.eta[v] = T(1);
        }
    }
}

// Full VQ update for one branch: whiten by batch moments, refresh smoothed
// stats, assign against the pre-move codewords, then run the EMA step.
template <typename T>
std::vector<Index> vq_update(Codebook<T>& cb, const DenseMatrix<T>& v_raw) {
    if (!all_finite(v_raw.data.data(), v_raw.data.size()))
        throw numeric_error("vq_update: non-finite input");
    auto whitened = whiten(v_raw, cb.stats, cb.beta);
    auto assign = find_nearest(whitened, cb.codewords);
    ema_update(cb, whitened, assign);
    return assign;
}

// epsilon = ||X - R X~||_F / ||X||_F in raw (unwhitened) space.
template <typename T>
double relative_error(const DenseMatrix<T>& x, const std::vector<Index>& assign,
                      const DenseMatrix<T>& codewords_raw) {
    const double denom = static_cast<double>(frob_norm(x));
    if (denom == 0.0) throw input_error("relative_error: all-zero input matrix");
    double num = 0;
    for (std::size_t r = 0; r < x.rows; ++r) {
        const T* crow = codewords_raw.row(assign[r]);
        for (std::size_t c = 0; c < x.cols; ++c) {
            const double d = static_cast<double>(x.at(r, c)) - static_cast<double>(crow[c]);
            num += d * d;
        }
    }
    return std::sqrt(num) / denom;
}

// Contiguous f_prod-wide column blocks of V; the last block is zero-padded.
template <typename T>
std::vector<DenseMatrix<T>> split_blocks(const DenseMatrix<T>& v, const ProductVqConfig& cfg) {
    const std::size_t nb = cfg.num_branches(v.cols);
    std::vector<DenseMatrix<T>> out;
    out.reserve(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        DenseMatrix<T> block(v.rows, cfg.f_prod);
        const std::size_t c0 = b * cfg.f_prod;
        for (std::size_t r = 0; r < v.rows; ++r)
            for (std::size_t c = c0; c < std::min(v.cols, c0 + cfg.f_prod); ++c)
                block.at(r, c - c0) = v.at(r, c);
        out.push_back(std::move(block));
    }
    return out;
}

template <typename T>
DenseMatrix<T> merge_blocks(const std::vector<DenseMatrix<T>>& blocks, std::size_t width) {
    if (blocks.empty()) return {};
    DenseMatrix<T> out(blocks.front().rows, width);
    const std::size_t f_prod = blocks.front().cols;
    for (std::size_t b = 0; b < blocks.size(); ++b)
        for (std::size_t r = 0; r < out.rows; ++r)
            for (std::size_t c = 0; c < f_prod && b * f_prod + c < width; ++c)
                out.at(r, b * f_prod + c) = blocks[b].at(r, c);
    return out;
}

}  // namespace vqgnn
