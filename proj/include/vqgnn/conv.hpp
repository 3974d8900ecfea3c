// Generalized graph convolution: a layer is sigma(sum_s C^(s) X W^(l,s)),
// where each support's convolution matrix C^(s) is either fixed (GCN,
// SAGE-Mean, GIN) or attention-valued on a fixed mask (GAT). This header
// builds the support matrices and runs the exact full-graph forward and
// backward passes; the blocked mini-batch approximation lives in
// approx_mp.hpp.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "vqgnn/common.hpp"
#include "vqgnn/dense.hpp"
#include "vqgnn/graph.hpp"
#include "vqgnn/sparse.hpp"

namespace vqgnn {

enum class ConvKind { GCN, SageMean, GIN, GAT };
enum class Nonlin { Identity, ReLU, LeakyReLU };

constexpr double kLeakySlope = 0.2;
constexpr double kAttnFloor = 1e-12;  // degenerate attention row threshold

template <typename T>
T nonlin_apply(Nonlin f, T x) {
    switch (f) {
        case Nonlin::Identity: return x;
        case Nonlin::ReLU: return x > T(0) ? x : T(0);
        case Nonlin::LeakyReLU: return x > T(0) ? x : static_cast<T>(kLeakySlope) * x;
    }
    return x;
}

// Subgradient at 0 is 0 for ReLU and the negative-side slope for LeakyReLU.
template <typename T>
T nonlin_deriv(Nonlin f, T pre) {
    switch (f) {
        case Nonlin::Identity: return T(1);
        case Nonlin::ReLU: return pre > T(0) ? T(1) : T(0);
        case Nonlin::LeakyReLU: return pre > T(0) ? T(1) : static_cast<T>(kLeakySlope);
    }
    return T(1);
}

struct ConvSpec {
    ConvKind kind = ConvKind::GCN;
    std::size_t heads = 1;         // GAT only: one support per head
    double lipschitz_bound = 1.0;  // GAT: projection radius for a and W rows
    double score_clamp = 10.0;     // GAT: pre-exp scores clamped to [-B, B]

    std::size_t num_supports() const {
        switch (kind) {
            case ConvKind::GCN: return 1;
            case ConvKind::SageMean: return 2;
            case ConvKind::GIN: return 2;
            case ConvKind::GAT: return heads;
        }
        return 1;
    }
    bool learnable() const { return kind == ConvKind::GAT; }

    void validate() const {
        if (kind == ConvKind::GAT) {
            if (heads < 1) throw config_error("conv: GAT needs at least one head");
            if (lipschitz_bound <= 0) throw config_error("conv: Lipschitz bound must be positive");
        }
    }
};

template <typename T>
struct LayerWeights {
    // One weight matrix per support. GIN's two supports share a single matrix.
    std::vector<DenseMatrix<T>> w;
    // GAT: per-head attention vector of length 2*f_out.
    std::vector<std::vector<T>> att;
    T gin_eps = T(0);

    std::size_t f_in() const { return w.front().rows; }
    std::size_t f_out() const { return w.front().cols; }

    const DenseMatrix<T>& support_w(const ConvSpec& spec, std::size_t s) const {
        return spec.kind == ConvKind::GIN ? w[0] : w[s];
    }
    DenseMatrix<T>& support_w(const ConvSpec& spec, std::size_t s) {
        return spec.kind == ConvKind::GIN ? w[0] : w[s];
    }
};

// Gradients mirror LayerWeights shape-for-shape.
template <typename T>
struct GradWeights {
    std::vector<DenseMatrix<T>> w;
    std::vector<std::vector<T>> att;
    T gin_eps = T(0);

    static GradWeights zeros_like(const LayerWeights<T>& lw) {
        GradWeights g;
        for (const auto& m : lw.w) g.w.emplace_back(m.rows, m.cols);
        for (const auto& a : lw.att) g.att.emplace_back(a.size(), T(0));
        return g;
    }
};

template <typename T>
LayerWeights<T> make_layer_weights(const ConvSpec& spec, std::size_t f_in, std::size_t f_out,
                                   Rng& rng) {
    spec.validate();
    LayerWeights<T> lw;
    const std::size_t mats = spec.kind == ConvKind::GIN ? 1 : spec.num_supports();
    const double limit = std::sqrt(6.0 / static_cast<double>(f_in + f_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t s = 0; s < mats; ++s) {
        DenseMatrix<T> m(f_in, f_out);
        for (auto& v : m.data) v = static_cast<T>(dist(rng));
        lw.w.push_back(std::move(m));
    }
    if (spec.kind == ConvKind::GAT) {
        std::uniform_real_distribution<double> adist(-0.5, 0.5);
        for (std::size_t h = 0; h < spec.heads; ++h) {
            std::vector<T> a(2 * f_out);
            for (auto& v : a) v = static_cast<T>(adist(rng));
            lw.att.push_back(std::move(a));
        }
    }
    return lw;
}

// Fixed convolution matrices per kind. GAT returns its mask (A + I, binary)
// and GIN's (1 + eps) factor on the identity support is applied at forward
// time so the cached matrix never changes.
template <typename T>
std::vector<CsrMatrix<T>> build_fixed_convs(const Graph& g, const ConvSpec& spec) {
    spec.validate();
    auto a = g.adjacency<T>();
    std::vector<T> deg(g.n, T(0));
    for (std::size_t r = 0; r < g.n; ++r)
        for (std::size_t p = a.row_begin(r); p < a.row_end(r); ++p) deg[r] += a.values[p];

    switch (spec.kind) {
        case ConvKind::GCN: {
            // C = D~^{-1/2} (A + I) D~^{-1/2}, D~ = D + I
            std::vector<std::tuple<Index, Index, T>> trip;
            trip.reserve(a.nnz() + g.n);
            std::vector<T> dinv(g.n);
            for (std::size_t i = 0; i < g.n; ++i) dinv[i] = T(1) / std::sqrt(deg[i] + T(1));
            for (std::size_t r = 0; r < g.n; ++r)
                for (std::size_t p = a.row_begin(r); p < a.row_end(r); ++p)
                    trip.push_back({static_cast<Index>(r), a.indices[p],
                                    a.values[p] * dinv[r] * dinv[a.indices[p]]});
            for (std::size_t i = 0; i < g.n; ++i)
                trip.push_back({static_cast<Index>(i), static_cast<Index>(i), dinv[i] * dinv[i]});
            return {csr_from_triplets<T>(g.n, g.n, std::move(trip))};
        }
        case ConvKind::SageMean: {
            // [I, D^{-1} A]; rows of degree 0 stay all-zero
            std::vector<std::tuple<Index, Index, T>> trip;
            trip.reserve(a.nnz());
            for (std::size_t r = 0; r < g.n; ++r) {
                if (deg[r] == T(0)) continue;
                for (std::size_t p = a.row_begin(r); p < a.row_end(r); ++p)
                    trip.push_back({static_cast<Index>(r), a.indices[p], a.values[p] / deg[r]});
            }
            return {csr_identity<T>(g.n), csr_from_triplets<T>(g.n, g.n, std::move(trip))};
        }
        case ConvKind::GIN:
            return {a, csr_identity<T>(g.n)};
        case ConvKind::GAT: {
            // per-head mask: A + I with entries clipped to 1
            std::vector<std::tuple<Index, Index, T>> trip;
            trip.reserve(a.nnz() + g.n);
            for (std::size_t r = 0; r < g.n; ++r)
                for (std::size_t p = a.row_begin(r); p < a.row_end(r); ++p)
                    trip.push_back({static_cast<Index>(r), a.indices[p], T(1)});
            for (std::size_t i = 0; i < g.n; ++i)
                trip.push_back({static_cast<Index>(i), static_cast<Index>(i), T(1)});
            auto mask = csr_from_triplets<T>(g.n, g.n, std::move(trip));
            for (auto& v : mask.values) v = T(1);
            std::vector<CsrMatrix<T>> out(spec.heads, mask);
            return out;
        }
    }
    throw config_error("build_fixed_convs: unsupported convolution kind");
}

// h(X_i, X_j) = exp(LeakyReLU((X_i W || X_j W) . a)), scores clamped to
// [-B, B] before exp so the learnable convolution keeps a finite Lipschitz
// constant.
template <typename T>
struct GatScore {
    T pre;      // (H_i || H_j) . a, before LeakyReLU
    T act;      // after LeakyReLU, before clamp
    T score;    // exp(clamped act), strictly positive
    bool clamped;
};

template <typename T>
GatScore<T> gat_score_pair(const T* hi, const T* hj, const std::vector<T>& a, std::size_t f_out,
                           double clamp_radius) {
    T pre = T(0);
    for (std::size_t c = 0; c < f_out; ++c) pre += hi[c] * a[c] + hj[c] * a[f_out + c];
    const T act = nonlin_apply(Nonlin::LeakyReLU, pre);
    const T hi_clip = static_cast<T>(clamp_radius);
    const T clipped = std::clamp(act, -hi_clip, hi_clip);
    return {pre, act, std::exp(clipped), clipped != act};
}

// Batch form used by tests and by the verify module: rows of xi pair with
// rows of xj.
template <typename T>
std::vector<T> gat_scores(const DenseMatrix<T>& xi, const DenseMatrix<T>& xj,
                          const DenseMatrix<T>& w, const std::vector<T>& a,
                          double clamp_radius = 10.0) {
    if (xi.cols != w.rows || xj.cols != w.rows) throw input_error("gat_scores: feature width mismatch");
    if (xi.rows != xj.rows) throw input_error("gat_scores: row counts differ");
    if (a.size() != 2 * w.cols) throw input_error("gat_scores: attention vector length mismatch");
    if (!all_finite(xi.data.data(), xi.data.size()) || !all_finite(xj.data.data(), xj.data.size()))
        throw numeric_error("gat_scores: non-finite input");
    auto hi = matmul(xi, w);
    auto hj = matmul(xj, w);
    std::vector<T> out(xi.rows);
    for (std::size_t r = 0; r < xi.rows; ++r)
        out[r] = gat_score_pair(hi.row(r), hj.row(r), a, w.cols, clamp_radius).score;
    return out;
}

// Everything full_backward needs from the matching forward call.
template <typename T>
struct LayerCache {
    DenseMatrix<T> x;              // layer input
    DenseMatrix<T> z;              // pre-activation sigma^-1(X^{l+1})
    Nonlin sigma = Nonlin::Identity;
    bool row_normalize = false;
    std::vector<DenseMatrix<T>> agg;  // per support: C^(s) X (GIN: single combined)
    // GAT only, per head:
    std::vector<DenseMatrix<T>> h;         // X W^(s)
    std::vector<std::vector<T>> edge_pre;  // pre-LeakyReLU score per mask nnz
    std::vector<std::vector<T>> edge_u;    // unnormalized exp score per mask nnz
    std::vector<std::vector<T>> row_sum;   // per-row score totals
};

// Row-wise normalization decoupled from message passing: input rows carry an
// extra trailing column of aggregated ones, output divides it out.
template <typename T>
DenseMatrix<T> row_normalize_via_padding(const DenseMatrix<T>& padded) {
    if (padded.cols < 2) throw input_error("row_normalize_via_padding: need at least one feature column");
    DenseMatrix<T> out(padded.rows, padded.cols - 1);
    for (std::size_t r = 0; r < padded.rows; ++r) {
        const T denom = padded.at(r, padded.cols - 1);
        if (!(denom > static_cast<T>(kAttnFloor)))
            throw numeric_error("row_normalize_via_padding: degenerate attention row");
        for (std::size_t c = 0; c + 1 < padded.cols; ++c) out.at(r, c) = padded.at(r, c) / denom;
    }
    return out;
}

// Exact full-graph layer: X_next = sigma(sum_s C^(s) X W^(l,s)).
// For GAT, convs holds the per-head mask and row_normalize selects between
// attention rows normalized to sum 1 (the model) and raw exponential scores
// (used by the error-bound certificates).
template <typename T>
DenseMatrix<T> full_forward(const ConvSpec& spec, const std::vector<CsrMatrix<T>>& convs,
                            const LayerWeights<T>& weights, const DenseMatrix<T>& x, Nonlin sigma,
                            bool row_normalize, LayerCache<T>* cache_out = nullptr) {
    if (convs.size() != spec.num_supports()) throw config_error("full_forward: support count mismatch");
    if (x.cols != weights.f_in()) throw input_error("full_forward: feature width mismatch");
    const std::size_t n = x.rows;
    const std::size_t f_out = weights.f_out();

    LayerCache<T> cache;
    cache.x = x;
    cache.sigma = sigma;
    cache.row_normalize = row_normalize;
    DenseMatrix<T> z(n, f_out);

    switch (spec.kind) {
        case ConvKind::GCN: {
            cache.agg.push_back(spmm(convs[0], x));
            z = matmul(cache.agg[0], weights.w[0]);
            break;
        }
        case ConvKind::SageMean: {
            cache.agg.push_back(x);
            cache.agg.push_back(spmm(convs[1], x));
            z = matmul(cache.agg[0], weights.w[0]);
            add_inplace(z, matmul(cache.agg[1], weights.w[1]));
            break;
        }
        case ConvKind::GIN: {
            // (A X + (1 + eps) X) W, one shared W
            DenseMatrix<T> combined = spmm(convs[0], x);
            const T scale = T(1) + weights.gin_eps;
            for (std::size_t i = 0; i < combined.data.size(); ++i)
                combined.data[i] += scale * x.data[i];
            cache.agg.push_back(std::move(combined));
            z = matmul(cache.agg[0], weights.w[0]);
            break;
        }
        case ConvKind::GAT: {
            const T inv_heads = T(1) / static_cast<T>(spec.heads);
            for (std::size_t s = 0; s < spec.heads; ++s) {
                const auto& mask = convs[s];
                auto h = matmul(x, weights.w[s]);
                std::vector<T> pre(mask.nnz()), u(mask.nnz()), rowsum(n, T(0));
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t p = mask.row_begin(i); p < mask.row_end(i); ++p) {
                        auto sc = gat_score_pair(h.row(i), h.row(mask.indices[p]), weights.att[s],
                                                 f_out, spec.score_clamp);
                        pre[p] = sc.pre;
                        u[p] = sc.score;
                        rowsum[i] += sc.score;
                    }
                }
                DenseMatrix<T> agg(n, x.cols);
                for (std::size_t i = 0; i < n; ++i) {
                    T denom = T(1);
                    if (row_normalize) {
                        denom = rowsum[i];
                        if (!(denom > static_cast<T>(kAttnFloor)) &&
                            mask.row_end(i) > mask.row_begin(i))
                            throw numeric_error("full_forward: degenerate attention row");
                    }
                    T* arow = agg.row(i);
                    for (std::size_t p = mask.row_begin(i); p < mask.row_end(i); ++p) {
                        const T coef = u[p] / denom;
                        const T* xrow = x.row(mask.indices[p]);
                        for (std::size_t c = 0; c < x.cols; ++c) arow[c] += coef * xrow[c];
                    }
                }
                auto zs = matmul(agg, weights.w[s]);
                scale_inplace(zs, inv_heads);
                add_inplace(z, zs);
                cache.agg.push_back(std::move(agg));
                cache.h.push_back(std::move(h));
                cache.edge_pre.push_back(std::move(pre));
                cache.edge_u.push_back(std::move(u));
                cache.row_sum.push_back(std::move(rowsum));
            }
            break;
        }
    }

    DenseMatrix<T> out(n, f_out);
    for (std::size_t i = 0; i < z.data.size(); ++i) out.data[i] = nonlin_apply(sigma, z.data[i]);
    cache.z = std::move(z);
    if (cache_out) *cache_out = std::move(cache);
    return out;
}

// Closed-form backward of full_forward. grad_x is the full gradient,
// including GAT's attention-score paths; grad_w covers W, attention vectors,
// and GIN's eps.
template <typename T>
DenseMatrix<T> full_backward(const ConvSpec& spec, const std::vector<CsrMatrix<T>>& convs,
                             const LayerWeights<T>& weights, const DenseMatrix<T>& grad_next,
                             const LayerCache<T>& cache, GradWeights<T>& grad_w) {
    if (cache.agg.empty()) throw state_error("full_backward: cache missing (run full_forward first)");
    if (!grad_next.same_shape(cache.z)) throw input_error("full_backward: gradient shape mismatch");
    const std::size_t n = cache.x.rows;

    // back through the non-linearity
    DenseMatrix<T> g(grad_next.rows, grad_next.cols);
    for (std::size_t i = 0; i < g.data.size(); ++i)
        g.data[i] = grad_next.data[i] * nonlin_deriv(cache.sigma, cache.z.data[i]);

    DenseMatrix<T> grad_x(cache.x.rows, cache.x.cols);
    switch (spec.kind) {
        case ConvKind::GCN: {
            add_inplace(grad_w.w[0], matmul_at_b(cache.agg[0], g));
            grad_x = spmm(transpose(convs[0]), matmul_a_bt(g, weights.w[0]));
            break;
        }
        case ConvKind::SageMean: {
            add_inplace(grad_w.w[0], matmul_at_b(cache.agg[0], g));
            add_inplace(grad_w.w[1], matmul_at_b(cache.agg[1], g));
            grad_x = matmul_a_bt(g, weights.w[0]);
            add_inplace(grad_x, spmm(transpose(convs[1]), matmul_a_bt(g, weights.w[1])));
            break;
        }
        case ConvKind::GIN: {
            add_inplace(grad_w.w[0], matmul_at_b(cache.agg[0], g));
            auto gwt = matmul_a_bt(g, weights.w[0]);
            grad_x = spmm(transpose(convs[0]), gwt);
            const T scale = T(1) + weights.gin_eps;
            for (std::size_t i = 0; i < grad_x.data.size(); ++i)
                grad_x.data[i] += scale * gwt.data[i];
            // d/d eps of (1+eps) X W: <G, X W>
            auto xw = matmul(cache.x, weights.w[0]);
            T geps = T(0);
            for (std::size_t i = 0; i < xw.data.size(); ++i) geps += g.data[i] * xw.data[i];
            grad_w.gin_eps += geps;
            break;
        }
        case ConvKind::GAT: {
            const T inv_heads = T(1) / static_cast<T>(spec.heads);
            const std::size_t f_out = weights.f_out();
            for (std::size_t s = 0; s < spec.heads; ++s) {
                const auto& mask = convs[s];
                const auto& u = cache.edge_u[s];
                const auto& pre = cache.edge_pre[s];
                const auto& rowsum = cache.row_sum[s];
                const auto& h = cache.h[s];
                const auto& p_agg = cache.agg[s];

                {
                    auto gw = matmul_at_b(p_agg, g);
                    scale_inplace(gw, inv_heads);
                    add_inplace(grad_w.w[s], gw);
                }
                auto grad_p = matmul_a_bt(g, weights.w[s]);
                scale_inplace(grad_p, inv_heads);

                // <grad_p_i, p_agg_i> per row, used by the normalization chain
                std::vector<T> dpp(n, T(0));
                if (cache.row_normalize)
                    for (std::size_t i = 0; i < n; ++i)
                        dpp[i] = dot(grad_p.row(i), p_agg.row(i), cache.x.cols);

                DenseMatrix<T> grad_h(n, f_out);
                const auto& a = weights.att[s];
                for (std::size_t i = 0; i < n; ++i) {
                    const T* gp_row = grad_p.row(i);
                    for (std::size_t p = mask.row_begin(i); p < mask.row_end(i); ++p) {
                        const Index j = mask.indices[p];
                        // content path
                        const T coef = cache.row_normalize ? u[p] / rowsum[i] : u[p];
                        T* gx_row = grad_x.row(j);
                        for (std::size_t c = 0; c < cache.x.cols; ++c) gx_row[c] += coef * gp_row[c];
                        // score path
                        T g_u = dot(gp_row, cache.x.row(j), cache.x.cols);
                        if (cache.row_normalize) g_u = (g_u - dpp[i]) / rowsum[i];
                        const T act = nonlin_apply(Nonlin::LeakyReLU, pre[p]);
                        const bool clamped = std::abs(static_cast<double>(act)) > spec.score_clamp;
                        if (clamped) continue;
                        const T g_pre =
                            g_u * u[p] * nonlin_deriv(Nonlin::LeakyReLU, pre[p]);
                        for (std::size_t c = 0; c < f_out; ++c) {
                            grad_w.att[s][c] += g_pre * h.at(i, c);
                            grad_w.att[s][f_out + c] += g_pre * h.at(j, c);
                            grad_h.at(i, c) += g_pre * a[c];
                            grad_h.at(j, c) += g_pre * a[f_out + c];
                        }
                    }
                }
                add_inplace(grad_x, matmul_a_bt(grad_h, weights.w[s]));
                add_inplace(grad_w.w[s], matmul_at_b(cache.x, grad_h));
            }
            break;
        }
    }
    return grad_x;
}

// Hard projection keeping ||a||_2 <= bound and every W row 2-norm <= bound;
// applied after each optimizer step when training GAT so Lip(h) stays finite.
template <typename T>
void lipschitz_regularize(LayerWeights<T>& weights, double bound) {
    if (bound <= 0) throw config_error("lipschitz_regularize: bound must be positive");
    for (auto& a : weights.att) {
        double norm = 0;
        for (const auto& v : a) norm += static_cast<double>(v) * static_cast<double>(v);
        norm = std::sqrt(norm);
        if (norm > bound) {
            const T s = static_cast<T>(bound / norm);
            for (auto& v : a) v *= s;
        }
    }
    for (auto& w : weights.w) {
        for (std::size_t r = 0; r < w.rows; ++r) {
            double norm = 0;
            for (std::size_t c = 0; c < w.cols; ++c)
                norm += static_cast<double>(w.at(r, c)) * static_cast<double>(w.at(r, c));
            norm = std::sqrt(norm);
            if (norm > bound) {
                const T s = static_cast<T>(bound / norm);
                for (std::size_t c = 0; c < w.cols; ++c) w.at(r, c) *= s;
            }
        }
    }
}

}  // namespace vqgnn
