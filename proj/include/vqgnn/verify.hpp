// Verification harness: instance-wise certificates that the approximated
// message passing stays within the proven error bounds, finite-difference
// gradient checks, the sparse random-projection baseline, and the
// full-graph-equivalence suite. Everything here runs in 64-bit.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vqgnn/approx_mp.hpp"
#include "vqgnn/common.hpp"
#include "vqgnn/conv.hpp"
#include "vqgnn/dataset.hpp"
#include "vqgnn/dense.hpp"
#include "vqgnn/loss.hpp"
#include "vqgnn/sparse.hpp"
#include "vqgnn/vq.hpp"

namespace vqgnn {

constexpr double kBoundSlackTol = -1e-9;

struct BoundTrial {
    double eps = 0;    // VQ relative error driving the bound
    double lhs = 0;    // measured estimation error (Frobenius)
    double rhs = 0;    // explicit bound value
    double slack = 0;  // rhs - lhs
    bool pass = false;
};

struct BoundReport {
    std::string check;
    std::vector<BoundTrial> trials;

    std::size_t passed() const {
        std::size_t p = 0;
        for (const auto& t : trials) p += t.pass;
        return p;
    }
    bool all_pass() const { return passed() == trials.size(); }
};

namespace verify_detail {

inline Graph random_graph(std::size_t n, double p, Rng& rng) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::vector<std::pair<Index, Index>> edges;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (coin(rng) < p) edges.push_back({static_cast<Index>(i), static_cast<Index>(j)});
    return from_edge_list(std::move(edges), n, true);
}

inline DenseMatrix<double> random_dense(std::size_t r, std::size_t c, Rng& rng) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    DenseMatrix<double> m(r, c);
    for (auto& v : m.data) v = dist(rng);
    return m;
}

// k-codeword quantization of the rows of x: a few Lloyd rounds seeded from
// the rows themselves. Returns raw codewords and assignments.
struct Quantization {
    DenseMatrix<double> codewords;
    std::vector<Index> assign;
    double eps = 0;
};

inline Quantization quantize_rows(const DenseMatrix<double>& x, std::size_t k,
                                  std::uint64_t seed) {
    Quantization q;
    auto cb = init_codebook(x, k, seed, 1e-6, 0.5);  // tiny gamma: near-Lloyd updates
    for (int round = 0; round < 5; ++round) vq_update(cb, x);
    q.codewords = cb.unwhitened();
    q.assign = find_nearest(whiten_with(x, cb.stats), cb.codewords);
    q.eps = relative_error(x, q.assign, q.codewords);
    return q;
}

inline DenseMatrix<double> reconstruct(const Quantization& q, std::size_t rows) {
    DenseMatrix<double> out(rows, q.codewords.cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < q.codewords.cols; ++c)
            out.at(r, c) = q.codewords.at(q.assign[r], c);
    return out;
}

// Single-branch view over a feature-only or gradient-only quantization.
struct ViewHolder {
    AssignmentTable table;
    LayerVqView<double> view;
};

inline ViewHolder view_of(const Quantization& q, std::size_t feat_width, std::size_t grad_width) {
    ViewHolder h;
    h.table.branch.push_back(q.assign);
    h.view.raw.push_back(q.codewords);
    h.view.feat_width = feat_width;
    h.view.grad_width = grad_width;
    h.view.f_prod = q.codewords.cols;
    return h;
}

inline double frob_diff(const DenseMatrix<double>& a, const DenseMatrix<double>& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

// Lipschitz constant of the clamped attention score h as a function of the
// pair (X_i, X_j): exp on [-B, B] composed with LeakyReLU and the linear map
// with gradient (W a1, W a2).
inline double gat_lip_h(const LayerWeights<double>& w, std::size_t head, double clamp) {
    const std::size_t f_out = w.f_out();
    std::vector<double> wa1(w.f_in(), 0.0), wa2(w.f_in(), 0.0);
    for (std::size_t r = 0; r < w.f_in(); ++r)
        for (std::size_t c = 0; c < f_out; ++c) {
            wa1[r] += w.w[head].at(r, c) * w.att[head][c];
            wa2[r] += w.w[head].at(r, c) * w.att[head][f_out + c];
        }
    double rho = 0;
    for (double v : wa1) rho += v * v;
    for (double v : wa2) rho += v * v;
    return std::exp(clamp) * std::sqrt(rho);
}

}  // namespace verify_detail

// Instance-wise certificate for the forward-feature error bound on fixed
// convolutions: the implemented estimator keeps intra-batch messages exact,
// so its error is bounded by eps * Lip(sigma) * ||C_B||_F ||X||_F ||W||_F
// summed over supports.
inline BoundReport check_forward_bound(std::size_t trials, std::uint64_t seed,
                                       const std::vector<std::size_t>& ks = {2, 4, 8},
                                       std::size_t n_max = 32) {
    BoundReport report;
    report.check = "forward_fixed";
    const ConvKind kinds[3] = {ConvKind::GCN, ConvKind::SageMean, ConvKind::GIN};
    for (std::size_t t = 0; t < trials; ++t) {
        auto rng = make_rng(seed, 1000 + t);
        std::uniform_int_distribution<std::size_t> nd(8, n_max);
        const std::size_t n = nd(rng);
        const std::size_t k = ks[t % ks.size()];
        ConvSpec spec{kinds[t % 3]};
        Graph g = verify_detail::random_graph(n, 0.3, rng);
        auto convs = build_fixed_convs<double>(g, spec);
        auto w = make_layer_weights<double>(spec, 4, 3, rng);
        if (spec.kind == ConvKind::GIN) w.gin_eps = 0.25;
        auto x = verify_detail::random_dense(n, 4, rng);
        const Nonlin sigma = t % 2 == 0 ? Nonlin::ReLU : Nonlin::LeakyReLU;

        auto q = verify_detail::quantize_rows(x, k, seed + t);
        auto holder = verify_detail::view_of(q, 4, 3);
        holder.view.table = &holder.table;

        MiniBatch batch;
        for (Index i = 0; i < n; i += 2) batch.indices.push_back(i);
        std::vector<MessageBlock<double>> blocks;
        for (const auto& c : convs)
            blocks.push_back(assemble_block(row_slice(c, batch.indices),
                                            row_slice(transpose(c), batch.indices), holder.view,
                                            batch));
        DenseMatrix<double> x_b(batch.size(), 4);
        for (std::size_t r = 0; r < batch.size(); ++r)
            for (std::size_t c = 0; c < 4; ++c) x_b.at(r, c) = x.at(batch.indices[r], c);
        auto approx = approx_forward(spec, blocks, holder.view, w, x_b, sigma);
        auto exact_full = full_forward(spec, convs, w, x, sigma, false);
        DenseMatrix<double> exact_b(batch.size(), 3);
        for (std::size_t r = 0; r < batch.size(); ++r)
            for (std::size_t c = 0; c < 3; ++c) exact_b.at(r, c) = exact_full.at(batch.indices[r], c);

        BoundTrial trial;
        trial.eps = q.eps;
        trial.lhs = verify_detail::frob_diff(approx, exact_b);
        trial.rhs = 0;
        for (std::size_t s = 0; s < convs.size(); ++s) {
            auto c_b = row_slice(convs[s], batch.indices);
            double wnorm = static_cast<double>(frob_norm(w.support_w(spec, s)));
            double cnorm = static_cast<double>(frob_norm(c_b));
            if (spec.kind == ConvKind::GIN && s == 1) cnorm *= std::abs(1.0 + w.gin_eps);
            trial.rhs += q.eps * cnorm * static_cast<double>(frob_norm(x)) * wnorm;
        }
        trial.slack = trial.rhs - trial.lhs;
        trial.pass = trial.slack >= kBoundSlackTol;
        report.trials.push_back(trial);
    }
    return report;
}

// Backward analogue: gradient codewords replace out-of-batch gradient rows;
// the certificate uses the gradient-half VQ error and sigma'_max = 1.
inline BoundReport check_backward_bound(std::size_t trials, std::uint64_t seed,
                                        const std::vector<std::size_t>& ks = {2, 4, 8},
                                        std::size_t n_max = 32) {
    BoundReport report;
    report.check = "backward_fixed";
    const ConvKind kinds[3] = {ConvKind::GCN, ConvKind::SageMean, ConvKind::GIN};
    for (std::size_t t = 0; t < trials; ++t) {
        auto rng = make_rng(seed, 5000 + t);
        std::uniform_int_distribution<std::size_t> nd(8, n_max);
        const std::size_t n = nd(rng);
        const std::size_t k = ks[t % ks.size()];
        ConvSpec spec{kinds[t % 3]};
        Graph g = verify_detail::random_graph(n, 0.3, rng);
        auto convs = build_fixed_convs<double>(g, spec);
        auto w = make_layer_weights<double>(spec, 4, 3, rng);
        auto x = verify_detail::random_dense(n, 4, rng);
        auto grad_next = verify_detail::random_dense(n, 3, rng);
        const Nonlin sigma = t % 2 == 0 ? Nonlin::ReLU : Nonlin::Identity;

        LayerCache<double> cache;
        full_forward(spec, convs, w, x, sigma, false, &cache);
        auto gw = GradWeights<double>::zeros_like(w);
        auto gx_full = full_backward(spec, convs, w, grad_next, cache, gw);
        DenseMatrix<double> g_post(n, 3);
        for (std::size_t i = 0; i < g_post.data.size(); ++i)
            g_post.data[i] = grad_next.data[i] * nonlin_deriv(sigma, cache.z.data[i]);

        auto q = verify_detail::quantize_rows(g_post, k, seed + 31 * t);
        auto holder = verify_detail::view_of(q, 0, 3);
        holder.view.table = &holder.table;

        MiniBatch batch;
        for (Index i = 0; i < n; i += 2) batch.indices.push_back(i);
        const std::size_t b = batch.size();

        // estimator: (C^T)_in G_B + (C~^T)_out G~, then W^T, per support
        DenseMatrix<double> est(b, 4);
        for (std::size_t s = 0; s < convs.size(); ++s) {
            auto ct_b = row_slice(transpose(convs[s]), batch.indices);
            auto blocks = assemble_block(ct_b, row_slice(convs[s], batch.indices), holder.view,
                                         batch);
            // here blocks.c_in is (C^T)_in over batch rows and blocks.out_blocks
            // bins (C^T)_out; gradient columns live in the single branch
            DenseMatrix<double> tmp(b, 3);
            for (std::size_t r = 0; r < b; ++r) {
                for (const auto& [c, val] : blocks.c_in.row[r]) {
                    for (std::size_t cc = 0; cc < 3; ++cc)
                        tmp.at(r, cc) += val * g_post.at(batch.indices[c], cc);
                }
                for (const auto& [v, val] : blocks.out_blocks[0].row[r])
                    for (std::size_t cc = 0; cc < 3; ++cc)
                        tmp.at(r, cc) += val * q.codewords.at(v, cc);
            }
            double scale = spec.kind == ConvKind::GIN && s == 1 ? 1.0 + w.gin_eps : 1.0;
            auto contrib = matmul_a_bt(tmp, w.support_w(spec, s));
            for (std::size_t i = 0; i < est.data.size(); ++i)
                est.data[i] += scale * contrib.data[i];
        }
        DenseMatrix<double> exact_b(b, 4);
        for (std::size_t r = 0; r < b; ++r)
            for (std::size_t c = 0; c < 4; ++c) exact_b.at(r, c) = gx_full.at(batch.indices[r], c);

        BoundTrial trial;
        trial.eps = q.eps;
        trial.lhs = verify_detail::frob_diff(est, exact_b);
        trial.rhs = 0;
        for (std::size_t s = 0; s < convs.size(); ++s) {
            auto ct_b = row_slice(transpose(convs[s]), batch.indices);
            double cnorm = static_cast<double>(frob_norm(ct_b));
            if (spec.kind == ConvKind::GIN && s == 1) cnorm *= std::abs(1.0 + w.gin_eps);
            trial.rhs += q.eps * cnorm * static_cast<double>(frob_norm(grad_next)) *
                         static_cast<double>(frob_norm(w.support_w(spec, s)));
        }
        trial.slack = trial.rhs - trial.lhs;
        trial.pass = trial.slack >= kBoundSlackTol;
        report.trials.push_back(trial);
    }
    return report;
}

// GAT certificate on the all-codeword estimator: the learnable convolution is
// evaluated on reconstructed features on both sides (the proof's C'), with no
// intra-batch exactness and no row normalization. Lip(h) comes from the
// projected parameters and the score clamp.
inline BoundReport check_gat_bound(std::size_t trials, std::uint64_t seed,
                                   const std::vector<std::size_t>& ks = {2, 4, 8},
                                   std::size_t n_max = 32, double score_clamp = 3.0) {
    BoundReport report;
    report.check = "forward_gat_all_codeword";
    for (std::size_t t = 0; t < trials; ++t) {
        auto rng = make_rng(seed, 9000 + t);
        std::uniform_int_distribution<std::size_t> nd(8, n_max);
        const std::size_t n = nd(rng);
        const std::size_t k = ks[t % ks.size()];
        ConvSpec spec{ConvKind::GAT, 1, 1.0, score_clamp};
        Graph g = verify_detail::random_graph(n, 0.3, rng);
        auto mask = build_fixed_convs<double>(g, spec)[0];
        auto w = make_layer_weights<double>(spec, 4, 3, rng);
        lipschitz_regularize(w, spec.lipschitz_bound);
        auto x = verify_detail::random_dense(n, 4, rng);
        const Nonlin sigma = Nonlin::ReLU;

        auto q = verify_detail::quantize_rows(x, k, seed + 7 * t);
        auto x_hat = verify_detail::reconstruct(q, n);

        MiniBatch batch;
        for (Index i = 0; i < n; i += 2) batch.indices.push_back(i);
        const std::size_t b = batch.size();

        // exact: sigma(C_B X W), C unnormalized learnable on the mask
        // estimator: sigma(C'_B X_hat W), C' scored on reconstructions
        DenseMatrix<double> exact_agg(b, 4), est_agg(b, 4);
        auto h_x = matmul(x, w.w[0]);
        auto h_hat = matmul(x_hat, w.w[0]);
        for (std::size_t r = 0; r < b; ++r) {
            const Index i = batch.indices[r];
            for (std::size_t p = mask.row_begin(i); p < mask.row_end(i); ++p) {
                const Index j = mask.indices[p];
                const double u =
                    gat_score_pair(h_x.row(i), h_x.row(j), w.att[0], 3, spec.score_clamp).score;
                const double u_hat =
                    gat_score_pair(h_hat.row(i), h_hat.row(j), w.att[0], 3, spec.score_clamp)
                        .score;
                for (std::size_t c = 0; c < 4; ++c) {
                    exact_agg.at(r, c) += u * x.at(j, c);
                    est_agg.at(r, c) += u_hat * x_hat.at(j, c);
                }
            }
        }
        auto exact = matmul(exact_agg, w.w[0]);
        auto est = matmul(est_agg, w.w[0]);
        for (auto& v : exact.data) v = nonlin_apply(sigma, v);
        for (auto& v : est.data) v = nonlin_apply(sigma, v);

        BoundTrial trial;
        trial.eps = q.eps;
        trial.lhs = verify_detail::frob_diff(est, exact);
        const double lip_h = verify_detail::gat_lip_h(w, 0, spec.score_clamp);
        // ||C'||, ||C|| and ||c|| over the full mask; ||X_hat|| is the
        // reconstruction norm
        double cnorm = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = mask.row_begin(i); p < mask.row_end(i); ++p) {
                const double u =
                    gat_score_pair(h_x.row(i), h_x.row(mask.indices[p]), w.att[0], 3,
                                   spec.score_clamp)
                        .score;
                cnorm += u * u;
            }
        cnorm = std::sqrt(cnorm);
        const double mask_norm = static_cast<double>(frob_norm(mask));
        const double xnorm = static_cast<double>(frob_norm(x));
        const double xhat_norm = static_cast<double>(frob_norm(x_hat));
        const double wnorm = static_cast<double>(frob_norm(w.w[0]));
        trial.rhs = wnorm * (2.0 * mask_norm * lip_h * q.eps * xnorm * xhat_norm +
                             cnorm * q.eps * xnorm);
        trial.slack = trial.rhs - trial.lhs;
        trial.pass = trial.slack >= kBoundSlackTol;
        report.trials.push_back(trial);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel = 0;
    std::string worst;
    bool pass = false;
};

// Builds a random L-layer stack for the given convolution kind and checks
// every parameter and input coordinate of the analytic gradient against
// central differences of the softmax cross-entropy loss.
inline GradCheckReport finite_diff_check(const ConvSpec& spec, std::size_t n, std::size_t layers,
                                         std::uint64_t seed, double h = 1e-5,
                                         double tol = 1e-4) {
    auto rng = make_rng(seed, 77);
    Graph g = verify_detail::random_graph(n, 0.4, rng);
    auto convs = build_fixed_convs<double>(g, spec);
    const std::size_t f0 = 3, hidden = 4, classes = 3;
    std::vector<std::size_t> widths{f0};
    for (std::size_t l = 1; l < layers; ++l) widths.push_back(hidden);
    widths.push_back(classes);
    std::vector<LayerWeights<double>> weights;
    for (std::size_t l = 0; l < layers; ++l)
        weights.push_back(make_layer_weights<double>(spec, widths[l], widths[l + 1], rng));
    auto x = verify_detail::random_dense(n, f0, rng);
    std::vector<std::int64_t> labels(n);
    std::uniform_int_distribution<std::int64_t> lab(0, classes - 1);
    for (auto& l : labels) l = lab(rng);
    const bool rn = spec.kind == ConvKind::GAT;

    auto loss_of = [&]() {
        DenseMatrix<double> cur = x;
        for (std::size_t l = 0; l < layers; ++l) {
            const Nonlin act = l + 1 < layers ? Nonlin::ReLU : Nonlin::Identity;
            cur = full_forward(spec, convs, weights[l], cur, act, rn);
        }
        return softmax_xent(cur, labels).loss;
    };

    // analytic gradients
    std::vector<LayerCache<double>> caches(layers);
    DenseMatrix<double> cur = x;
    for (std::size_t l = 0; l < layers; ++l) {
        const Nonlin act = l + 1 < layers ? Nonlin::ReLU : Nonlin::Identity;
        cur = full_forward(spec, convs, weights[l], cur, act, rn, &caches[l]);
    }
    auto res = softmax_xent(cur, labels);
    std::vector<GradWeights<double>> grads;
    for (std::size_t l = 0; l < layers; ++l)
        grads.push_back(GradWeights<double>::zeros_like(weights[l]));
    DenseMatrix<double> grad = res.grad;
    for (std::size_t l = layers; l-- > 0;)
        grad = full_backward(spec, convs, weights[l], grad, caches[l], grads[l]);

    GradCheckReport report;
    auto check = [&](double* slot, double analytic, const std::string& name) {
        const double x0 = *slot;
        *slot = x0 + h;
        const double lp = loss_of();
        *slot = x0 - h;
        const double lm = loss_of();
        *slot = x0;
        const double numeric = (lp - lm) / (2.0 * h);
        const double denom = std::max({1e-6, std::abs(analytic), std::abs(numeric)});
        const double rel = std::abs(analytic - numeric) / denom;
        if (rel > report.max_rel) {
            report.max_rel = rel;
            report.worst = name;
        }
    };
    for (std::size_t i = 0; i < x.data.size(); ++i)
        check(&x.data[i], grad.data[i], "x[" + std::to_string(i) + "]");
    for (std::size_t l = 0; l < layers; ++l) {
        for (std::size_t s = 0; s < weights[l].w.size(); ++s)
            for (std::size_t i = 0; i < weights[l].w[s].data.size(); ++i)
                check(&weights[l].w[s].data[i], grads[l].w[s].data[i],
                      "w[" + std::to_string(l) + "][" + std::to_string(s) + "][" +
                          std::to_string(i) + "]");
        for (std::size_t s = 0; s < weights[l].att.size(); ++s)
            for (std::size_t i = 0; i < weights[l].att[s].size(); ++i)
                check(&weights[l].att[s][i], grads[l].att[s][i],
                      "a[" + std::to_string(l) + "][" + std::to_string(s) + "][" +
                          std::to_string(i) + "]");
        if (spec.kind == ConvKind::GIN)
            check(&weights[l].gin_eps, grads[l].gin_eps, "eps[" + std::to_string(l) + "]");
    }
    report.pass = report.max_rel < tol;
    return report;
}

// ---------------------------------------------------------------------------
// Sparse Johnson-Lindenstrauss baseline
// ---------------------------------------------------------------------------

struct JlConfig {
    std::size_t n = 256;
    std::size_t k = 64;
    double sparsity = 0.25;  // fraction of nonzeros per row, relative to k
    std::size_t trials = 200;
    double eps = 0.5;
    std::uint64_t seed = 0;

    void validate() const {
        if (k < 1) throw config_error("jl: k must be >= 1");
        if (sparsity <= 0 || sparsity > 1) throw config_error("jl: sparsity in (0, 1]");
    }
};

// Empirical failure rate of the event ||C R R^T X_col - C X_col|| <
// eps ||C X_col||, over (trial, column) pairs, with R drawn with s nonzero
// entries of value +-1/sqrt(s) per row.
inline double sparse_jl_project(const CsrMatrix<double>& c, const DenseMatrix<double>& x,
                                const JlConfig& cfg) {
    cfg.validate();
    const std::size_t n = x.rows;
    const std::size_t s = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                       std::ceil(cfg.sparsity * cfg.k)));
    auto cx = spmm(c, x);
    std::size_t failures = 0;
    for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
        auto rng = make_rng(cfg.seed, 40000 + trial);
        // sample R: s distinct positions per row, +-1/sqrt(s)
        DenseMatrix<double> rt_x(cfg.k, x.cols);       // R^T X
        std::vector<std::vector<std::pair<Index, double>>> r_rows(n);
        std::uniform_real_distribution<double> sign(0.0, 1.0);
        std::vector<Index> positions(cfg.k);
        for (std::size_t i = 0; i < cfg.k; ++i) positions[i] = static_cast<Index>(i);
        for (std::size_t row = 0; row < n; ++row) {
            for (std::size_t i = 0; i < s; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, cfg.k - 1);
                std::swap(positions[i], positions[pick(rng)]);
                const double v = (sign(rng) < 0.5 ? -1.0 : 1.0) / std::sqrt(static_cast<double>(s));
                r_rows[row].push_back({positions[i], v});
            }
        }
        for (std::size_t row = 0; row < n; ++row)
            for (const auto& [col, v] : r_rows[row])
                for (std::size_t c2 = 0; c2 < x.cols; ++c2)
                    rt_x.at(col, c2) += v * x.at(row, c2);
        DenseMatrix<double> rrt_x(n, x.cols);  // R (R^T X)
        for (std::size_t row = 0; row < n; ++row)
            for (const auto& [col, v] : r_rows[row])
                for (std::size_t c2 = 0; c2 < x.cols; ++c2)
                    rrt_x.at(row, c2) += v * rt_x.at(col, c2);
        auto c_rrt_x = spmm(c, rrt_x);
        for (std::size_t col = 0; col < x.cols; ++col) {
            double diff = 0, ref = 0;
            for (std::size_t row = 0; row < c.rows; ++row) {
                const double d = c_rrt_x.at(row, col) - cx.at(row, col);
                diff += d * d;
                ref += cx.at(row, col) * cx.at(row, col);
            }
            if (!(std::sqrt(diff) < cfg.eps * std::sqrt(ref))) ++failures;
        }
    }
    return static_cast<double>(failures) / static_cast<double>(cfg.trials * x.cols);
}

// ---------------------------------------------------------------------------
// Full-graph equivalence suite
// ---------------------------------------------------------------------------

struct EquivalenceCase {
    std::string name;
    double max_rel = 0;
    bool pass = false;
};

struct EquivalenceSummary {
    std::vector<EquivalenceCase> cases;
    bool all_pass() const {
        for (const auto& c : cases)
            if (!c.pass) return false;
        return true;
    }
};

namespace verify_detail {

inline double rel_diff(const DenseMatrix<double>& got, const DenseMatrix<double>& want) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < got.data.size(); ++i) {
        const double d = got.data[i] - want.data[i];
        num += d * d;
        den += want.data[i] * want.data[i];
    }
    return den == 0 ? std::sqrt(num) : std::sqrt(num / den);
}

inline DenseMatrix<double> take_rows(const DenseMatrix<double>& m, const std::vector<Index>& idx) {
    DenseMatrix<double> out(idx.size(), m.cols);
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t c = 0; c < m.cols; ++c) out.at(r, c) = m.at(idx[r], c);
    return out;
}

}  // namespace verify_detail

// Runs the b = n and k = n lossless exactness cases for every convolution
// kind, forward and backward, at 1e-6 relative tolerance.
inline EquivalenceSummary equivalence_suite(std::uint64_t seed, double tol = 1e-6) {
    using verify_detail::rel_diff;
    using verify_detail::take_rows;
    EquivalenceSummary summary;
    const char* names[4] = {"gcn", "sage-mean", "gin", "gat"};
    const ConvKind kinds[4] = {ConvKind::GCN, ConvKind::SageMean, ConvKind::GIN, ConvKind::GAT};
    for (int ki = 0; ki < 4; ++ki) {
        auto rng = make_rng(seed, 600 + ki);
        ConvSpec spec{kinds[ki]};
        if (spec.kind == ConvKind::GAT) spec.heads = 2;
        const std::size_t n = 12;
        Graph g = verify_detail::random_graph(n, 0.4, rng);
        auto convs = build_fixed_convs<double>(g, spec);
        auto w = make_layer_weights<double>(spec, 3, 2, rng);
        if (spec.kind == ConvKind::GIN) w.gin_eps = 0.3;
        auto x = verify_detail::random_dense(n, 3, rng);
        auto grad_next = verify_detail::random_dense(n, 2, rng);
        const bool gat = spec.kind == ConvKind::GAT;
        const Nonlin sigma = Nonlin::ReLU;

        LayerCache<double> cache;
        auto full = full_forward(spec, convs, w, x, sigma, gat, &cache);
        auto gw_full = GradWeights<double>::zeros_like(w);
        auto gx_full = full_backward(spec, convs, w, grad_next, cache, gw_full);
        DenseMatrix<double> g_post(n, 2);
        for (std::size_t i = 0; i < g_post.data.size(); ++i)
            g_post.data[i] = grad_next.data[i] * nonlin_deriv(sigma, cache.z.data[i]);

        MiniBatch all;
        for (Index i = 0; i < n; ++i) all.indices.push_back(i);
        MiniBatch part;
        for (Index i = 0; i < n; i += 2) part.indices.push_back(i);

        auto run_case = [&](const MiniBatch& batch, bool full_batch, DenseMatrix<double>* vq_rows_out)
            -> std::pair<double, double> {
            // lossless view: per-node codewords with true features / gradients
            AssignmentTable table;
            LayerVqView<double> view;
            view.feat_width = 3;
            view.f_prod = 0;  // set below once grad width is known
            DenseMatrix<double> grads_for_view;
            if (gat) {
                grads_for_view = vq_rows_out ? *vq_rows_out : DenseMatrix<double>(n, spec.heads * 4);
            } else {
                grads_for_view = g_post;
            }
            view.grad_width = grads_for_view.cols;
            view.f_prod = 3 + grads_for_view.cols;
            DenseMatrix<double> raw(n, view.f_prod);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < 3; ++c) raw.at(r, c) = x.at(r, c);
                for (std::size_t c = 0; c < view.grad_width; ++c)
                    raw.at(r, 3 + c) = grads_for_view.at(r, c);
            }
            view.raw.push_back(std::move(raw));
            table.branch.emplace_back();
            for (std::size_t j = 0; j < n; ++j)
                table.branch[0].push_back(static_cast<Index>(j));
            view.table = &table;

            auto x_b = take_rows(x, batch.indices);
            auto gn_b = take_rows(grad_next, batch.indices);
            auto want_f = take_rows(full, batch.indices);
            auto want_b = take_rows(gx_full, batch.indices);
            if (gat) {
                auto st = gat_batch_structure(row_slice(convs[0], batch.indices),
                                              row_slice(transpose(convs[0]), batch.indices), batch);
                GatApproxCache<double> ac;
                auto out = gat_approx_forward(spec, st, view, w, x_b, sigma, ac);
                auto gw = GradWeights<double>::zeros_like(w);
                auto res = gat_approx_backward(spec, st, view, w, gn_b, ac, gw);
                if (full_batch && vq_rows_out) *vq_rows_out = res.vq_grad_rows;
                return {rel_diff(out, want_f), rel_diff(res.grad_x_b, want_b)};
            }
            std::vector<MessageBlock<double>> blocks;
            for (const auto& c : convs)
                blocks.push_back(assemble_block(row_slice(c, batch.indices),
                                                row_slice(transpose(c), batch.indices), view,
                                                batch));
            ApproxCache<double> ac;
            auto out = approx_forward(spec, blocks, view, w, x_b, sigma, &ac);
            auto gw = GradWeights<double>::zeros_like(w);
            auto res = approx_backward(spec, blocks, view, w, gn_b, ac, gw);
            return {rel_diff(out, want_f), rel_diff(res.grad_x_b, want_b)};
        };

        DenseMatrix<double> vq_rows(n, gat ? spec.heads * 4 : 2);
        auto [f_err_full, b_err_full] = run_case(all, true, &vq_rows);
        auto [f_err_part, b_err_part] = run_case(part, false, &vq_rows);

        summary.cases.push_back({std::string(names[ki]) + "/b=n/forward", f_err_full,
                                 f_err_full < tol});
        summary.cases.push_back({std::string(names[ki]) + "/b=n/backward", b_err_full,
                                 b_err_full < tol});
        summary.cases.push_back({std::string(names[ki]) + "/k=n/forward", f_err_part,
                                 f_err_part < tol});
        summary.cases.push_back({std::string(names[ki]) + "/k=n/backward", b_err_part,
                                 b_err_part < tol});
    }
    return summary;
}

}  // namespace vqgnn
