// Approximated mini-batch message passing. For a batch of b nodes the layer
// operator is assembled as a (b+k)-column block structure: an exact dense-ish
// intra-batch block C_in, a codeword block C~out = C_out R collecting every
// message from out-of-batch nodes, and the transposed block (C~^T)_out that
// carries gradient messages back from out-of-batch rows. All messages of the
// original operator are preserved: each nonzero of the batch rows lands in
// exactly one block.
#pragma once

#include <algorithm>
#include <cstddef>
#include <utility>
#include <vector>

#include "vqgnn/common.hpp"
#include "vqgnn/conv.hpp"
#include "vqgnn/dense.hpp"
#include "vqgnn/sparse.hpp"
#include "vqgnn/vq.hpp"

namespace vqgnn {

struct MiniBatch {
    std::vector<Index> indices;  // sorted ascending, no duplicates

    std::size_t size() const { return indices.size(); }

    void validate(std::size_t n) const {
        if (indices.empty()) throw input_error("mini-batch: empty");
        for (std::size_t i = 0; i < indices.size(); ++i) {
            if (indices[i] >= n) throw input_error("mini-batch: index out of range");
            if (i > 0 && indices[i] <= indices[i - 1])
                throw input_error("mini-batch: indices must be sorted and unique");
        }
    }
};

// List-of-rows sparse storage for the codeword blocks. Blocks are conceptually
// dense b x k, but only nnz(C_out) entries are ever non-zero, so rows hold
// (column, value) pairs.
template <typename T>
struct SparseRows {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::vector<std::pair<Index, T>>> row;

    SparseRows() = default;
    SparseRows(std::size_t r, std::size_t c) : rows(r), cols(c), row(r) {}

    std::size_t nnz() const {
        std::size_t t = 0;
        for (const auto& r : row) t += r.size();
        return t;
    }
    DenseMatrix<T> to_dense() const {
        DenseMatrix<T> out(rows, cols);
        for (std::size_t r = 0; r < rows; ++r)
            for (const auto& [c, v] : row[r]) out.at(r, c) += v;
        return out;
    }
};

// Span of one product-VQ branch inside the feature (or gradient) half of the
// concatenated vector: branch-local columns [local0, local0+len) map to
// half-relative columns [half0, half0+len).
struct BranchSpan {
    std::size_t local0 = 0;
    std::size_t half0 = 0;
    std::size_t len = 0;
};

// Read-only view over one layer's quantization state, with codewords
// materialized in raw (unwhitened) space once per training step.
template <typename T>
struct LayerVqView {
    const AssignmentTable* table = nullptr;
    std::vector<DenseMatrix<T>> raw;  // per branch: k x f_prod, unwhitened
    std::size_t feat_width = 0;
    std::size_t grad_width = 0;
    std::size_t f_prod = 0;

    std::size_t num_branches() const { return raw.size(); }
    std::size_t k() const { return raw.empty() ? 0 : raw.front().rows; }

    BranchSpan feature_span(std::size_t b) const {
        const std::size_t c0 = b * f_prod, c1 = std::min(c0 + f_prod, feat_width);
        if (c0 >= c1) return {};
        return {0, c0, c1 - c0};
    }
    BranchSpan gradient_span(std::size_t b) const {
        const std::size_t c0 = b * f_prod, c1 = c0 + f_prod;
        const std::size_t g0 = std::max(c0, feat_width);
        const std::size_t g1 = std::min(c1, feat_width + grad_width);
        if (g0 >= g1) return {};
        return {g0 - c0, g0 - feat_width, g1 - g0};
    }

    // Raw feature-half reconstruction of one node, written into out[0..feat_width).
    void reconstruct_features(Index node, T* out) const {
        for (std::size_t b = 0; b < raw.size(); ++b) {
            const auto span = feature_span(b);
            if (span.len == 0) continue;
            const Index v = table->branch[b][node];
            const T* cw = raw[b].row(v);
            for (std::size_t c = 0; c < span.len; ++c) out[span.half0 + c] = cw[span.local0 + c];
        }
    }
    void reconstruct_gradients(Index node, T* out) const {
        for (std::size_t b = 0; b < raw.size(); ++b) {
            const auto span = gradient_span(b);
            if (span.len == 0) continue;
            const Index v = table->branch[b][node];
            const T* cw = raw[b].row(v);
            for (std::size_t c = 0; c < span.len; ++c) out[span.half0 + c] = cw[span.local0 + c];
        }
    }
};

// One support's assembled operator blocks.
template <typename T>
struct MessageBlock {
    SparseRows<T> c_in;                         // b x b, exact intra-batch entries
    std::vector<SparseRows<T>> out_blocks;      // per branch: b x k, C_out R
    std::vector<SparseRows<T>> t_out_blocks;    // per branch: b x k, rows of ((C^T)_out R)
                                                // (the lower-left block of the
                                                // operator, stored transposed)
    std::size_t batch_size = 0;

    std::size_t num_codewords() const {
        return out_blocks.empty() ? 0 : out_blocks.front().cols;
    }
};

namespace detail {

// Bins the out-of-batch columns of src by codeword assignment, one block per
// branch: block[i][R_b(j)] += src[i][j].
template <typename T>
std::vector<SparseRows<T>> bin_by_assignment(const CsrMatrix<T>& src, const LayerVqView<T>& vq) {
    const std::size_t k = vq.k();
    std::vector<SparseRows<T>> blocks;
    blocks.reserve(vq.num_branches());
    std::vector<T> acc(k, T(0));
    std::vector<Index> touched;
    for (std::size_t b = 0; b < vq.num_branches(); ++b) {
        const auto& assign = vq.table->branch[b];
        SparseRows<T> block(src.rows, k);
        for (std::size_t r = 0; r < src.rows; ++r) {
            touched.clear();
            for (std::size_t p = src.row_begin(r); p < src.row_end(r); ++p) {
                const Index j = src.indices[p];
                if (j >= assign.size()) throw state_error("assemble_block: node outside assignment table");
                const Index v = assign[j];
                if (v >= k) throw state_error("assemble_block: assignment index out of range");
                if (acc[v] == T(0)) touched.push_back(v);
                acc[v] += src.values[p];
            }
            std::sort(touched.begin(), touched.end());
            for (Index v : touched) {
                block.row[r].push_back({v, acc[v]});
                acc[v] = T(0);
            }
        }
        blocks.push_back(std::move(block));
    }
    return blocks;
}

template <typename T>
SparseRows<T> sparse_rows_of(const DenseMatrix<T>& dense) {
    SparseRows<T> out(dense.rows, dense.cols);
    for (std::size_t r = 0; r < dense.rows; ++r)
        for (std::size_t c = 0; c < dense.cols; ++c)
            if (dense.at(r, c) != T(0)) out.row[r].push_back({static_cast<Index>(c), dense.at(r, c)});
    return out;
}

}  // namespace detail

// Assembles the blocked operator for one fixed support from the batch rows of
// C and C^T. Every nonzero of c_b is preserved: intra-batch entries go to
// c_in, the rest are merged into per-branch codeword columns.
template <typename T>
MessageBlock<T> assemble_block(const CsrMatrix<T>& c_b, const CsrMatrix<T>& ct_b,
                               const LayerVqView<T>& vq, const MiniBatch& batch) {
    if (c_b.rows != batch.size() || ct_b.rows != batch.size())
        throw input_error("assemble_block: slices do not match the batch");
    auto [c_in_dense, c_out] = split_in_out(c_b, batch.indices);
    auto [ct_in_dense, ct_out] = split_in_out(ct_b, batch.indices);
    (void)ct_in_dense;  // equals c_in transposed; not stored twice
    MessageBlock<T> mb;
    mb.batch_size = batch.size();
    mb.c_in = detail::sparse_rows_of(c_in_dense);
    mb.out_blocks = detail::bin_by_assignment(c_out, vq);
    mb.t_out_blocks = detail::bin_by_assignment(ct_out, vq);
    return mb;
}

// Message accounting: intra-batch messages are the nonzeros of C_in; codeword
// messages are counted per (row, codeword) channel, i.e. the union of the
// branch blocks' sparsity patterns (branch slices of one approximated message
// travel together).
inline std::pair<std::size_t, std::size_t> message_count_of(std::size_t batch_size,
                                                            std::size_t k,
                                                            std::size_t c_in_nnz,
                                                            const auto& out_blocks,
                                                            const auto& t_out_blocks) {
    std::vector<char> seen(k, 0);
    std::size_t codeword = 0;
    auto count_union = [&](const auto& blocks) {
        for (std::size_t r = 0; r < batch_size; ++r) {
            std::vector<Index> touched;
            for (const auto& block : blocks) {
                for (const auto& [v, val] : block.row[r]) {
                    (void)val;
                    if (!seen[v]) {
                        seen[v] = 1;
                        touched.push_back(v);
                    }
                }
            }
            codeword += touched.size();
            for (Index v : touched) seen[v] = 0;
        }
    };
    count_union(out_blocks);
    count_union(t_out_blocks);
    return {c_in_nnz, codeword};
}

template <typename T>
std::pair<std::size_t, std::size_t> message_count(const MessageBlock<T>& mb) {
    return message_count_of(mb.batch_size, mb.num_codewords(), mb.c_in.nnz(), mb.out_blocks,
                            mb.t_out_blocks);
}

// ---------------------------------------------------------------------------
// Fixed-convolution approximated pass
// ---------------------------------------------------------------------------

template <typename T>
struct ApproxCache {
    DenseMatrix<T> x_b;               // batch input features
    DenseMatrix<T> z;                 // batch pre-activations
    Nonlin sigma = Nonlin::Identity;
    std::vector<DenseMatrix<T>> agg;  // per support: C_in X_B + C~out X~ (GIN: combined)
    std::size_t batch_size = 0;
};

namespace detail {

// agg += block-structured operator applied to [X_B ; X~] feature content.
template <typename T>
void apply_forward_block(const MessageBlock<T>& mb, const LayerVqView<T>& vq,
                         const DenseMatrix<T>& x_b, DenseMatrix<T>& agg) {
    const std::size_t f = x_b.cols;
    for (std::size_t r = 0; r < mb.c_in.rows; ++r) {
        T* arow = agg.row(r);
        for (const auto& [c, val] : mb.c_in.row[r]) {
            const T* xrow = x_b.row(c);
            for (std::size_t cc = 0; cc < f; ++cc) arow[cc] += val * xrow[cc];
        }
    }
    for (std::size_t b = 0; b < vq.num_branches(); ++b) {
        const auto span = vq.feature_span(b);
        if (span.len == 0) continue;
        const auto& block = mb.out_blocks[b];
        for (std::size_t r = 0; r < block.rows; ++r) {
            T* arow = agg.row(r);
            for (const auto& [v, val] : block.row[r]) {
                const T* cw = vq.raw[b].row(v);
                for (std::size_t c = 0; c < span.len; ++c)
                    arow[span.half0 + c] += val * cw[span.local0 + c];
            }
        }
    }
}

// tmp += (C_in^T G_B + (C~^T)_out G~) for one support.
template <typename T>
void apply_backward_block(const MessageBlock<T>& mb, const LayerVqView<T>& vq,
                          const DenseMatrix<T>& g_b, DenseMatrix<T>& tmp) {
    const std::size_t f = g_b.cols;
    for (std::size_t r = 0; r < mb.c_in.rows; ++r) {
        const T* grow = g_b.row(r);
        for (const auto& [c, val] : mb.c_in.row[r]) {
            T* trow = tmp.row(c);
            for (std::size_t cc = 0; cc < f; ++cc) trow[cc] += val * grow[cc];
        }
    }
    for (std::size_t b = 0; b < vq.num_branches(); ++b) {
        const auto span = vq.gradient_span(b);
        if (span.len == 0) continue;
        const auto& block = mb.t_out_blocks[b];
        for (std::size_t r = 0; r < block.rows; ++r) {
            T* trow = tmp.row(r);
            for (const auto& [v, val] : block.row[r]) {
                const T* cw = vq.raw[b].row(v);
                for (std::size_t c = 0; c < span.len; ++c)
                    trow[span.half0 + c] += val * cw[span.local0 + c];
            }
        }
    }
}

}  // namespace detail

// Approximated forward pass for fixed convolutions (GCN, SAGE-Mean, GIN).
// Only the batch rows of the blocked product are produced.
template <typename T>
DenseMatrix<T> approx_forward(const ConvSpec& spec, const std::vector<MessageBlock<T>>& blocks,
                              const LayerVqView<T>& vq, const LayerWeights<T>& weights,
                              const DenseMatrix<T>& x_b, Nonlin sigma,
                              ApproxCache<T>* cache_out = nullptr) {
    if (spec.learnable()) throw config_error("approx_forward: use the attention path for GAT");
    if (blocks.size() != spec.num_supports()) throw input_error("approx_forward: support count mismatch");
    if (x_b.cols != weights.f_in()) throw input_error("approx_forward: feature width mismatch");
    const std::size_t b = x_b.rows;

    ApproxCache<T> cache;
    cache.x_b = x_b;
    cache.sigma = sigma;
    cache.batch_size = b;
    DenseMatrix<T> z(b, weights.f_out());

    if (spec.kind == ConvKind::GIN) {
        DenseMatrix<T> combined(b, x_b.cols);
        detail::apply_forward_block(blocks[0], vq, x_b, combined);
        const T scale = T(1) + weights.gin_eps;
        // identity support stays intra-batch by construction
        for (std::size_t r = 0; r < b; ++r)
            for (std::size_t c = 0; c < x_b.cols; ++c) combined.at(r, c) += scale * x_b.at(r, c);
        z = matmul(combined, weights.w[0]);
        cache.agg.push_back(std::move(combined));
    } else {
        for (std::size_t s = 0; s < spec.num_supports(); ++s) {
            DenseMatrix<T> agg(b, x_b.cols);
            detail::apply_forward_block(blocks[s], vq, x_b, agg);
            add_inplace(z, matmul(agg, weights.w[s]));
            cache.agg.push_back(std::move(agg));
        }
    }

    DenseMatrix<T> out(b, weights.f_out());
    for (std::size_t i = 0; i < z.data.size(); ++i) out.data[i] = nonlin_apply(sigma, z.data[i]);
    cache.z = std::move(z);
    if (cache_out) *cache_out = std::move(cache);
    return out;
}

template <typename T>
struct ApproxBackwardResult {
    DenseMatrix<T> grad_x_b;       // batch rows of the previous layer's gradient
    DenseMatrix<T> g_b;            // post-nonlinearity batch gradients (VQ grad half
                                   // for fixed convolutions)
};

// Approximated backward pass for fixed convolutions: the top-b rows of the
// transposed block operator applied to [G_B ; G~], plus the batch-row
// estimate of the weight gradients.
template <typename T>
ApproxBackwardResult<T> approx_backward(const ConvSpec& spec,
                                        const std::vector<MessageBlock<T>>& blocks,
                                        const LayerVqView<T>& vq, const LayerWeights<T>& weights,
                                        const DenseMatrix<T>& grad_next, const ApproxCache<T>& cache,
                                        GradWeights<T>& grad_w) {
    if (spec.learnable()) throw config_error("approx_backward: use the attention path for GAT");
    if (cache.agg.empty()) throw state_error("approx_backward: stale or missing forward cache");
    if (grad_next.rows != cache.batch_size) throw state_error("approx_backward: batch mismatch");

    const std::size_t b = cache.batch_size;
    DenseMatrix<T> g(b, grad_next.cols);
    for (std::size_t i = 0; i < g.data.size(); ++i)
        g.data[i] = grad_next.data[i] * nonlin_deriv(cache.sigma, cache.z.data[i]);

    DenseMatrix<T> grad_x(b, cache.x_b.cols);
    if (spec.kind == ConvKind::GIN) {
        add_inplace(grad_w.w[0], matmul_at_b(cache.agg[0], g));
        DenseMatrix<T> tmp(b, g.cols);
        detail::apply_backward_block(blocks[0], vq, g, tmp);
        const T scale = T(1) + weights.gin_eps;
        for (std::size_t i = 0; i < tmp.data.size(); ++i) tmp.data[i] += scale * g.data[i];
        grad_x = matmul_a_bt(tmp, weights.w[0]);
        auto xw = matmul(cache.x_b, weights.w[0]);
        T geps = T(0);
        for (std::size_t i = 0; i < xw.data.size(); ++i) geps += g.data[i] * xw.data[i];
        grad_w.gin_eps += geps;
    } else {
        for (std::size_t s = 0; s < spec.num_supports(); ++s) {
            add_inplace(grad_w.w[s], matmul_at_b(cache.agg[s], g));
            DenseMatrix<T> tmp(b, g.cols);
            detail::apply_backward_block(blocks[s], vq, g, tmp);
            add_inplace(grad_x, matmul_a_bt(tmp, weights.w[s]));
        }
    }
    return {std::move(grad_x), std::move(g)};
}

// ---------------------------------------------------------------------------
// GAT approximated pass (learnable convolution with the padding trick)
// ---------------------------------------------------------------------------

// Mask structure of one batch: intra-batch edges, edges to out-of-batch
// neighbors (forward messages), and edges from out-of-batch rows (gradient
// messages). Out-of-batch endpoints are remapped into the compact list
// out_nodes.
struct GatBatchStructure {
    std::vector<Index> out_nodes;                                // sorted global ids
    std::vector<std::vector<Index>> in_edges;                    // per batch row: batch-local cols
    std::vector<std::vector<Index>> out_edges;                   // per batch row: out-local cols
    std::vector<std::vector<Index>> t_out_edges;                 // per batch row: out-local rows j
                                                                 // with an edge j -> batch node
    std::size_t batch_size = 0;
};

template <typename T>
GatBatchStructure gat_batch_structure(const CsrMatrix<T>& mask_b, const CsrMatrix<T>& mask_t_b,
                                      const MiniBatch& batch) {
    const std::size_t b = batch.size();
    if (mask_b.rows != b || mask_t_b.rows != b)
        throw input_error("gat_batch_structure: slices do not match the batch");
    GatBatchStructure st;
    st.batch_size = b;
    std::vector<std::int64_t> batch_pos(mask_b.cols, -1);
    for (std::size_t i = 0; i < b; ++i) batch_pos[batch.indices[i]] = static_cast<std::int64_t>(i);
    std::vector<Index> outs;
    auto collect = [&](const CsrMatrix<T>& m) {
        for (std::size_t p = 0; p < m.indices.size(); ++p)
            if (batch_pos[m.indices[p]] < 0) outs.push_back(m.indices[p]);
    };
    collect(mask_b);
    collect(mask_t_b);
    std::sort(outs.begin(), outs.end());
    outs.erase(std::unique(outs.begin(), outs.end()), outs.end());
    st.out_nodes = std::move(outs);
    std::vector<std::int64_t> out_pos(mask_b.cols, -1);
    for (std::size_t i = 0; i < st.out_nodes.size(); ++i)
        out_pos[st.out_nodes[i]] = static_cast<std::int64_t>(i);

    st.in_edges.resize(b);
    st.out_edges.resize(b);
    st.t_out_edges.resize(b);
    for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t p = mask_b.row_begin(r); p < mask_b.row_end(r); ++p) {
            const Index j = mask_b.indices[p];
            if (batch_pos[j] >= 0) st.in_edges[r].push_back(static_cast<Index>(batch_pos[j]));
            else st.out_edges[r].push_back(static_cast<Index>(out_pos[j]));
        }
        for (std::size_t p = mask_t_b.row_begin(r); p < mask_t_b.row_end(r); ++p) {
            const Index j = mask_t_b.indices[p];
            if (batch_pos[j] < 0) st.t_out_edges[r].push_back(static_cast<Index>(out_pos[j]));
        }
    }
    return st;
}

template <typename T>
struct GatApproxCache {
    DenseMatrix<T> x_b;
    DenseMatrix<T> z;
    Nonlin sigma = Nonlin::Identity;
    DenseMatrix<T> x_hat;                  // |J| x f reconstructed out-neighbor features
    std::vector<DenseMatrix<T>> h_b;       // per head: X_B W
    std::vector<DenseMatrix<T>> h_hat;     // per head: X_hat W
    std::vector<std::vector<std::vector<T>>> u_in;   // per head, aligned with in_edges
    std::vector<std::vector<std::vector<T>>> u_out;  // per head, aligned with out_edges
    std::vector<std::vector<T>> row_total;           // per head: padded-ones normalizer T_i
    std::vector<DenseMatrix<T>> p;                   // per head: normalized aggregation
    std::size_t batch_size = 0;
};

// Approximated GAT forward: batch-to-batch scores from exact features,
// batch-to-codeword scores from VQ reconstructions, normalization via the
// padded ones column aggregated through the same operator.
template <typename T>
DenseMatrix<T> gat_approx_forward(const ConvSpec& spec, const GatBatchStructure& st,
                                  const LayerVqView<T>& vq, const LayerWeights<T>& weights,
                                  const DenseMatrix<T>& x_b, Nonlin sigma,
                                  GatApproxCache<T>& cache) {
    const std::size_t b = x_b.rows;
    const std::size_t f = x_b.cols;
    const std::size_t f_out = weights.f_out();
    if (f != weights.f_in()) throw input_error("gat_approx_forward: feature width mismatch");
    const T inv_heads = T(1) / static_cast<T>(spec.heads);

    cache.x_b = x_b;
    cache.sigma = sigma;
    cache.batch_size = b;
    cache.x_hat = DenseMatrix<T>(st.out_nodes.size(), f);
    for (std::size_t j = 0; j < st.out_nodes.size(); ++j)
        vq.reconstruct_features(st.out_nodes[j], cache.x_hat.row(j));

    DenseMatrix<T> z(b, f_out);
    for (std::size_t s = 0; s < spec.heads; ++s) {
        auto h_b = matmul(x_b, weights.w[s]);
        auto h_hat = matmul(cache.x_hat, weights.w[s]);
        std::vector<std::vector<T>> u_in(b), u_out(b);
        std::vector<T> total(b, T(0));
        DenseMatrix<T> agg(b, f);
        for (std::size_t i = 0; i < b; ++i) {
            T* arow = agg.row(i);
            u_in[i].reserve(st.in_edges[i].size());
            for (Index c : st.in_edges[i]) {
                const T u = gat_score_pair(h_b.row(i), h_b.row(c), weights.att[s], f_out,
                                           spec.score_clamp)
                                .score;
                u_in[i].push_back(u);
                total[i] += u;
                const T* xrow = x_b.row(c);
                for (std::size_t cc = 0; cc < f; ++cc) arow[cc] += u * xrow[cc];
            }
            u_out[i].reserve(st.out_edges[i].size());
            for (Index j : st.out_edges[i]) {
                const T u = gat_score_pair(h_b.row(i), h_hat.row(j), weights.att[s], f_out,
                                           spec.score_clamp)
                                .score;
                u_out[i].push_back(u);
                total[i] += u;
                const T* xrow = cache.x_hat.row(j);
                for (std::size_t cc = 0; cc < f; ++cc) arow[cc] += u * xrow[cc];
            }
            if (!(total[i] > static_cast<T>(kAttnFloor)))
                throw numeric_error("gat_approx_forward: degenerate attention row");
            for (std::size_t cc = 0; cc < f; ++cc) arow[cc] /= total[i];
        }
        auto zs = matmul(agg, weights.w[s]);
        scale_inplace(zs, inv_heads);
        add_inplace(z, zs);
        cache.h_b.push_back(std::move(h_b));
        cache.h_hat.push_back(std::move(h_hat));
        cache.u_in.push_back(std::move(u_in));
        cache.u_out.push_back(std::move(u_out));
        cache.row_total.push_back(std::move(total));
        cache.p.push_back(std::move(agg));
    }

    DenseMatrix<T> out(b, f_out);
    for (std::size_t i = 0; i < z.data.size(); ++i) out.data[i] = nonlin_apply(sigma, z.data[i]);
    cache.z = z;
    return out;
}

template <typename T>
struct GatBackwardResult {
    DenseMatrix<T> grad_x_b;
    DenseMatrix<T> g_b;             // post-nonlinearity gradient at the layer output
    DenseMatrix<T> vq_grad_rows;    // b x heads*(f+1): per-head padded-message gradients,
                                    // the gradient half quantized for this layer
};

// Approximated GAT backward. Gradient messages from out-of-batch rows enter
// through reconstructed padded-message gradient codewords; attention-score
// paths of batch rows are differentiated exactly, and the score paths of
// out-of-batch rows are recovered from the same codewords, so the lossless
// limits match the full-graph pass.
template <typename T>
GatBackwardResult<T> gat_approx_backward(const ConvSpec& spec, const GatBatchStructure& st,
                                         const LayerVqView<T>& vq, const LayerWeights<T>& weights,
                                         const DenseMatrix<T>& grad_next,
                                         const GatApproxCache<T>& cache, GradWeights<T>& grad_w) {
    const std::size_t b = cache.batch_size;
    if (grad_next.rows != b) throw state_error("gat_approx_backward: batch mismatch");
    const std::size_t f = cache.x_b.cols;
    const std::size_t f_out = weights.f_out();
    const T inv_heads = T(1) / static_cast<T>(spec.heads);

    DenseMatrix<T> g(b, grad_next.cols);
    for (std::size_t i = 0; i < g.data.size(); ++i)
        g.data[i] = grad_next.data[i] * nonlin_deriv(cache.sigma, cache.z.data[i]);

    DenseMatrix<T> grad_x(b, f);
    DenseMatrix<T> vq_rows(b, spec.heads * (f + 1));
    // reconstructed padded-message gradients of the out-of-batch rows
    DenseMatrix<T> gm_hat(st.out_nodes.size(), spec.heads * (f + 1));
    for (std::size_t j = 0; j < st.out_nodes.size(); ++j)
        vq.reconstruct_gradients(st.out_nodes[j], gm_hat.row(j));

    for (std::size_t s = 0; s < spec.heads; ++s) {
        const auto& u_in = cache.u_in[s];
        const auto& u_out = cache.u_out[s];
        const auto& total = cache.row_total[s];
        const auto& h_b = cache.h_b[s];
        const auto& h_hat = cache.h_hat[s];
        const auto& p_agg = cache.p[s];
        const auto& a = weights.att[s];

        {
            auto gw = matmul_at_b(p_agg, g);
            scale_inplace(gw, inv_heads);
            add_inplace(grad_w.w[s], gw);
        }
        auto gp = matmul_a_bt(g, weights.w[s]);
        scale_inplace(gp, inv_heads);

        // padded-message gradient rows of the batch: [gp_i / T_i, -<gp_i, P_i>/T_i]
        const std::size_t off = s * (f + 1);
        for (std::size_t i = 0; i < b; ++i) {
            const T dpp = dot(gp.row(i), p_agg.row(i), f);
            for (std::size_t c = 0; c < f; ++c) vq_rows.at(i, off + c) = gp.at(i, c) / total[i];
            vq_rows.at(i, off + f) = -dpp / total[i];
        }

        DenseMatrix<T> grad_h(b, f_out);
        auto score_backward = [&](std::size_t i, const T* h_target, const T* x_target, T u,
                                  bool target_in_batch, std::size_t target_idx) {
            // g_u = <dM_i, [x_target || 1]>
            T g_u = vq_rows.at(i, off + f);
            for (std::size_t c = 0; c < f; ++c) g_u += vq_rows.at(i, off + c) * x_target[c];
            // invert exp and LeakyReLU locally from the stored score
            const T act = std::log(u);
            if (std::abs(static_cast<double>(act)) >= spec.score_clamp) return;  // clamped: flat
            const T pre = act >= T(0) ? act : act / static_cast<T>(kLeakySlope);
            const T g_pre = g_u * u * nonlin_deriv(Nonlin::LeakyReLU, pre);
            for (std::size_t c = 0; c < f_out; ++c) {
                grad_w.att[s][c] += g_pre * h_b.at(i, c);
                grad_w.att[s][f_out + c] += g_pre * h_target[c];
                grad_h.at(i, c) += g_pre * a[c];
                if (target_in_batch) grad_h.at(target_idx, c) += g_pre * a[f_out + c];
            }
        };

        for (std::size_t i = 0; i < b; ++i) {
            // content path, intra: grad flows to batch column c with weight u/T_i
            for (std::size_t e = 0; e < st.in_edges[i].size(); ++e) {
                const Index c = st.in_edges[i][e];
                const T coef = u_in[i][e];
                T* gx = grad_x.row(c);
                for (std::size_t cc = 0; cc < f; ++cc)
                    gx[cc] += coef * vq_rows.at(i, off + cc);
                score_backward(i, h_b.row(c), cache.x_b.row(c), u_in[i][e], true, c);
            }
            // score path for edges into out-of-batch neighbors
            for (std::size_t e = 0; e < st.out_edges[i].size(); ++e) {
                const Index j = st.out_edges[i][e];
                score_backward(i, h_hat.row(j), cache.x_hat.row(j), u_out[i][e], false, 0);
            }
        }

        // messages from out-of-batch rows, content and score paths
        for (std::size_t c = 0; c < b; ++c) {
            T* gx = grad_x.row(c);
            for (Index j : st.t_out_edges[c]) {
                auto sc = gat_score_pair(h_hat.row(j), h_b.row(c), a, f_out, spec.score_clamp);
                const T* gm = gm_hat.row(j) + off;
                for (std::size_t cc = 0; cc < f; ++cc) gx[cc] += sc.score * gm[cc];
                // score path: d u(j,c) / d X_c through a2
                if (sc.clamped) continue;
                T g_u = gm[f];
                for (std::size_t cc = 0; cc < f; ++cc) g_u += gm[cc] * cache.x_b.at(c, cc);
                const T g_pre = g_u * sc.score * nonlin_deriv(Nonlin::LeakyReLU, sc.pre);
                for (std::size_t cc = 0; cc < f_out; ++cc)
                    grad_h.at(c, cc) += g_pre * a[f_out + cc];
            }
        }

        add_inplace(grad_x, matmul_a_bt(grad_h, weights.w[s]));
        add_inplace(grad_w.w[s], matmul_at_b(cache.x_b, grad_h));
    }
    return {std::move(grad_x), std::move(g), std::move(vq_rows)};
}

// Normalized block values of the learnable convolution: exact scores between
// batch nodes, reconstruction-based scores towards codeword columns, rows
// normalized across the combined (b + k) columns via the padding trick. Used
// by tests and the verification suites.
template <typename T>
struct LearnableBlocks {
    SparseRows<T> c_in;                      // b x b normalized scores
    std::vector<SparseRows<T>> out_blocks;   // per branch: b x k normalized score bins
};

template <typename T>
LearnableBlocks<T> learnable_block_values(const ConvSpec& spec, const GatBatchStructure& st,
                                          const LayerVqView<T>& vq, const LayerWeights<T>& weights,
                                          const DenseMatrix<T>& x_b, std::size_t head) {
    const std::size_t b = x_b.rows;
    const std::size_t f_out = weights.f_out();
    DenseMatrix<T> x_hat(st.out_nodes.size(), x_b.cols);
    for (std::size_t j = 0; j < st.out_nodes.size(); ++j)
        vq.reconstruct_features(st.out_nodes[j], x_hat.row(j));
    auto h_b = matmul(x_b, weights.w[head]);
    auto h_hat = matmul(x_hat, weights.w[head]);

    LearnableBlocks<T> lb;
    lb.c_in = SparseRows<T>(b, b);
    lb.out_blocks.assign(vq.num_branches(), SparseRows<T>(b, vq.k()));
    std::vector<T> acc(vq.k(), T(0));
    for (std::size_t i = 0; i < b; ++i) {
        T total = T(0);
        std::vector<T> u_in, u_out;
        for (Index c : st.in_edges[i]) {
            const T u = gat_score_pair(h_b.row(i), h_b.row(c), weights.att[head], f_out,
                                       spec.score_clamp)
                            .score;
            u_in.push_back(u);
            total += u;
        }
        for (Index j : st.out_edges[i]) {
            const T u = gat_score_pair(h_b.row(i), h_hat.row(j), weights.att[head], f_out,
                                       spec.score_clamp)
                            .score;
            u_out.push_back(u);
            total += u;
        }
        if (!(total > static_cast<T>(kAttnFloor)))
            throw numeric_error("learnable_block_values: degenerate attention row");
        for (std::size_t e = 0; e < st.in_edges[i].size(); ++e)
            lb.c_in.row[i].push_back({st.in_edges[i][e], u_in[e] / total});
        for (std::size_t br = 0; br < vq.num_branches(); ++br) {
            std::vector<Index> touched;
            for (std::size_t e = 0; e < st.out_edges[i].size(); ++e) {
                const Index node = st.out_nodes[st.out_edges[i][e]];
                const Index v = vq.table->branch[br][node];
                if (acc[v] == T(0)) touched.push_back(v);
                acc[v] += u_out[e] / total;
            }
            std::sort(touched.begin(), touched.end());
            for (Index v : touched) {
                lb.out_blocks[br].row[i].push_back({v, acc[v]});
                acc[v] = T(0);
            }
        }
    }
    return lb;
}

}  // namespace vqgnn
