// End-to-end mini-batch training loop. Each iteration samples a batch, runs
// the approximated forward and backward passes layer by layer, refreshes the
// per-layer codebooks with the batch's concatenated feature/gradient vectors,
// synchronizes the assignment tables, and applies the optimizer step.
// Codebooks and assignments mutate only in the VQ-update step; weights only
// in the optimizer step.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vqgnn/approx_mp.hpp"
#include "vqgnn/batchnorm.hpp"
#include "vqgnn/common.hpp"
#include "vqgnn/conv.hpp"
#include "vqgnn/dataset.hpp"
#include "vqgnn/dense.hpp"
#include "vqgnn/loss.hpp"
#include "vqgnn/optimizer.hpp"
#include "vqgnn/sampler.hpp"
#include "vqgnn/vq.hpp"

namespace vqgnn {

struct ModelConfig {
    ConvKind conv = ConvKind::GCN;
    std::size_t layers = 3;
    std::size_t hidden = 128;
    std::size_t codebook_size = 1024;
    std::size_t f_prod = 4;
    std::size_t batch_size = 512;
    double lr = 3e-3;
    double smoothing = 0.99;  // optimizer second-moment decay
    double gamma = 0.9;       // codeword EMA decay
    double beta = 0.9;        // whitening EMA decay
    std::size_t epochs = 100;
    SamplerKind sampler = SamplerKind::Nodes;
    std::uint64_t seed = 0;
    std::size_t heads = 2;            // GAT
    double lipschitz_bound = 1.0;     // GAT
    double score_clamp = 10.0;        // GAT
    bool batch_norm = true;           // disable for oracle-equivalence runs
    Nonlin hidden_act = Nonlin::ReLU;
    std::size_t walk_len = 3;
    std::size_t early_stop_patience = 0;  // 0 = fixed-epoch training
    bool record_timing = true;

    void validate() const {
        if (layers < 1) throw config_error("config: layers must be >= 1");
        if (hidden < 1 || codebook_size < 1 || f_prod < 1 || batch_size < 1)
            throw config_error("config: sizes must be >= 1");
        if (smoothing <= 0 || smoothing >= 1) throw config_error("config: smoothing in (0,1)");
        if (gamma <= 0 || gamma >= 1 || beta <= 0 || beta >= 1)
            throw config_error("config: decay rates in (0,1)");
        ConvSpec spec{conv, heads, lipschitz_bound, score_clamp};
        spec.validate();
    }
    ConvSpec conv_spec() const { return {conv, heads, lipschitz_bound, score_clamp}; }
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0;
    double val_acc = 0;
    double test_acc = 0;
    std::vector<double> eps_per_layer;
    std::size_t messages_intra = 0;
    std::size_t messages_codeword = 0;
    double wall_secs = 0;
};

template <typename T>
struct TrainState {
    ModelConfig cfg;
    std::vector<std::size_t> widths;  // f_0 .. f_L
    std::vector<LayerWeights<T>> weights;
    std::vector<std::vector<Codebook<T>>> books;  // per layer, per branch
    std::vector<AssignmentTable> assign;          // per layer
    std::vector<BatchNormState<T>> bn;            // hidden layers only
    // optimizer second-moment accumulators
    std::vector<GradWeights<T>> opt;
    std::vector<std::vector<T>> opt_bn_gamma, opt_bn_beta;
    std::size_t epochs_done = 0;

    std::size_t num_layers() const { return weights.size(); }
    std::size_t grad_width(std::size_t l) const {
        if (cfg.conv == ConvKind::GAT) return cfg.heads * (widths[l] + 1);
        return widths[l + 1];
    }
    std::size_t vq_width(std::size_t l) const { return widths[l] + grad_width(l); }

    LayerVqView<T> view(std::size_t l) const {
        LayerVqView<T> v;
        v.table = &assign[l];
        v.feat_width = widths[l];
        v.grad_width = grad_width(l);
        v.f_prod = cfg.f_prod;
        for (const auto& cb : books[l]) v.raw.push_back(cb.unwhitened());
        return v;
    }
};

namespace detail {

template <typename T>
DenseMatrix<T> rows_cast(const DenseMatrix<double>& m, const std::vector<Index>& idx) {
    DenseMatrix<T> out(idx.size(), m.cols);
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t c = 0; c < m.cols; ++c) out.at(r, c) = static_cast<T>(m.at(idx[r], c));
    return out;
}

template <typename T>
void apply_act_forward(Nonlin act, const DenseMatrix<T>& pre, DenseMatrix<T>& out) {
    out = DenseMatrix<T>(pre.rows, pre.cols);
    for (std::size_t i = 0; i < pre.data.size(); ++i) out.data[i] = nonlin_apply(act, pre.data[i]);
}

// Per-head message counts for a GAT batch structure: intra edges plus the
// union over branches of active (row, codeword) channels.
template <typename T>
std::pair<std::size_t, std::size_t> gat_message_count(const GatBatchStructure& st,
                                                      const LayerVqView<T>& vq) {
    std::size_t intra = 0;
    for (const auto& e : st.in_edges) intra += e.size();
    std::vector<char> seen(vq.k(), 0);
    std::size_t codeword = 0;
    auto count_side = [&](const std::vector<std::vector<Index>>& edges) {
        for (std::size_t r = 0; r < st.batch_size; ++r) {
            std::vector<Index> touched;
            for (std::size_t b = 0; b < vq.num_branches(); ++b) {
                const auto& assign = vq.table->branch[b];
                for (Index j : edges[r]) {
                    const Index v = assign[st.out_nodes[j]];
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
    count_side(st.out_edges);
    count_side(st.t_out_edges);
    return {intra, codeword};
}

template <typename T>
void optimizer_step(TrainState<T>& state, std::vector<GradWeights<T>>& grads,
                    std::vector<std::vector<T>>& bn_g_gamma,
                    std::vector<std::vector<T>>& bn_g_beta) {
    const double lr = state.cfg.lr, rho = state.cfg.smoothing;
    for (std::size_t l = 0; l < state.num_layers(); ++l) {
        auto& w = state.weights[l];
        auto& g = grads[l];
        auto& acc = state.opt[l];
        for (std::size_t s = 0; s < w.w.size(); ++s)
            rms_step(w.w[s].data.data(), g.w[s].data.data(), acc.w[s].data.data(),
                     w.w[s].data.size(), lr, rho);
        for (std::size_t s = 0; s < w.att.size(); ++s)
            rms_step(w.att[s].data(), g.att[s].data(), acc.att[s].data(), w.att[s].size(), lr, rho);
        if (state.cfg.conv == ConvKind::GIN)
            rms_step(&w.gin_eps, &g.gin_eps, &acc.gin_eps, 1, lr, rho);
        if (state.cfg.conv == ConvKind::GAT)
            lipschitz_regularize(w, state.cfg.lipschitz_bound);
    }
    for (std::size_t l = 0; l + 1 < state.num_layers() && state.cfg.batch_norm; ++l) {
        rms_step(state.bn[l].gamma.data(), bn_g_gamma[l].data(), state.opt_bn_gamma[l].data(),
                 state.bn[l].gamma.size(), lr, rho);
        rms_step(state.bn[l].beta.data(), bn_g_beta[l].data(), state.opt_bn_beta[l].data(),
                 state.bn[l].beta.size(), lr, rho);
    }
}

}  // namespace detail

// Weight and codebook initialization shared by the mini-batch and oracle
// trainers so equivalence tests can compare like with like.
template <typename T>
TrainState<T> make_state(const ModelConfig& cfg, const DatasetBundle& data) {
    cfg.validate();
    data.validate();
    const std::size_t classes = data.num_classes();
    if (classes < 2) throw input_error("make_state: need at least two classes");
    TrainState<T> state;
    state.cfg = cfg;
    state.widths.push_back(data.features.cols);
    for (std::size_t l = 1; l < cfg.layers; ++l) state.widths.push_back(cfg.hidden);
    state.widths.push_back(classes);

    auto wrng = make_rng(cfg.seed, 10);
    const auto spec = cfg.conv_spec();
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        state.weights.push_back(
            make_layer_weights<T>(spec, state.widths[l], state.widths[l + 1], wrng));
        state.opt.push_back(GradWeights<T>::zeros_like(state.weights.back()));
    }
    for (std::size_t l = 0; l + 1 < cfg.layers; ++l) {
        state.bn.push_back(BatchNormState<T>::init(state.widths[l + 1]));
        state.opt_bn_gamma.push_back(std::vector<T>(state.widths[l + 1], T(0)));
        state.opt_bn_beta.push_back(std::vector<T>(state.widths[l + 1], T(0)));
    }

    // codebooks: layer 0 seeded from input features (gradient half zero),
    // deeper layers from unit Gaussians until real activations flow
    ProductVqConfig vq_cfg{cfg.f_prod, cfg.codebook_size, cfg.gamma, cfg.beta};
    vq_cfg.validate();
    const std::size_t n = data.n();
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::size_t width = state.vq_width(l);
        DenseMatrix<T> sample;
        if (l == 0) {
            const std::size_t rows = std::min<std::size_t>(n, 2048);
            sample = DenseMatrix<T>(rows, width);
            const std::size_t stride = std::max<std::size_t>(1, n / rows);
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t node = (r * stride) % n;
                for (std::size_t c = 0; c < data.features.cols; ++c)
                    sample.at(r, c) = static_cast<T>(data.features.at(node, c));
            }
        } else {
            auto srng = make_rng(cfg.seed, 30 + l);
            std::normal_distribution<double> dist(0.0, 1.0);
            sample = DenseMatrix<T>(std::max<std::size_t>(cfg.codebook_size, 256), width);
            for (auto& v : sample.data) v = static_cast<T>(dist(srng));
        }
        auto blocks = split_blocks(sample, vq_cfg);
        std::vector<Codebook<T>> layer_books;
        for (std::size_t b = 0; b < blocks.size(); ++b)
            layer_books.push_back(init_codebook(blocks[b], cfg.codebook_size,
                                                cfg.seed * 1000003 + l * 131 + b,
                                                static_cast<T>(cfg.gamma),
                                                static_cast<T>(cfg.beta)));
        state.books.push_back(std::move(layer_books));

        AssignmentTable table;
        table.branch.resize(blocks.size());
        if (l == 0) {
            // nearest initial codeword on [X || 0]
            DenseMatrix<T> v0(n, width);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < data.features.cols; ++c)
                    v0.at(r, c) = static_cast<T>(data.features.at(r, c));
            auto v0_blocks = split_blocks(v0, vq_cfg);
            for (std::size_t b = 0; b < v0_blocks.size(); ++b) {
                auto whitened = whiten_with(v0_blocks[b], state.books[0][b].stats);
                table.branch[b] = find_nearest(whitened, state.books[0][b].codewords);
            }
        } else {
            auto arng = make_rng(cfg.seed, 60 + l);
            std::uniform_int_distribution<Index> pick(0, static_cast<Index>(cfg.codebook_size - 1));
            for (std::size_t b = 0; b < blocks.size(); ++b) {
                table.branch[b].resize(n);
                for (auto& a : table.branch[b]) a = pick(arng);
            }
        }
        state.assign.push_back(std::move(table));
    }
    return state;
}

template <typename T>
struct BatchStep {
    double loss = 0;
    std::size_t messages_intra = 0;
    std::size_t messages_codeword = 0;
    std::vector<double> eps_per_layer;
};

// Everything sliced once per batch and shared across layers.
template <typename T>
struct ConvHost {
    std::vector<CsrMatrix<T>> c;   // per support (GAT: per-head mask)
    std::vector<CsrMatrix<T>> ct;  // transposes

    static ConvHost build(const ConvSpec& spec, const Graph& g) {
        ConvHost h;
        h.c = build_fixed_convs<T>(g, spec);
        for (const auto& m : h.c) h.ct.push_back(transpose(m));
        return h;
    }
};

// One mini-batch step of Alg-style training: forward, loss, backward,
// VQ update + assignment sync, optimizer step.
template <typename T>
BatchStep<T> train_step(TrainState<T>& state, const DatasetBundle& data, const ConvHost<T>& host,
                        const MiniBatch& batch, bool update_codebooks = true,
                        bool update_weights = true) {
    const auto spec = state.cfg.conv_spec();
    const std::size_t L = state.num_layers();
    const bool gat = spec.kind == ConvKind::GAT;
    const bool bn_on = state.cfg.batch_norm;
    BatchStep<T> step;

    std::vector<LayerVqView<T>> views;
    for (std::size_t l = 0; l < L; ++l) views.push_back(state.view(l));

    // slice supports for this batch
    std::vector<CsrMatrix<T>> c_b, ct_b;
    for (std::size_t s = 0; s < host.c.size(); ++s) {
        c_b.push_back(row_slice(host.c[s], batch.indices));
        ct_b.push_back(row_slice(host.ct[s], batch.indices));
    }
    GatBatchStructure st;
    std::vector<std::vector<MessageBlock<T>>> blocks(L);
    if (gat) {
        st = gat_batch_structure(c_b[0], ct_b[0], batch);
    } else {
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t s = 0; s < host.c.size(); ++s)
                blocks[l].push_back(assemble_block(c_b[s], ct_b[s], views[l], batch));
    }

    // forward
    std::vector<DenseMatrix<T>> layer_in(L), pre_act(L);
    std::vector<ApproxCache<T>> caches(L);
    std::vector<GatApproxCache<T>> gat_caches(L);
    std::vector<BatchNormCache<T>> bn_caches(L);
    DenseMatrix<T> cur = detail::rows_cast<T>(data.features, batch.indices);
    for (std::size_t l = 0; l < L; ++l) {
        layer_in[l] = cur;
        DenseMatrix<T> z;
        if (gat) {
            z = gat_approx_forward(spec, st, views[l], state.weights[l], cur, Nonlin::Identity,
                                   gat_caches[l]);
        } else {
            z = approx_forward(spec, blocks[l], views[l], state.weights[l], cur, Nonlin::Identity,
                               &caches[l]);
        }
        if (l + 1 < L) {
            DenseMatrix<T> h = bn_on ? batchnorm_forward(state.bn[l], z, true, &bn_caches[l]) : z;
            pre_act[l] = h;
            detail::apply_act_forward(state.cfg.hidden_act, h, cur);
        } else {
            cur = z;  // no non-linearity on the last layer
        }
    }

    // loss over the labeled train rows of the batch
    std::vector<Index> labeled;
    for (std::size_t r = 0; r < batch.size(); ++r)
        if (data.train_mask[batch.indices[r]]) labeled.push_back(static_cast<Index>(r));
    DenseMatrix<T> grad(batch.size(), state.widths.back());
    if (!labeled.empty()) {
        DenseMatrix<T> logits(labeled.size(), state.widths.back());
        std::vector<std::int64_t> lab(labeled.size());
        for (std::size_t r = 0; r < labeled.size(); ++r) {
            for (std::size_t c = 0; c < logits.cols; ++c)
                logits.at(r, c) = cur.at(labeled[r], c);
            lab[r] = data.labels[batch.indices[labeled[r]]];
        }
        auto res = softmax_xent(logits, lab);
        step.loss = res.loss;
        for (std::size_t r = 0; r < labeled.size(); ++r)
            for (std::size_t c = 0; c < grad.cols; ++c)
                grad.at(labeled[r], c) = res.grad.at(r, c);
        if (!std::isfinite(step.loss)) throw run_error("training diverged (non-finite loss)");
    }

    // backward
    std::vector<GradWeights<T>> grads;
    for (std::size_t l = 0; l < L; ++l) grads.push_back(GradWeights<T>::zeros_like(state.weights[l]));
    std::vector<std::vector<T>> bn_g_gamma(L), bn_g_beta(L);
    for (std::size_t l = 0; l + 1 < L; ++l) {
        bn_g_gamma[l].assign(state.widths[l + 1], T(0));
        bn_g_beta[l].assign(state.widths[l + 1], T(0));
    }
    std::vector<DenseMatrix<T>> vq_grad_rows(L);
    for (std::size_t l = L; l-- > 0;) {
        DenseMatrix<T> grad_z;
        if (l + 1 < L) {
            DenseMatrix<T> gh(grad.rows, grad.cols);
            for (std::size_t i = 0; i < grad.data.size(); ++i)
                gh.data[i] =
                    grad.data[i] * nonlin_deriv(state.cfg.hidden_act, pre_act[l].data[i]);
            grad_z = bn_on ? batchnorm_backward(state.bn[l], bn_caches[l], gh, bn_g_gamma[l],
                                                bn_g_beta[l])
                           : gh;
        } else {
            grad_z = grad;
        }
        if (gat) {
            auto res = gat_approx_backward(spec, st, views[l], state.weights[l], grad_z,
                                           gat_caches[l], grads[l]);
            vq_grad_rows[l] = std::move(res.vq_grad_rows);
            grad = std::move(res.grad_x_b);
        } else {
            auto res = approx_backward(spec, blocks[l], views[l], state.weights[l], grad_z,
                                       caches[l], grads[l]);
            vq_grad_rows[l] = std::move(res.g_b);
            grad = std::move(res.grad_x_b);
        }
    }

    // VQ update and assignment synchronization
    ProductVqConfig vq_cfg{state.cfg.f_prod, state.cfg.codebook_size, state.cfg.gamma,
                           state.cfg.beta};
    for (std::size_t l = 0; l < L && update_codebooks; ++l) {
        const std::size_t width = state.vq_width(l);
        DenseMatrix<T> v(batch.size(), width);
        for (std::size_t r = 0; r < batch.size(); ++r) {
            for (std::size_t c = 0; c < state.widths[l]; ++c) v.at(r, c) = layer_in[l].at(r, c);
            for (std::size_t c = 0; c < state.grad_width(l); ++c)
                v.at(r, state.widths[l] + c) = vq_grad_rows[l].at(r, c);
        }
        auto v_blocks = split_blocks(v, vq_cfg);
        double err_num = 0, err_den = 0;
        for (std::size_t b = 0; b < v_blocks.size(); ++b) {
            auto assign = vq_update(state.books[l][b], v_blocks[b]);
            for (std::size_t r = 0; r < batch.size(); ++r)
                state.assign[l].branch[b][batch.indices[r]] = assign[r];
            auto raw = state.books[l][b].unwhitened();
            for (std::size_t r = 0; r < batch.size(); ++r) {
                const T* cw = raw.row(assign[r]);
                for (std::size_t c = 0; c < v_blocks[b].cols; ++c) {
                    const double d =
                        static_cast<double>(v_blocks[b].at(r, c)) - static_cast<double>(cw[c]);
                    err_num += d * d;
                    err_den += static_cast<double>(v_blocks[b].at(r, c)) *
                               static_cast<double>(v_blocks[b].at(r, c));
                }
            }
        }
        step.eps_per_layer.push_back(err_den > 0 ? std::sqrt(err_num / err_den) : 0.0);
    }

    if (update_weights) detail::optimizer_step(state, grads, bn_g_gamma, bn_g_beta);

    // message accounting
    for (std::size_t l = 0; l < L; ++l) {
        if (gat) {
            auto [intra, codeword] = detail::gat_message_count(st, views[l]);
            step.messages_intra += intra * spec.heads;
            step.messages_codeword += codeword * spec.heads;
        } else {
            for (const auto& mb : blocks[l]) {
                auto [intra, codeword] = message_count(mb);
                step.messages_intra += intra;
                step.messages_codeword += codeword;
            }
        }
    }
    return step;
}

// Transductive or inductive logits over every node of `data`, batched over
// chunks; weights, codebooks and batch-norm statistics are frozen.
template <typename T>
DenseMatrix<T> infer_logits(const TrainState<T>& state, const DatasetBundle& data,
                            bool inductive) {
    const auto spec = state.cfg.conv_spec();
    if (data.features.cols != state.widths.front())
        throw input_error("infer: feature width mismatch");
    if (!inductive && data.n() != state.assign.front().n())
        throw input_error("infer: transductive inference needs the training graph");
    const std::size_t n = data.n();
    const std::size_t L = state.num_layers();
    const bool gat = spec.kind == ConvKind::GAT;
    auto host = ConvHost<T>::build(spec, data.graph);
    const std::size_t chunk = std::min<std::size_t>(state.cfg.batch_size, n);

    // working assignments: stored ones for transductive, recomputed per layer
    // from features for inductive
    std::vector<AssignmentTable> tables = state.assign;
    ProductVqConfig vq_cfg{state.cfg.f_prod, state.cfg.codebook_size, state.cfg.gamma,
                           state.cfg.beta};

    DenseMatrix<T> cur(n, state.widths.front());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < cur.cols; ++c)
            cur.at(r, c) = static_cast<T>(data.features.at(r, c));

    for (std::size_t l = 0; l < L; ++l) {
        if (inductive) {
            // nearest codeword over the feature columns of each branch
            AssignmentTable table;
            table.branch.resize(state.books[l].size());
            auto blocks_of_cur = split_blocks(cur, vq_cfg);
            for (std::size_t b = 0; b < state.books[l].size(); ++b) {
                table.branch[b].assign(n, 0);
                LayerVqView<T> probe;
                probe.feat_width = state.widths[l];
                probe.grad_width = state.grad_width(l);
                probe.f_prod = state.cfg.f_prod;
                const auto span = probe.feature_span(b);
                if (span.len == 0) continue;  // gradient-only branch, unused at inference
                const auto& cb = state.books[l][b];
                // whiten the feature slice with the branch's smoothed stats
                DenseMatrix<T> rows(n, span.len);
                DenseMatrix<T> cw(cb.k(), span.len);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < span.len; ++c)
                        rows.at(r, c) =
                            (blocks_of_cur[b].at(r, span.local0 + c) -
                             cb.stats.mean[span.local0 + c]) /
                            std::sqrt(cb.stats.var[span.local0 + c] + static_cast<T>(kVarFloor));
                for (std::size_t v = 0; v < cb.k(); ++v)
                    for (std::size_t c = 0; c < span.len; ++c)
                        cw.at(v, c) = cb.codewords.at(v, span.local0 + c);
                table.branch[b] = find_nearest(rows, cw);
            }
            if (l < tables.size()) tables[l] = std::move(table);
            else tables.push_back(std::move(table));
        }
        LayerVqView<T> view;
        view.table = &tables[l];
        view.feat_width = state.widths[l];
        view.grad_width = state.grad_width(l);
        view.f_prod = state.cfg.f_prod;
        for (const auto& cb : state.books[l]) view.raw.push_back(cb.unwhitened());

        DenseMatrix<T> next(n, state.widths[l + 1]);
        for (std::size_t c0 = 0; c0 < n; c0 += chunk) {
            MiniBatch mb;
            for (std::size_t i = c0; i < std::min(n, c0 + chunk); ++i)
                mb.indices.push_back(static_cast<Index>(i));
            DenseMatrix<T> x_b(mb.size(), cur.cols);
            for (std::size_t r = 0; r < mb.size(); ++r)
                for (std::size_t c = 0; c < cur.cols; ++c) x_b.at(r, c) = cur.at(mb.indices[r], c);
            DenseMatrix<T> z;
            if (gat) {
                auto st = gat_batch_structure(row_slice(host.c[0], mb.indices),
                                              row_slice(host.ct[0], mb.indices), mb);
                GatApproxCache<T> cache;
                z = gat_approx_forward(spec, st, view, state.weights[l], x_b, Nonlin::Identity,
                                       cache);
            } else {
                std::vector<MessageBlock<T>> blocks;
                for (std::size_t s = 0; s < host.c.size(); ++s)
                    blocks.push_back(assemble_block(row_slice(host.c[s], mb.indices),
                                                    row_slice(host.ct[s], mb.indices), view, mb));
                z = approx_forward(spec, blocks, view, state.weights[l], x_b, Nonlin::Identity);
            }
            for (std::size_t r = 0; r < mb.size(); ++r)
                for (std::size_t c = 0; c < z.cols; ++c) next.at(mb.indices[r], c) = z.at(r, c);
        }
        if (l + 1 < L) {
            auto bn_copy = state.bn[l];  // eval mode leaves running stats untouched
            DenseMatrix<T> h = state.cfg.batch_norm
                                   ? batchnorm_forward(bn_copy, next, false, static_cast<BatchNormCache<T>*>(nullptr))
                                   : next;
            detail::apply_act_forward(state.cfg.hidden_act, h, cur);
        } else {
            cur = next;
        }
    }
    return cur;
}

template <typename T>
double masked_accuracy(const DenseMatrix<T>& logits, const DatasetBundle& data,
                       const std::vector<char>& mask) {
    auto pred = argmax_rows(logits);
    std::size_t hit = 0, total = 0;
    for (std::size_t i = 0; i < data.n(); ++i) {
        if (!mask[i] || data.labels[i] < 0) continue;
        ++total;
        if (pred[i] == data.labels[i]) ++hit;
    }
    return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

template <typename T>
struct TrainResult {
    TrainState<T> state;
    std::vector<EpochMetrics> metrics;
};

// Mini-batch VQ training over the full epoch schedule. Deterministic for a
// fixed (config, data, seed).
template <typename T>
TrainResult<T> train(const ModelConfig& cfg, const DatasetBundle& data) {
    auto state = make_state<T>(cfg, data);
    const auto spec = cfg.conv_spec();
    auto host = ConvHost<T>::build(spec, data.graph);
    auto adj = adjacency_lists(data.graph);
    auto srng = make_rng(cfg.seed, 11);
    const std::size_t n = data.n();
    const std::size_t b = std::min(cfg.batch_size, n);
    const std::size_t iters = (n + b - 1) / b;

    std::vector<EpochMetrics> metrics;
    const auto t0 = std::chrono::steady_clock::now();
    double best_val = -1;
    std::size_t since_best = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochMetrics em;
        em.epoch = epoch;
        em.eps_per_layer.assign(cfg.layers, 0.0);
        double loss_sum = 0;
        for (std::size_t it = 0; it < iters; ++it) {
            const std::size_t bsz = (it + 1 == iters) ? n - b * (iters - 1) : b;
            MiniBatch batch{sample_minibatch(cfg.sampler, bsz, data.graph, adj, srng,
                                             cfg.walk_len)};
            BatchStep<T> step;
            try {
                step = train_step(state, data, host, batch);
            } catch (const run_error&) {
                throw run_error("training diverged at epoch " + std::to_string(epoch));
            }
            loss_sum += step.loss;
            em.messages_intra += step.messages_intra;
            em.messages_codeword += step.messages_codeword;
            for (std::size_t l = 0; l < cfg.layers; ++l)
                em.eps_per_layer[l] += step.eps_per_layer[l] / static_cast<double>(iters);
        }
        em.train_loss = loss_sum / static_cast<double>(iters);
        auto logits = infer_logits(state, data, false);
        em.val_acc = masked_accuracy(logits, data, data.val_mask);
        em.test_acc = masked_accuracy(logits, data, data.test_mask);
        em.wall_secs = cfg.record_timing
                           ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                                 .count()
                           : 0.0;
        metrics.push_back(em);
        state.epochs_done = epoch + 1;
        if (cfg.early_stop_patience > 0) {
            if (em.val_acc > best_val) {
                best_val = em.val_acc;
                since_best = 0;
            } else if (++since_best >= cfg.early_stop_patience) {
                break;
            }
        }
    }
    return {std::move(state), std::move(metrics)};
}

// Full-graph oracle trainer: one exact full-batch step per epoch, same
// initialization, loss, optimizer and batch-norm placement as train().
template <typename T>
TrainResult<T> train_full(const ModelConfig& cfg, const DatasetBundle& data) {
    auto state = make_state<T>(cfg, data);
    const auto spec = cfg.conv_spec();
    auto convs = build_fixed_convs<T>(data.graph, spec);
    const std::size_t L = cfg.layers;
    const std::size_t n = data.n();
    const bool bn_on = cfg.batch_norm;

    DenseMatrix<T> features(n, data.features.cols);
    for (std::size_t i = 0; i < features.data.size(); ++i)
        features.data[i] = static_cast<T>(data.features.data[i]);
    std::vector<std::int64_t> train_nodes;
    for (std::size_t i = 0; i < n; ++i)
        if (data.train_mask[i]) train_nodes.push_back(static_cast<std::int64_t>(i));

    std::vector<EpochMetrics> metrics;
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t full_nnz = 0;
    for (const auto& c : convs) full_nnz += c.nnz();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // forward
        std::vector<LayerCache<T>> caches(L);
        std::vector<BatchNormCache<T>> bn_caches(L);
        std::vector<DenseMatrix<T>> pre_act(L);
        DenseMatrix<T> cur = features;
        for (std::size_t l = 0; l < L; ++l) {
            auto z = full_forward(spec, convs, state.weights[l], cur, Nonlin::Identity,
                                  spec.kind == ConvKind::GAT, &caches[l]);
            if (l + 1 < L) {
                DenseMatrix<T> h =
                    bn_on ? batchnorm_forward(state.bn[l], z, true, &bn_caches[l]) : z;
                pre_act[l] = h;
                detail::apply_act_forward(cfg.hidden_act, h, cur);
            } else {
                cur = z;
            }
        }
        // loss over the train split
        DenseMatrix<T> logits(train_nodes.size(), state.widths.back());
        std::vector<std::int64_t> lab(train_nodes.size());
        for (std::size_t r = 0; r < train_nodes.size(); ++r) {
            for (std::size_t c = 0; c < logits.cols; ++c)
                logits.at(r, c) = cur.at(train_nodes[r], c);
            lab[r] = data.labels[train_nodes[r]];
        }
        auto res = softmax_xent(logits, lab);
        if (!std::isfinite(res.loss))
            throw run_error("training diverged at epoch " + std::to_string(epoch));
        DenseMatrix<T> grad(n, state.widths.back());
        for (std::size_t r = 0; r < train_nodes.size(); ++r)
            for (std::size_t c = 0; c < grad.cols; ++c)
                grad.at(train_nodes[r], c) = res.grad.at(r, c);

        // backward
        std::vector<GradWeights<T>> grads;
        for (std::size_t l = 0; l < L; ++l)
            grads.push_back(GradWeights<T>::zeros_like(state.weights[l]));
        std::vector<std::vector<T>> bn_g_gamma(L), bn_g_beta(L);
        for (std::size_t l = 0; l + 1 < L; ++l) {
            bn_g_gamma[l].assign(state.widths[l + 1], T(0));
            bn_g_beta[l].assign(state.widths[l + 1], T(0));
        }
        for (std::size_t l = L; l-- > 0;) {
            DenseMatrix<T> grad_z;
            if (l + 1 < L) {
                DenseMatrix<T> gh(grad.rows, grad.cols);
                for (std::size_t i = 0; i < grad.data.size(); ++i)
                    gh.data[i] = grad.data[i] * nonlin_deriv(cfg.hidden_act, pre_act[l].data[i]);
                grad_z = bn_on ? batchnorm_backward(state.bn[l], bn_caches[l], gh, bn_g_gamma[l],
                                                    bn_g_beta[l])
                               : gh;
            } else {
                grad_z = grad;
            }
            grad = full_backward(spec, convs, state.weights[l], grad_z, caches[l], grads[l]);
        }
        detail::optimizer_step(state, grads, bn_g_gamma, bn_g_beta);

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = res.loss;
        em.messages_intra = full_nnz;
        // evaluate with the same full path in eval mode
        {
            DenseMatrix<T> ev = features;
            for (std::size_t l = 0; l < L; ++l) {
                auto z = full_forward(spec, convs, state.weights[l], ev, Nonlin::Identity,
                                      spec.kind == ConvKind::GAT);
                if (l + 1 < L) {
                    auto bn_copy = state.bn[l];
                    DenseMatrix<T> h =
                        bn_on ? batchnorm_forward(bn_copy, z, false, static_cast<BatchNormCache<T>*>(nullptr)) : z;
                    detail::apply_act_forward(cfg.hidden_act, h, ev);
                } else {
                    ev = z;
                }
            }
            em.val_acc = masked_accuracy(ev, data, data.val_mask);
            em.test_acc = masked_accuracy(ev, data, data.test_mask);
        }
        em.wall_secs = cfg.record_timing
                           ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                                 .count()
                           : 0.0;
        metrics.push_back(em);
        state.epochs_done = epoch + 1;
    }
    return {std::move(state), std::move(metrics)};
}

}  // namespace vqgnn
