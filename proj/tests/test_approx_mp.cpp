#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "vqgnn/approx_mp.hpp"
#include "vqgnn/conv.hpp"

using namespace vqgnn;

namespace {

Graph random_graph(std::size_t n, double p, Rng& rng) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::vector<std::pair<Index, Index>> edges;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (coin(rng) < p) edges.push_back({static_cast<Index>(i), static_cast<Index>(j)});
    return from_edge_list(std::move(edges), n, true);
}

// Lossless single-branch view: one codeword per node, raw values equal to the
// true per-node feature and gradient rows.
struct LosslessView {
    AssignmentTable table;
    LayerVqView<double> view;
};

LosslessView lossless_view(const DenseMatrix<double>& feats, const DenseMatrix<double>& grads) {
    LosslessView lv;
    const std::size_t n = feats.rows;
    const std::size_t width = feats.cols + grads.cols;
    lv.table.branch.resize(1);
    lv.table.branch[0].resize(n);
    for (std::size_t j = 0; j < n; ++j) lv.table.branch[0][j] = static_cast<Index>(j);
    DenseMatrix<double> raw(n, width);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < feats.cols; ++c) raw.at(r, c) = feats.at(r, c);
        for (std::size_t c = 0; c < grads.cols; ++c) raw.at(r, feats.cols + c) = grads.at(r, c);
    }
    lv.view.raw.push_back(std::move(raw));
    lv.view.feat_width = feats.cols;
    lv.view.grad_width = grads.cols;
    lv.view.f_prod = width;
    return lv;
}

std::vector<MessageBlock<double>> blocks_for(const std::vector<CsrMatrix<double>>& convs,
                                             const LayerVqView<double>& view,
                                             const MiniBatch& batch) {
    std::vector<MessageBlock<double>> blocks;
    for (const auto& c : convs) {
        auto c_b = row_slice(c, batch.indices);
        auto ct_b = row_slice(transpose(c), batch.indices);
        blocks.push_back(assemble_block(c_b, ct_b, view, batch));
    }
    return blocks;
}

DenseMatrix<double> rows_of(const DenseMatrix<double>& m, const std::vector<Index>& idx) {
    return oracle::row_slice(m, idx);
}

}  // namespace

TEST_CASE("assemble_block") {
    auto rng = make_rng(101);
    SECTION("full batch leaves codeword blocks empty") {
        Graph g = random_graph(6, 0.5, rng);
        auto convs = build_fixed_convs<double>(g, {ConvKind::GCN});
        MiniBatch batch{{0, 1, 2, 3, 4, 5}};
        DenseMatrix<double> feats(6, 2), grads(6, 2);
        auto lv = lossless_view(feats, grads);
        lv.view.table = &lv.table;
        auto mb = assemble_block(row_slice(convs[0], batch.indices),
                                 row_slice(transpose(convs[0]), batch.indices), lv.view, batch);
        REQUIRE(mb.out_blocks[0].nnz() == 0);
        REQUIRE(mb.t_out_blocks[0].nnz() == 0);
        REQUIRE(oracle::max_abs_diff(mb.c_in.to_dense(), to_dense(convs[0])) == 0.0);
    }
    SECTION("identity quantization reproduces C_out with permuted columns") {
        Graph g = random_graph(7, 0.5, rng);
        auto convs = build_fixed_convs<double>(g, {ConvKind::GCN});
        MiniBatch batch{{1, 4}};
        DenseMatrix<double> feats(7, 2), grads(7, 2);
        auto lv = lossless_view(feats, grads);
        lv.view.table = &lv.table;
        auto c_b = row_slice(convs[0], batch.indices);
        auto mb = assemble_block(c_b, row_slice(transpose(convs[0]), batch.indices), lv.view, batch);
        auto [c_in, c_out] = split_in_out(c_b, batch.indices);
        // with R(j) = j the codeword columns are the node columns
        REQUIRE(oracle::max_abs_diff(mb.out_blocks[0].to_dense(), to_dense(c_out)) == 0.0);
    }
    SECTION("hand-set assignments sum column groups") {
        // path graph 0-1-2-3-4, GCN rows for batch {0, 1}
        Graph g = from_edge_list({{0, 1}, {1, 2}, {2, 3}, {3, 4}}, 5, true);
        auto convs = build_fixed_convs<double>(g, {ConvKind::GCN});
        MiniBatch batch{{0, 1}};
        AssignmentTable table;
        table.branch = {{0, 0, 1, 1, 0}};  // hand grouping of the 5 nodes into k = 2
        LayerVqView<double> view;
        view.table = &table;
        view.raw.push_back(DenseMatrix<double>(2, 4));
        view.feat_width = 2;
        view.grad_width = 2;
        view.f_prod = 4;
        auto c_b = row_slice(convs[0], batch.indices);
        auto mb = assemble_block(c_b, row_slice(transpose(convs[0]), batch.indices), view, batch);
        auto dense_cb = to_dense(c_b);
        auto got = mb.out_blocks[0].to_dense();
        for (std::size_t r = 0; r < 2; ++r) {
            double g0 = 0, g1 = 0;  // hand-summed column groups over out-of-batch nodes
            for (std::size_t j = 2; j < 5; ++j)
                (table.branch[0][j] == 0 ? g0 : g1) += dense_cb.at(r, j);
            REQUIRE(got.at(r, 0) == Catch::Approx(g0).margin(1e-15));
            REQUIRE(got.at(r, 1) == Catch::Approx(g1).margin(1e-15));
        }
    }
    SECTION("message conservation: every nonzero lands in exactly one block") {
        for (int t = 0; t < 10; ++t) {
            Graph g = random_graph(9, 0.4, rng);
            auto convs = build_fixed_convs<double>(g, {ConvKind::GCN});
            MiniBatch batch{{0, 2, 5}};
            DenseMatrix<double> feats(9, 2), grads(9, 2);
            auto lv = lossless_view(feats, grads);
            lv.view.table = &lv.table;
            auto c_b = row_slice(convs[0], batch.indices);
            auto mb = assemble_block(c_b, row_slice(transpose(convs[0]), batch.indices), lv.view, batch);
            double total_cb = 0;
            for (auto v : c_b.values) total_cb += v;
            double total_blocks = 0;
            for (std::size_t r = 0; r < 3; ++r)
                for (const auto& [c, v] : mb.c_in.row[r]) {
                    (void)c;
                    total_blocks += v;
                }
            for (std::size_t r = 0; r < 3; ++r)
                for (const auto& [c, v] : mb.out_blocks[0].row[r]) {
                    (void)c;
                    total_blocks += v;
                }
            REQUIRE(total_blocks == Catch::Approx(total_cb).epsilon(1e-12));
        }
    }
    SECTION("assignment index out of range is a state error") {
        Graph g = random_graph(5, 0.6, rng);
        auto convs = build_fixed_convs<double>(g, {ConvKind::GCN});
        MiniBatch batch{{0, 1}};
        AssignmentTable table;
        table.branch = {{0, 0, 9, 0, 0}};  // out-of-batch neighbor with index 9 >= k
        LayerVqView<double> view;
        view.table = &table;
        view.raw.push_back(DenseMatrix<double>(2, 4));
        view.feat_width = 2;
        view.grad_width = 2;
        view.f_prod = 4;
        auto c_b = row_slice(convs[0], batch.indices);
        REQUIRE_THROWS_AS(
            assemble_block(c_b, row_slice(transpose(convs[0]), batch.indices), view, batch),
            state_error);
    }
}

TEST_CASE("message_count") {
    auto rng = make_rng(107);
    SECTION("full batch counts no codeword messages") {
        Graph g = random_graph(6, 0.5, rng);
        auto convs = build_fixed_convs<double>(g, {ConvKind::GCN});
        MiniBatch batch{{0, 1, 2, 3, 4, 5}};
        DenseMatrix<double> feats(6, 2), grads(6, 2);
        auto lv = lossless_view(feats, grads);
        lv.view.table = &lv.table;
        auto blocks = blocks_for(convs, lv.view, batch);
        auto [intra, codeword] = message_count(blocks[0]);
        REQUIRE(codeword == 0);
        REQUIRE(intra == convs[0].nnz());
    }
    SECTION("no intra-batch edges on the adjacency support") {
        // two disjoint edges; batch takes one endpoint of each
        Graph g = from_edge_list({{0, 1}, {2, 3}}, 4, true);
        auto convs = build_fixed_convs<double>(g, {ConvKind::GIN});
        MiniBatch batch{{0, 2}};
        DenseMatrix<double> feats(4, 2), grads(4, 2);
        auto lv = lossless_view(feats, grads);
        lv.view.table = &lv.table;
        auto blocks = blocks_for(convs, lv.view, batch);
        auto [intra, codeword] = message_count(blocks[0]);  // support A
        REQUIRE(intra == 0);
        REQUIRE(codeword == 4);  // one out neighbor each, forward and transpose
        REQUIRE(codeword <= 2 * batch.size() * lv.view.k());
    }
}

TEST_CASE("approx_forward exactness limits (fixed convolutions)") {
    auto rng = make_rng(109);
    for (ConvKind kind : {ConvKind::GCN, ConvKind::SageMean, ConvKind::GIN}) {
        ConvSpec spec{kind};
        Graph g = random_graph(10, 0.35, rng);
        auto convs = build_fixed_convs<double>(g, spec);
        auto w = make_layer_weights<double>(spec, 3, 2, rng);
        if (kind == ConvKind::GIN) w.gin_eps = 0.4;
        auto x = oracle::random_dense<double>(10, 3, rng);

        auto full = full_forward(spec, convs, w, x, Nonlin::ReLU, false);

        SECTION(std::string("b = n, kind ") + std::to_string(static_cast<int>(kind))) {
            MiniBatch batch;
            for (Index i = 0; i < 10; ++i) batch.indices.push_back(i);
            DenseMatrix<double> grads(10, 2);
            auto lv = lossless_view(x, grads);
            lv.view.table = &lv.table;
            auto blocks = blocks_for(convs, lv.view, batch);
            auto got = approx_forward(spec, blocks, lv.view, w, x, Nonlin::ReLU);
            REQUIRE(oracle::rel_frob_diff(got, full) < 1e-12);
        }
        SECTION(std::string("k = n lossless, kind ") + std::to_string(static_cast<int>(kind))) {
            MiniBatch batch{{1, 3, 6}};
            DenseMatrix<double> grads(10, 2);
            auto lv = lossless_view(x, grads);
            lv.view.table = &lv.table;
            auto blocks = blocks_for(convs, lv.view, batch);
            auto x_b = rows_of(x, batch.indices);
            auto got = approx_forward(spec, blocks, lv.view, w, x_b, Nonlin::ReLU);
            auto want = rows_of(full, batch.indices);
            REQUIRE(oracle::rel_frob_diff(got, want) < 1e-6);
        }
    }
}

TEST_CASE("approx_forward hand example") {
    // edge graph 0 - 1, GCN, batch {0}, single codeword = x_1
    Graph g = from_edge_list({{0, 1}}, 2, true);
    ConvSpec spec{ConvKind::GCN};
    auto convs = build_fixed_convs<double>(g, spec);
    LayerWeights<double> w;
    w.w.push_back(dense_identity<double>(1));
    DenseMatrix<double> x(2, 1);
    x.at(0, 0) = 0.8;
    x.at(1, 0) = -0.4;

    MiniBatch batch{{0}};
    AssignmentTable table;
    table.branch = {{0, 0}};
    LayerVqView<double> view;
    view.table = &table;
    DenseMatrix<double> raw(1, 2);
    raw.at(0, 0) = x.at(1, 0);  // feature codeword = x_1, gradient half zero
    view.raw.push_back(raw);
    view.feat_width = 1;
    view.grad_width = 1;
    view.f_prod = 2;

    auto blocks = blocks_for(convs, view, batch);
    DenseMatrix<double> x_b(1, 1);
    x_b.at(0, 0) = x.at(0, 0);
    auto got = approx_forward(spec, blocks, view, w, x_b, Nonlin::Identity);
    REQUIRE(got.at(0, 0) == Catch::Approx(0.5 * 0.8 + 0.5 * -0.4));
}

TEST_CASE("approx_backward exactness limits (fixed convolutions)") {
    auto rng = make_rng(113);
    for (ConvKind kind : {ConvKind::GCN, ConvKind::SageMean, ConvKind::GIN}) {
        ConvSpec spec{kind};
        Graph g = random_graph(10, 0.35, rng);
        auto convs = build_fixed_convs<double>(g, spec);
        auto w = make_layer_weights<double>(spec, 3, 2, rng);
        if (kind == ConvKind::GIN) w.gin_eps = -0.2;
        auto x = oracle::random_dense<double>(10, 3, rng);
        auto grad_next = oracle::random_dense<double>(10, 2, rng);

        LayerCache<double> cache;
        full_forward(spec, convs, w, x, Nonlin::ReLU, false, &cache);
        auto gw_full = GradWeights<double>::zeros_like(w);
        auto gx_full = full_backward(spec, convs, w, grad_next, cache, gw_full);
        // post-nonlinearity gradients of every node, for the lossless grad half
        DenseMatrix<double> g_all(10, 2);
        for (std::size_t i = 0; i < g_all.data.size(); ++i)
            g_all.data[i] = grad_next.data[i] * nonlin_deriv(Nonlin::ReLU, cache.z.data[i]);

        SECTION(std::string("b = n, kind ") + std::to_string(static_cast<int>(kind))) {
            MiniBatch batch;
            for (Index i = 0; i < 10; ++i) batch.indices.push_back(i);
            auto lv = lossless_view(x, g_all);
            lv.view.table = &lv.table;
            auto blocks = blocks_for(convs, lv.view, batch);
            ApproxCache<double> acache;
            approx_forward(spec, blocks, lv.view, w, x, Nonlin::ReLU, &acache);
            auto gw = GradWeights<double>::zeros_like(w);
            auto res = approx_backward(spec, blocks, lv.view, w, grad_next, acache, gw);
            REQUIRE(oracle::rel_frob_diff(res.grad_x_b, gx_full) < 1e-12);
            for (std::size_t s = 0; s < gw.w.size(); ++s)
                REQUIRE(oracle::rel_frob_diff(gw.w[s], gw_full.w[s]) < 1e-12);
            if (kind == ConvKind::GIN)
                REQUIRE(gw.gin_eps == Catch::Approx(gw_full.gin_eps).epsilon(1e-10));
        }
        SECTION(std::string("k = n lossless, kind ") + std::to_string(static_cast<int>(kind))) {
            MiniBatch batch{{0, 4, 7, 9}};
            auto lv = lossless_view(x, g_all);
            lv.view.table = &lv.table;
            auto blocks = blocks_for(convs, lv.view, batch);
            auto x_b = rows_of(x, batch.indices);
            ApproxCache<double> acache;
            approx_forward(spec, blocks, lv.view, w, x_b, Nonlin::ReLU, &acache);
            auto gn_b = rows_of(grad_next, batch.indices);
            auto gw = GradWeights<double>::zeros_like(w);
            auto res = approx_backward(spec, blocks, lv.view, w, gn_b, acache, gw);
            REQUIRE(oracle::rel_frob_diff(res.grad_x_b, rows_of(gx_full, batch.indices)) < 1e-6);
            // batch-row weight-gradient estimator against the dense oracle
            auto c_b = to_dense(row_slice(convs[0], batch.indices));
            DenseMatrix<double> agg0;
            if (kind == ConvKind::GIN) {
                auto a_b = to_dense(row_slice(convs[0], batch.indices));
                agg0 = oracle::matmul(a_b, x);
                for (std::size_t r = 0; r < batch.size(); ++r)
                    for (std::size_t c = 0; c < 3; ++c)
                        agg0.at(r, c) += (1.0 + w.gin_eps) * x.at(batch.indices[r], c);
            } else {
                agg0 = oracle::matmul(c_b, x);
            }
            auto g_b = rows_of(g_all, batch.indices);
            auto want_w0 = oracle::matmul(oracle::transpose(agg0), g_b);
            REQUIRE(oracle::rel_frob_diff(gw.w[0], want_w0) < 1e-6);
        }
    }
}

TEST_CASE("approx_backward with zero codewords and isolated batch") {
    // batch forms its own component: no out-of-batch edges, G~ irrelevant
    Graph g = from_edge_list({{0, 1}, {2, 3}}, 4, true);
    ConvSpec spec{ConvKind::GCN};
    auto rng = make_rng(127);
    auto convs = build_fixed_convs<double>(g, spec);
    auto w = make_layer_weights<double>(spec, 2, 2, rng);
    auto x = oracle::random_dense<double>(4, 2, rng);
    MiniBatch batch{{0, 1}};
    DenseMatrix<double> zero_grads(4, 2);
    auto lv = lossless_view(x, zero_grads);
    lv.view.table = &lv.table;
    auto blocks = blocks_for(convs, lv.view, batch);
    REQUIRE(blocks[0].out_blocks[0].nnz() == 0);

    auto x_b = rows_of(x, batch.indices);
    ApproxCache<double> acache;
    approx_forward(spec, blocks, lv.view, w, x_b, Nonlin::Identity, &acache);
    auto gn = oracle::random_dense<double>(2, 2, rng);
    auto gw = GradWeights<double>::zeros_like(w);
    auto res = approx_backward(spec, blocks, lv.view, w, gn, acache, gw);
    // dense intra-batch backprop: C_in^T g W^T on the 2-node component
    auto c_in = blocks[0].c_in.to_dense();
    auto want = oracle::matmul(oracle::matmul(oracle::transpose(c_in), gn),
                               oracle::transpose(w.w[0]));
    REQUIRE(oracle::rel_frob_diff(res.grad_x_b, want) < 1e-12);
}

TEST_CASE("GAT approximated pass") {
    auto rng = make_rng(131);
    ConvSpec spec{ConvKind::GAT};
    spec.heads = 2;
    Graph g = random_graph(8, 0.4, rng);
    auto convs = build_fixed_convs<double>(g, spec);
    auto mask_t = transpose(convs[0]);
    auto w = make_layer_weights<double>(spec, 3, 2, rng);
    auto x = oracle::random_dense<double>(8, 3, rng);
    auto grad_next = oracle::random_dense<double>(8, 2, rng);

    // exact full-graph pass
    LayerCache<double> cache;
    auto full = full_forward(spec, convs, w, x, Nonlin::ReLU, true, &cache);
    auto gw_full = GradWeights<double>::zeros_like(w);
    auto gx_full = full_backward(spec, convs, w, grad_next, cache, gw_full);

    // harvest the true padded-message gradients via a b = n approximated pass
    MiniBatch all;
    for (Index i = 0; i < 8; ++i) all.indices.push_back(i);
    DenseMatrix<double> dummy(8, 2 * (3 + 1));
    auto lv_all = lossless_view(x, dummy);
    lv_all.view.table = &lv_all.table;
    auto st_all = gat_batch_structure(row_slice(convs[0], all.indices),
                                      row_slice(mask_t, all.indices), all);
    GatApproxCache<double> ac_all;
    auto out_all = gat_approx_forward(spec, st_all, lv_all.view, w, x, Nonlin::ReLU, ac_all);
    auto gw_all = GradWeights<double>::zeros_like(w);
    auto res_all =
        gat_approx_backward(spec, st_all, lv_all.view, w, grad_next, ac_all, gw_all);

    SECTION("b = n matches the full-graph layer") {
        REQUIRE(oracle::rel_frob_diff(out_all, full) < 1e-12);
        REQUIRE(oracle::rel_frob_diff(res_all.grad_x_b, gx_full) < 1e-12);
        for (std::size_t s = 0; s < spec.heads; ++s) {
            REQUIRE(oracle::rel_frob_diff(gw_all.w[s], gw_full.w[s]) < 1e-12);
            for (std::size_t i = 0; i < gw_all.att[s].size(); ++i)
                REQUIRE(gw_all.att[s][i] == Catch::Approx(gw_full.att[s][i]).margin(1e-12));
        }
    }
    SECTION("k = n lossless matches full-graph batch rows, forward and backward") {
        MiniBatch batch{{1, 2, 5}};
        auto lv = lossless_view(x, res_all.vq_grad_rows);  // true features and dM rows
        lv.view.table = &lv.table;
        auto st = gat_batch_structure(row_slice(convs[0], batch.indices),
                                      row_slice(mask_t, batch.indices), batch);
        auto x_b = rows_of(x, batch.indices);
        GatApproxCache<double> ac;
        auto out = gat_approx_forward(spec, st, lv.view, w, x_b, Nonlin::ReLU, ac);
        REQUIRE(oracle::rel_frob_diff(out, rows_of(full, batch.indices)) < 1e-6);

        auto gw = GradWeights<double>::zeros_like(w);
        auto res =
            gat_approx_backward(spec, st, lv.view, w, rows_of(grad_next, batch.indices), ac, gw);
        REQUIRE(oracle::rel_frob_diff(res.grad_x_b, rows_of(gx_full, batch.indices)) < 1e-6);
    }
}

TEST_CASE("learnable_block_values") {
    auto rng = make_rng(137);
    ConvSpec spec{ConvKind::GAT};
    spec.heads = 1;
    Graph g = random_graph(6, 0.5, rng);
    auto convs = build_fixed_convs<double>(g, spec);
    auto mask_t = transpose(convs[0]);
    auto x = oracle::random_dense<double>(6, 3, rng);
    MiniBatch batch{{0, 3}};
    auto st = gat_batch_structure(row_slice(convs[0], batch.indices),
                                  row_slice(mask_t, batch.indices), batch);

    SECTION("zero attention vector gives uniform rows regardless of the codebook") {
        auto w = make_layer_weights<double>(spec, 3, 2, rng);
        std::fill(w.att[0].begin(), w.att[0].end(), 0.0);
        // garbage codebook: uniform attention cannot see it
        DenseMatrix<double> junk_feats(6, 3, 123.0);
        DenseMatrix<double> junk_grads(6, 2);
        auto lv = lossless_view(junk_feats, junk_grads);
        lv.view.table = &lv.table;
        auto lb = learnable_block_values(spec, st, lv.view, w, rows_of(x, batch.indices), 0);
        for (std::size_t r = 0; r < 2; ++r) {
            const double deg =
                static_cast<double>(st.in_edges[r].size() + st.out_edges[r].size());
            for (const auto& [c, v] : lb.c_in.row[r]) {
                (void)c;
                REQUIRE(v == Catch::Approx(1.0 / deg));
            }
            double row_total = 0;
            for (const auto& [c, v] : lb.c_in.row[r]) {
                (void)c;
                row_total += v;
            }
            for (const auto& [c, v] : lb.out_blocks[0].row[r]) {
                (void)c;
                row_total += v;
            }
            REQUIRE(row_total == Catch::Approx(1.0));
        }
    }
    SECTION("lossless codebook reproduces the exact normalized scores") {
        auto w = make_layer_weights<double>(spec, 3, 2, rng);
        DenseMatrix<double> zero_grads(6, 2);
        auto lv = lossless_view(x, zero_grads);
        lv.view.table = &lv.table;
        auto lb = learnable_block_values(spec, st, lv.view, w, rows_of(x, batch.indices), 0);

        // exact normalized scores from the full-graph forward cache
        LayerCache<double> cache;
        full_forward(spec, convs, w, x, Nonlin::Identity, true, &cache);
        const auto& mask = convs[0];
        for (std::size_t r = 0; r < 2; ++r) {
            const Index i = batch.indices[r];
            auto block_dense = lb.out_blocks[0].to_dense();
            auto in_dense = lb.c_in.to_dense();
            for (std::size_t p = mask.row_begin(i); p < mask.row_end(i); ++p) {
                const Index j = mask.indices[p];
                const double want = cache.edge_u[0][p] / cache.row_sum[0][i];
                const bool in_batch = j == batch.indices[0] || j == batch.indices[1];
                if (in_batch) {
                    const std::size_t local = j == batch.indices[0] ? 0 : 1;
                    REQUIRE(in_dense.at(r, local) == Catch::Approx(want).epsilon(1e-6));
                } else {
                    REQUIRE(block_dense.at(r, j) == Catch::Approx(want).epsilon(1e-6));
                }
            }
        }
    }
}
