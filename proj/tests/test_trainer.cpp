#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "oracles.hpp"
#include "vqgnn/checkpoint.hpp"
#include "vqgnn/trainer.hpp"

using namespace vqgnn;

namespace {

DatasetBundle tiny_sbm(std::size_t n, std::uint64_t seed) {
    return gen_sbm(n, 2, 0.3, 0.05, 4, 1.5, seed);
}

}  // namespace

TEST_CASE("softmax_xent") {
    SECTION("uniform logits give ln C") {
        DenseMatrix<double> logits(3, 4, 0.25);
        auto res = softmax_xent(logits, {0, 1, 2});
        REQUIRE(res.loss == Catch::Approx(std::log(4.0)));
    }
    SECTION("confident correct prediction drives the loss to zero") {
        DenseMatrix<double> logits(1, 3);
        logits.at(0, 1) = 50.0;
        auto res = softmax_xent(logits, {1});
        REQUIRE(res.loss < 1e-12);
    }
    SECTION("invalid label rejected") {
        DenseMatrix<double> logits(1, 3);
        REQUIRE_THROWS_AS(softmax_xent(logits, {3}), input_error);
        REQUIRE_THROWS_AS(softmax_xent(logits, {-1}), input_error);
    }
    SECTION("gradient matches finite differences") {
        auto rng = make_rng(211);
        auto logits = oracle::random_dense<double>(5, 3, rng);
        std::vector<std::int64_t> labels{0, 2, 1, 1, 0};
        auto res = softmax_xent(logits, labels);
        const double h = 1e-6;
        for (std::size_t i = 0; i < logits.data.size(); ++i) {
            const double x0 = logits.data[i];
            logits.data[i] = x0 + h;
            const double lp = softmax_xent(logits, labels).loss;
            logits.data[i] = x0 - h;
            const double lm = softmax_xent(logits, labels).loss;
            logits.data[i] = x0;
            REQUIRE(std::abs((lp - lm) / (2 * h) - res.grad.data[i]) < 1e-6);
        }
    }
}

TEST_CASE("rms_step") {
    SECTION("zero gradient leaves the parameter alone") {
        double p = 1.5, g = 0.0, acc = 0.2;
        rms_step(&p, &g, &acc, 1, 0.1, 0.9);
        REQUIRE(p == 1.5);
    }
    SECTION("rho = 0 steps by roughly lr * sign(g)") {
        double p = 0.0, g = -3.7, acc = 0.0;
        rms_step(&p, &g, &acc, 1, 0.01, 0.0);
        REQUIRE(p == Catch::Approx(0.01).epsilon(1e-6));
    }
    SECTION("repeated constant gradient approaches the sign-step limit") {
        double p = 0.0, acc = 0.0;
        const double g = 0.5, lr = 1e-3;
        double prev = p;
        for (int i = 0; i < 400; ++i) {
            prev = p;
            double gg = g;
            rms_step(&p, &gg, &acc, 1, lr, 0.9);
        }
        REQUIRE(std::abs(prev - p) == Catch::Approx(lr).epsilon(1e-3));
    }
    SECTION("non-finite gradient rejected") {
        double p = 0, g = std::numeric_limits<double>::quiet_NaN(), acc = 0;
        REQUIRE_THROWS_AS(rms_step(&p, &g, &acc, 1, 0.1, 0.9), numeric_error);
    }
}

TEST_CASE("sample_minibatch") {
    auto rng = make_rng(223);
    SECTION("b = n returns every node for every strategy") {
        Graph g = gen_er(12, 0.3, 5);
        auto adj = adjacency_lists(g);
        for (auto strat : {SamplerKind::Nodes, SamplerKind::Edges, SamplerKind::RandomWalk}) {
            auto s = sample_minibatch(strat, 12, g, adj, rng);
            REQUIRE(s.size() == 12);
            for (std::size_t i = 0; i < 12; ++i) REQUIRE(s[i] == i);
        }
    }
    SECTION("b > n rejected") {
        Graph g = gen_er(4, 0.5, 5);
        auto adj = adjacency_lists(g);
        REQUIRE_THROWS_AS(sample_minibatch(SamplerKind::Nodes, 5, g, adj, rng), input_error);
    }
    SECTION("node sampling is uniform") {
        Graph g = gen_er(10, 0.3, 7);
        auto adj = adjacency_lists(g);
        std::vector<std::size_t> counts(10, 0);
        const std::size_t draws = 10000, b = 3;
        for (std::size_t t = 0; t < draws; ++t)
            for (auto v : sample_minibatch(SamplerKind::Nodes, b, g, adj, rng)) ++counts[v];
        const double expect = static_cast<double>(draws * b) / 10.0;
        const double sigma = std::sqrt(static_cast<double>(draws) * 0.3 * 0.7);
        for (auto c : counts)
            REQUIRE(std::abs(static_cast<double>(c) - expect) <= 3.0 * sigma);
    }
    SECTION("walks stay inside their component") {
        // two disjoint 5-cliques
        std::vector<std::pair<Index, Index>> edges;
        for (Index i = 0; i < 5; ++i)
            for (Index j = i + 1; j < 5; ++j) {
                edges.push_back({i, j});
                edges.push_back({static_cast<Index>(i + 5), static_cast<Index>(j + 5)});
            }
        Graph g = from_edge_list(std::move(edges), 10, true);
        auto adj = adjacency_lists(g);
        for (int t = 0; t < 200; ++t) {
            auto s = sample_minibatch(SamplerKind::RandomWalk, 2, g, adj, rng, 1);
            REQUIRE(s.size() == 2);
            REQUIRE((s[0] < 5) == (s[1] < 5));
        }
    }
    SECTION("edge sampling returns exactly b distinct sorted nodes") {
        Graph g = gen_er(20, 0.1, 9);
        auto adj = adjacency_lists(g);
        for (std::size_t b : {1ul, 7ul, 19ul}) {
            auto s = sample_minibatch(SamplerKind::Edges, b, g, adj, rng);
            REQUIRE(s.size() == b);
            for (std::size_t i = 1; i < s.size(); ++i) REQUIRE(s[i] > s[i - 1]);
        }
    }
}

TEST_CASE("batchnorm gradients match finite differences") {
    auto rng = make_rng(227);
    auto x = oracle::random_dense<double>(6, 3, rng);
    auto target = oracle::random_dense<double>(6, 3, rng);
    auto bn = BatchNormState<double>::init(3);
    bn.gamma = {1.2, 0.7, 1.0};
    bn.beta = {0.1, -0.2, 0.0};

    auto loss_of = [&](const DenseMatrix<double>& input) {
        auto bn_copy = bn;
        auto out = batchnorm_forward(bn_copy, input, true, static_cast<BatchNormCache<double>*>(nullptr));
        double l = 0;
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            const double d = out.data[i] - target.data[i];
            l += 0.5 * d * d;
        }
        return l;
    };

    auto bn_run = bn;
    BatchNormCache<double> cache;
    auto out = batchnorm_forward(bn_run, x, true, &cache);
    DenseMatrix<double> gout(6, 3);
    for (std::size_t i = 0; i < gout.data.size(); ++i) gout.data[i] = out.data[i] - target.data[i];
    std::vector<double> ggamma(3, 0.0), gbeta(3, 0.0);
    auto gx = batchnorm_backward(bn, cache, gout, ggamma, gbeta);

    const double h = 1e-6;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double x0 = x.data[i];
        x.data[i] = x0 + h;
        const double lp = loss_of(x);
        x.data[i] = x0 - h;
        const double lm = loss_of(x);
        x.data[i] = x0;
        const double num = (lp - lm) / (2 * h);
        REQUIRE(std::abs(num - gx.data[i]) < 1e-5);
    }
}

TEST_CASE("training at b = n matches the full-graph oracle trainer") {
    auto data = tiny_sbm(24, 3);
    for (ConvKind kind : {ConvKind::GCN, ConvKind::GAT}) {
        ModelConfig cfg;
        cfg.conv = kind;
        cfg.layers = 2;
        cfg.hidden = 8;
        cfg.codebook_size = 4;
        cfg.f_prod = 3;
        cfg.batch_size = 24;  // full batch
        cfg.epochs = 1;
        cfg.heads = 2;
        cfg.seed = 5;
        cfg.record_timing = false;
        auto vq_run = train<double>(cfg, data);
        auto oracle_run = train_full<double>(cfg, data);
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            REQUIRE(oracle::rel_frob_diff(vq_run.state.weights[l].w[0],
                                          oracle_run.state.weights[l].w[0]) < 1e-5);
            for (std::size_t s = 0; s < vq_run.state.weights[l].att.size(); ++s)
                for (std::size_t i = 0; i < vq_run.state.weights[l].att[s].size(); ++i)
                    REQUIRE(vq_run.state.weights[l].att[s][i] ==
                            Catch::Approx(oracle_run.state.weights[l].att[s][i]).margin(1e-8));
        }
        REQUIRE(vq_run.metrics[0].train_loss ==
                Catch::Approx(oracle_run.metrics[0].train_loss).margin(1e-9));
    }
}

TEST_CASE("lr = 0 freezes weights but codebooks still move") {
    auto data = tiny_sbm(20, 7);
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 6;
    cfg.codebook_size = 4;
    cfg.f_prod = 4;
    cfg.batch_size = 8;
    cfg.epochs = 1;
    cfg.lr = 0.0;
    cfg.seed = 3;
    cfg.record_timing = false;
    auto before = make_state<double>(cfg, data);
    auto run = train<double>(cfg, data);
    for (std::size_t l = 0; l < cfg.layers; ++l)
        REQUIRE(oracle::max_abs_diff(run.state.weights[l].w[0], before.weights[l].w[0]) == 0.0);
    double moved = 0;
    for (std::size_t l = 0; l < cfg.layers; ++l)
        for (std::size_t b = 0; b < run.state.books[l].size(); ++b)
            moved += oracle::max_abs_diff(run.state.books[l][b].codewords,
                                          before.books[l][b].codewords);
    REQUIRE(moved > 0.0);
}

TEST_CASE("loss decreases after one step on a fixed batch with frozen codebooks") {
    auto data = tiny_sbm(30, 11);
    std::size_t improved = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ModelConfig cfg;
        cfg.layers = 2;
        cfg.hidden = 8;
        cfg.codebook_size = 8;
        cfg.f_prod = 4;
        cfg.batch_size = 30;
        cfg.lr = 1e-4;
        cfg.seed = seed;
        cfg.record_timing = false;
        auto state = make_state<double>(cfg, data);
        auto host = ConvHost<double>::build(cfg.conv_spec(), data.graph);
        MiniBatch batch;
        for (Index i = 0; i < 30; ++i) batch.indices.push_back(i);
        auto first = train_step(state, data, host, batch, /*update_codebooks=*/false,
                                /*update_weights=*/true);
        auto second = train_step(state, data, host, batch, /*update_codebooks=*/false,
                                 /*update_weights=*/false);
        if (second.loss < first.loss) ++improved;
    }
    REQUIRE(improved == 10);
}

TEST_CASE("deterministic metrics trace") {
    auto data = tiny_sbm(26, 13);
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 6;
    cfg.codebook_size = 8;
    cfg.f_prod = 4;
    cfg.batch_size = 10;
    cfg.epochs = 3;
    cfg.seed = 17;
    cfg.record_timing = false;
    auto a = train<double>(cfg, data);
    auto b = train<double>(cfg, data);
    REQUIRE(a.metrics.size() == b.metrics.size());
    for (std::size_t e = 0; e < a.metrics.size(); ++e) {
        REQUIRE(a.metrics[e].train_loss == b.metrics[e].train_loss);
        REQUIRE(a.metrics[e].val_acc == b.metrics[e].val_acc);
        REQUIRE(a.metrics[e].test_acc == b.metrics[e].test_acc);
        REQUIRE(a.metrics[e].messages_intra == b.metrics[e].messages_intra);
        REQUIRE(a.metrics[e].messages_codeword == b.metrics[e].messages_codeword);
        REQUIRE(a.metrics[e].eps_per_layer == b.metrics[e].eps_per_layer);
    }
}

TEST_CASE("per-epoch message totals obey the budget") {
    auto data = tiny_sbm(40, 19);
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 6;
    cfg.codebook_size = 4;
    cfg.f_prod = 4;
    cfg.batch_size = 8;
    cfg.epochs = 2;
    cfg.seed = 23;
    cfg.record_timing = false;
    auto run = train<double>(cfg, data);
    const double n = 40;
    const double d = static_cast<double>(run.state.cfg.layers);  // placeholder, reassigned below
    (void)d;
    const double avg_deg = static_cast<double>(data.graph.num_edges()) / n;
    const double budget = 4.0 * (n * (avg_deg + 1) + n * cfg.codebook_size) *
                          static_cast<double>(cfg.layers) * 2.0;  // supports x layers
    for (const auto& em : run.metrics)
        REQUIRE(static_cast<double>(em.messages_intra + em.messages_codeword) <= budget);
}

TEST_CASE("transductive inference equals the exact forward at full batch") {
    auto data = tiny_sbm(18, 29);
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 6;
    cfg.codebook_size = 4;
    cfg.f_prod = 4;
    cfg.batch_size = 18;
    cfg.epochs = 2;
    cfg.seed = 31;
    cfg.batch_norm = false;  // oracle-equivalence configuration
    cfg.record_timing = false;
    auto run = train<double>(cfg, data);
    auto logits = infer_logits(run.state, data, false);

    // with chunk = n the intra block covers the graph, so inference is exact
    auto spec = cfg.conv_spec();
    auto convs = build_fixed_convs<double>(data.graph, spec);
    DenseMatrix<double> cur(18, data.features.cols);
    for (std::size_t i = 0; i < cur.data.size(); ++i) cur.data[i] = data.features.data[i];
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        auto z = full_forward(spec, convs, run.state.weights[l], cur, Nonlin::Identity, false);
        if (l + 1 < cfg.layers) {
            DenseMatrix<double> act;
            detail::apply_act_forward(cfg.hidden_act, z, act);
            cur = act;
        } else {
            cur = z;
        }
    }
    REQUIRE(oracle::rel_frob_diff(logits, cur) < 1e-10);
}

TEST_CASE("inductive inference") {
    auto data = tiny_sbm(22, 37);
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 6;
    cfg.codebook_size = 6;
    cfg.f_prod = 4;
    cfg.batch_size = 8;
    cfg.epochs = 3;
    cfg.seed = 41;
    cfg.record_timing = false;
    auto run = train<double>(cfg, data);
    SECTION("feature width mismatch rejected") {
        auto bad = data;
        bad.features = DenseMatrix<double>(22, 7);
        REQUIRE_THROWS_AS(infer_logits(run.state, bad, true), input_error);
    }
    SECTION("identical isolated twins get identical logits") {
        // two extra isolated nodes with identical features
        DatasetBundle twin = data;
        const std::size_t n2 = 24;
        twin.graph.n = n2;
        twin.features = DenseMatrix<double>(n2, data.features.cols);
        for (std::size_t r = 0; r < 22; ++r)
            for (std::size_t c = 0; c < data.features.cols; ++c)
                twin.features.at(r, c) = data.features.at(r, c);
        for (std::size_t c = 0; c < data.features.cols; ++c) {
            twin.features.at(22, c) = 0.33 * static_cast<double>(c + 1);
            twin.features.at(23, c) = 0.33 * static_cast<double>(c + 1);
        }
        twin.labels.resize(n2, -1);
        twin.train_mask.resize(n2, 0);
        twin.val_mask.resize(n2, 0);
        twin.test_mask.resize(n2, 0);
        auto logits = infer_logits(run.state, twin, true);
        for (std::size_t c = 0; c < logits.cols; ++c)
            REQUIRE(logits.at(22, c) == logits.at(23, c));
    }
    SECTION("repeated inference is deterministic") {
        auto a = infer_logits(run.state, data, true);
        auto b = infer_logits(run.state, data, true);
        REQUIRE(oracle::max_abs_diff(a, b) == 0.0);
    }
}

TEST_CASE("checkpoint round trip") {
    auto data = tiny_sbm(16, 43);
    ModelConfig cfg;
    cfg.conv = ConvKind::GIN;
    cfg.layers = 2;
    cfg.hidden = 5;
    cfg.codebook_size = 4;
    cfg.f_prod = 3;
    cfg.batch_size = 6;
    cfg.epochs = 2;
    cfg.seed = 47;
    cfg.record_timing = false;
    auto run = train<double>(cfg, data);
    const std::string path = std::filesystem::temp_directory_path() / "vqgnn_ckpt_test.bin";
    save_checkpoint(path, run.state);
    auto loaded = load_checkpoint<double>(path);
    REQUIRE(loaded.widths == run.state.widths);
    REQUIRE(loaded.epochs_done == run.state.epochs_done);
    auto a = infer_logits(run.state, data, false);
    auto b = infer_logits(loaded, data, false);
    REQUIRE(oracle::max_abs_diff(a, b) == 0.0);
    SECTION("corrupt magic rejected") {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE";
        os.close();
        REQUIRE_THROWS_AS(load_checkpoint<double>(path), input_error);
    }
    std::filesystem::remove(path);
}
