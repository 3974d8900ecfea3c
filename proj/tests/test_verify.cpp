#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "vqgnn/verify.hpp"

using namespace vqgnn;

TEST_CASE("forward bound certificate") {
    SECTION("lossless quantization gives zero on both sides") {
        // eps = 0 collapses the bound to 0 <= 0; the exactness suites already
        // show the estimator is exact there, so the slack rule must accept it
        BoundTrial t;
        t.eps = 0.0;
        t.lhs = 0.0;
        t.rhs = 0.0;
        t.slack = t.rhs - t.lhs;
        REQUIRE(t.slack >= kBoundSlackTol);
    }
    SECTION("reconstruction error is definitionally eps times the input norm") {
        auto rng = make_rng(301);
        auto x = oracle::random_dense<double>(20, 3, rng);
        auto q = verify_detail::quantize_rows(x, 4, 3);
        auto x_hat = verify_detail::reconstruct(q, 20);
        const double lhs = verify_detail::frob_diff(x_hat, x);
        REQUIRE(lhs == Catch::Approx(q.eps * frob_norm(x)).epsilon(1e-9));
        REQUIRE(lhs <= q.eps * frob_norm(x) * std::sqrt(20.0) + 1e-12);
    }
    SECTION("random fixed-convolution instances all pass") {
        auto report = check_forward_bound(60, 11);
        REQUIRE(report.passed() == 60);
    }
}

TEST_CASE("backward bound certificate") {
    auto report = check_backward_bound(60, 13);
    REQUIRE(report.passed() == 60);
}

TEST_CASE("GAT all-codeword certificate") {
    auto report = check_gat_bound(40, 17);
    REQUIRE(report.passed() == 40);
    SECTION("trials carry positive finite bounds") {
        for (const auto& t : report.trials) {
            REQUIRE(std::isfinite(t.rhs));
            REQUIRE(t.rhs >= 0.0);
        }
    }
}

TEST_CASE("finite_diff_check") {
    SECTION("single linear GCN layer is near machine precision") {
        auto rep = finite_diff_check({ConvKind::GCN}, 8, 1, 5);
        REQUIRE(rep.max_rel < 1e-8);
    }
    SECTION("three-layer ReLU stacks for every kind") {
        for (ConvKind kind :
             {ConvKind::GCN, ConvKind::SageMean, ConvKind::GIN, ConvKind::GAT}) {
            ConvSpec spec{kind};
            if (kind == ConvKind::GAT) spec.heads = 2;
            auto rep = finite_diff_check(spec, 10, 3, 7);
            INFO("kind " << static_cast<int>(kind) << " worst " << rep.worst);
            REQUIRE(rep.max_rel < 1e-4);
        }
    }
}

TEST_CASE("sparse JL baseline") {
    auto rng = make_rng(307);
    Graph g = gen_er(128, 0.08, 19);
    auto conv = build_fixed_convs<double>(g, {ConvKind::GCN})[0];
    // smooth columns keep the relative event non-degenerate
    DenseMatrix<double> x(128, 3);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t c = 0; c < x.cols; ++c)
            x.at(r, c) = static_cast<double>(c + 1) + 0.2 * dist(rng);

    SECTION("infinite tolerance never fails") {
        JlConfig cfg;
        cfg.n = 128;
        cfg.k = 8;
        cfg.trials = 20;
        cfg.eps = 1e9;
        REQUIRE(sparse_jl_project(conv, x, cfg) == 0.0);
    }
    SECTION("failure rate decreases as k grows") {
        double prev = 2.0;
        for (std::size_t k : {8ull, 32ull, 128ull}) {
            JlConfig cfg;
            cfg.n = 128;
            cfg.k = k;
            cfg.trials = 40;
            cfg.eps = 0.5;
            cfg.seed = 3;
            const double rate = sparse_jl_project(conv, x, cfg);
            REQUIRE(rate <= prev + 1e-12);
            prev = rate;
        }
    }
    SECTION("invalid sparsity rejected") {
        JlConfig cfg;
        cfg.sparsity = 0.0;
        REQUIRE_THROWS_AS(sparse_jl_project(conv, x, cfg), config_error);
    }
}

TEST_CASE("equivalence_suite") {
    for (std::uint64_t seed : {1ull, 2ull}) {
        auto summary = equivalence_suite(seed);
        REQUIRE(summary.cases.size() == 16);
        for (const auto& c : summary.cases) {
            INFO(c.name << " rel " << c.max_rel);
            REQUIRE(c.pass);
        }
    }
}
