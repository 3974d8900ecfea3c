// vqgnn command-line tool: train, infer, verify, gen, sweep.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "vqgnn/checkpoint.hpp"
#include "vqgnn/config.hpp"
#include "vqgnn/dataset.hpp"
#include "vqgnn/metrics_io.hpp"
#include "vqgnn/trainer.hpp"
#include "vqgnn/verify.hpp"

namespace fs = std::filesystem;
using namespace vqgnn;

namespace {

ModelConfig load_config_file(const std::string& path) {
    if (path.empty()) return {};
    std::ifstream is(path);
    if (!is) throw input_error("cannot open config file " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw input_error(std::string("config parse error: ") + e.what());
    }
    return config_from_json(j);
}

struct TrainArgs {
    std::string config_path, data_dir, out_dir = ".";
    double lr = -1;
    std::int64_t batch_size = -1, codebook_size = -1, layers = -1, epochs = -1, seed = -1;
    std::int64_t hidden = -1, f_prod = -1;
    std::string sampler, conv;
    bool no_timing = false, no_batch_norm = false, oracle = false;
};

ModelConfig resolve_config(const TrainArgs& a) {
    ModelConfig cfg = load_config_file(a.config_path);
    if (a.lr >= 0) cfg.lr = a.lr;
    if (a.batch_size >= 0) cfg.batch_size = static_cast<std::size_t>(a.batch_size);
    if (a.codebook_size >= 0) cfg.codebook_size = static_cast<std::size_t>(a.codebook_size);
    if (a.layers >= 0) cfg.layers = static_cast<std::size_t>(a.layers);
    if (a.epochs >= 0) cfg.epochs = static_cast<std::size_t>(a.epochs);
    if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
    if (a.hidden >= 0) cfg.hidden = static_cast<std::size_t>(a.hidden);
    if (a.f_prod >= 0) cfg.f_prod = static_cast<std::size_t>(a.f_prod);
    if (!a.sampler.empty()) cfg.sampler = sampler_from_string(a.sampler);
    if (!a.conv.empty()) cfg.conv = conv_kind_from_string(a.conv);
    if (a.no_timing) cfg.record_timing = false;
    if (a.no_batch_norm) cfg.batch_norm = false;
    cfg.validate();
    return cfg;
}

int cmd_train(const TrainArgs& a) {
    auto cfg = resolve_config(a);
    auto data = load_dataset(a.data_dir);
    fs::create_directories(a.out_dir);
    if (a.oracle) {
        auto run = train_full<float>(cfg, data);
        emit_metrics(a.out_dir, run.metrics);
        save_checkpoint(a.out_dir + "/checkpoint.bin", run.state);
    } else {
        auto run = train<float>(cfg, data);
        emit_metrics(a.out_dir, run.metrics);
        save_checkpoint(a.out_dir + "/checkpoint.bin", run.state);
    }
    std::cout << "wrote " << a.out_dir << "/metrics.jsonl and checkpoint.bin\n";
    return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& data_dir, const std::string& out_path,
              bool inductive) {
    auto state = load_checkpoint<float>(ckpt);
    auto data = load_dataset(data_dir);
    auto logits = infer_logits(state, data, inductive);
    auto pred = argmax_rows(logits);
    std::ofstream os(out_path);
    if (!os) throw io_error("cannot write " + out_path);
    os << "# node\tclass\n";
    for (std::size_t i = 0; i < pred.size(); ++i) os << i << '\t' << pred[i] << '\n';
    std::cout << "wrote " << out_path << '\n';
    return 0;
}

int cmd_verify(const std::string& out_path, std::size_t trials, std::uint64_t seed) {
    std::ofstream os(out_path);
    if (!os) throw io_error("cannot write " + out_path);
    bool all_ok = true;

    auto eq = equivalence_suite(seed);
    for (const auto& c : eq.cases) {
        os << nlohmann::json{{"check", "equivalence"},
                             {"case", c.name},
                             {"max_rel", c.max_rel},
                             {"pass", c.pass}}
                  .dump()
           << '\n';
        std::cout << (c.pass ? "pass" : "FAIL") << "  equivalence " << c.name << "  (rel "
                  << c.max_rel << ")\n";
        all_ok = all_ok && c.pass;
    }

    for (const auto& report :
         {check_forward_bound(trials, seed), check_backward_bound(trials, seed),
          check_gat_bound(trials, seed)}) {
        std::size_t t = 0;
        for (const auto& trial : report.trials)
            os << nlohmann::json{{"check", report.check}, {"trial", t++},  {"eps", trial.eps},
                                 {"lhs", trial.lhs},      {"rhs", trial.rhs},
                                 {"slack", trial.slack},  {"pass", trial.pass}}
                      .dump()
               << '\n';
        std::cout << (report.all_pass() ? "pass" : "FAIL") << "  " << report.check << "  "
                  << report.passed() << "/" << report.trials.size() << '\n';
        all_ok = all_ok && report.all_pass();
    }

    const ConvKind kinds[4] = {ConvKind::GCN, ConvKind::SageMean, ConvKind::GIN, ConvKind::GAT};
    const char* names[4] = {"gcn", "sage-mean", "gin", "gat"};
    for (int k = 0; k < 4; ++k) {
        ConvSpec spec{kinds[k]};
        if (spec.kind == ConvKind::GAT) spec.heads = 2;
        auto rep = finite_diff_check(spec, 10, 3, seed + k);
        os << nlohmann::json{{"check", "finite_diff"},
                             {"conv", names[k]},
                             {"max_rel", rep.max_rel},
                             {"worst", rep.worst},
                             {"pass", rep.pass}}
                  .dump()
           << '\n';
        std::cout << (rep.pass ? "pass" : "FAIL") << "  finite_diff " << names[k] << "  (max rel "
                  << rep.max_rel << ")\n";
        all_ok = all_ok && rep.pass;
    }

    {
        // sparse projection baseline: failure rate should fall as k grows
        auto rng = make_rng(seed, 321);
        Graph g = gen_er(256, 0.05, seed + 11);
        auto conv = build_fixed_convs<double>(g, {ConvKind::GCN})[0];
        DenseMatrix<double> x(256, 4);
        std::normal_distribution<double> dist(0.0, 1.0);
        for (std::size_t r = 0; r < x.rows; ++r)
            for (std::size_t c = 0; c < x.cols; ++c)
                x.at(r, c) = static_cast<double>(c + 1) + 0.2 * dist(rng);
        double prev = 2.0;
        bool monotone = true;
        for (std::size_t k2 : {16ull, 64ull, 256ull}) {
            JlConfig jc;
            jc.n = 256;
            jc.k = k2;
            jc.trials = 50;
            jc.eps = 0.5;
            jc.seed = seed;
            const double rate = sparse_jl_project(conv, x, jc);
            os << nlohmann::json{{"check", "sparse_jl"}, {"k", k2}, {"failure_rate", rate}}.dump()
               << '\n';
            monotone = monotone && rate <= prev + 1e-12;
            prev = rate;
        }
        std::cout << (monotone ? "pass" : "FAIL") << "  sparse_jl failure rate monotone in k\n";
        all_ok = all_ok && monotone;
    }

    os << nlohmann::json{{"check", "summary"}, {"all_pass", all_ok}}.dump() << '\n';
    std::cout << (all_ok ? "all checks passed" : "SOME CHECKS FAILED") << '\n';
    return all_ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mini-batch GNN training with vector-quantized message passing"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "train a model on a dataset directory");
    train_cmd->add_option("--config", ta.config_path, "JSON config file");
    train_cmd->add_option("--data", ta.data_dir, "dataset directory")->required();
    train_cmd->add_option("--out", ta.out_dir, "output directory");
    train_cmd->add_option("--lr", ta.lr, "learning rate override");
    train_cmd->add_option("--batch-size", ta.batch_size, "batch size override");
    train_cmd->add_option("--codebook-size", ta.codebook_size, "codebook size override");
    train_cmd->add_option("--layers", ta.layers, "layer count override");
    train_cmd->add_option("--hidden", ta.hidden, "hidden width override");
    train_cmd->add_option("--f-prod", ta.f_prod, "product-VQ block width override");
    train_cmd->add_option("--sampler", ta.sampler, "nodes | edges | random-walk");
    train_cmd->add_option("--conv", ta.conv, "gcn | sage-mean | gin | gat");
    train_cmd->add_option("--seed", ta.seed, "seed override");
    train_cmd->add_option("--epochs", ta.epochs, "epoch override");
    train_cmd->add_flag("--no-timing", ta.no_timing, "record wall_secs as 0 for bit-reproducible metrics");
    train_cmd->add_flag("--no-batch-norm", ta.no_batch_norm, "disable batch normalization");
    train_cmd->add_flag("--oracle", ta.oracle, "full-graph training instead of the VQ path");

    std::string ckpt_path, infer_data, infer_out = "predictions.tsv";
    bool inductive = false;
    auto* infer_cmd = app.add_subcommand("infer", "predict with a trained checkpoint");
    infer_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    infer_cmd->add_option("--data", infer_data, "dataset directory")->required();
    infer_cmd->add_option("--out", infer_out, "predictions path");
    infer_cmd->add_flag("--inductive", inductive, "assign unseen nodes to their nearest codewords");

    std::string verify_out = "verify_report.jsonl";
    std::size_t verify_trials = 100;
    std::uint64_t verify_seed = 0;
    auto* verify_cmd = app.add_subcommand("verify", "run the verification suites");
    verify_cmd->add_option("--out", verify_out, "JSON-lines report path");
    verify_cmd->add_option("--trials", verify_trials, "bound-check trials per theorem");
    verify_cmd->add_option("--seed", verify_seed, "seed");

    std::string gen_kind = "sbm", gen_out;
    std::size_t gen_n = 2000, gen_classes = 4, gen_feat = 32;
    double gen_pin = 0.02, gen_pout = 0.002, gen_sep = 1.0, gen_p = 0.01;
    std::uint64_t gen_seed = 0;
    auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic dataset directory");
    gen_cmd->add_option("--kind", gen_kind, "sbm | er");
    gen_cmd->add_option("--out", gen_out, "output directory")->required();
    gen_cmd->add_option("--n", gen_n, "node count");
    gen_cmd->add_option("--classes", gen_classes, "class count (sbm)");
    gen_cmd->add_option("--p-in", gen_pin, "intra-block edge probability (sbm)");
    gen_cmd->add_option("--p-out", gen_pout, "inter-block edge probability (sbm)");
    gen_cmd->add_option("--feat-dim", gen_feat, "feature dimension");
    gen_cmd->add_option("--sep", gen_sep, "class separation (sbm)");
    gen_cmd->add_option("--p", gen_p, "edge probability (er)");
    gen_cmd->add_option("--seed", gen_seed, "seed");

    TrainArgs sa;
    std::string sweep_flag, sweep_values;
    auto* sweep_cmd = app.add_subcommand("sweep", "grid over one flag, one metrics file per point");
    sweep_cmd->add_option("--flag", sweep_flag, "codebook-size | batch-size | layers | sampler")
        ->required();
    sweep_cmd->add_option("--values", sweep_values, "comma-separated values")->required();
    sweep_cmd->add_option("--config", sa.config_path, "JSON config file");
    sweep_cmd->add_option("--data", sa.data_dir, "dataset directory")->required();
    sweep_cmd->add_option("--out", sa.out_dir, "output directory");
    sweep_cmd->add_option("--seed", sa.seed, "seed override");
    sweep_cmd->add_option("--epochs", sa.epochs, "epoch override");
    sweep_cmd->add_flag("--no-timing", sa.no_timing, "record wall_secs as 0");

    try {
        app.parse(argc, argv);

        if (train_cmd->parsed()) return cmd_train(ta);
        if (infer_cmd->parsed()) return cmd_infer(ckpt_path, infer_data, infer_out, inductive);
        if (verify_cmd->parsed()) return cmd_verify(verify_out, verify_trials, verify_seed);
        if (gen_cmd->parsed()) {
            if (gen_kind == "sbm") {
                auto d = gen_sbm(gen_n, gen_classes, gen_pin, gen_pout, gen_feat, gen_sep,
                                 gen_seed);
                save_dataset(gen_out, d);
            } else if (gen_kind == "er") {
                DatasetBundle d;
                d.graph = gen_er(gen_n, gen_p, gen_seed);
                auto rng = make_rng(gen_seed, 3);
                std::normal_distribution<double> dist(0.0, 1.0);
                d.features = DenseMatrix<double>(gen_n, gen_feat);
                for (auto& v : d.features.data) v = dist(rng);
                d.labels.assign(gen_n, -1);
                d.train_mask.assign(gen_n, 0);
                d.val_mask.assign(gen_n, 0);
                d.test_mask.assign(gen_n, 0);
                save_dataset(gen_out, d);
            } else {
                throw input_error("unknown generator kind: " + gen_kind);
            }
            std::cout << "wrote " << gen_out << '\n';
            return 0;
        }
        if (sweep_cmd->parsed()) {
            std::vector<std::string> values;
            std::stringstream ss(sweep_values);
            std::string item;
            while (std::getline(ss, item, ',')) values.push_back(item);
            if (values.empty()) throw input_error("sweep: empty value list");
            fs::create_directories(sa.out_dir);
            for (const auto& v : values) {
                TrainArgs point = sa;
                if (sweep_flag == "codebook-size") point.codebook_size = std::stoll(v);
                else if (sweep_flag == "batch-size") point.batch_size = std::stoll(v);
                else if (sweep_flag == "layers") point.layers = std::stoll(v);
                else if (sweep_flag == "sampler") point.sampler = v;
                else throw input_error("sweep: unsupported flag " + sweep_flag);
                auto cfg = resolve_config(point);
                auto data = load_dataset(point.data_dir);
                auto run = train<float>(cfg, data);
                const std::string tag = sweep_flag + "_" + v;
                std::ofstream jl(sa.out_dir + "/metrics_" + tag + ".jsonl");
                for (const auto& em : run.metrics) jl << metrics_record(em).dump() << '\n';
                std::cout << "sweep point " << tag << ": final test acc "
                          << run.metrics.back().test_acc << '\n';
            }
            return 0;
        }
        return 1;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const input_error& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 1;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "run failure: " << e.what() << '\n';
        return 2;
    }
}
