// Versioned binary checkpoint: model configuration, weights, codebooks,
// assignment tables and optimizer state. Little-endian, magic "VQGN".
#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vqgnn/common.hpp"
#include "vqgnn/trainer.hpp"

namespace vqgnn {

namespace ckpt {

constexpr char kMagic[4] = {'V', 'Q', 'G', 'N'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is, const std::string& path) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw input_error(path + ": truncated checkpoint");
    return v;
}

template <typename T>
void put_vec(std::ofstream& os, const std::vector<T>& v) {
    put(os, static_cast<std::uint64_t>(v.size()));
    os.write(reinterpret_cast<const char*>(v.data()), sizeof(T) * v.size());
}

template <typename T>
std::vector<T> get_vec(std::ifstream& is, const std::string& path) {
    const auto sz = get<std::uint64_t>(is, path);
    std::vector<T> v(sz);
    is.read(reinterpret_cast<char*>(v.data()), sizeof(T) * sz);
    if (!is) throw input_error(path + ": truncated checkpoint");
    return v;
}

template <typename T>
void put_mat(std::ofstream& os, const DenseMatrix<T>& m) {
    put(os, static_cast<std::uint64_t>(m.rows));
    put(os, static_cast<std::uint64_t>(m.cols));
    os.write(reinterpret_cast<const char*>(m.data.data()), sizeof(T) * m.data.size());
}

template <typename T>
DenseMatrix<T> get_mat(std::ifstream& is, const std::string& path) {
    const auto rows = get<std::uint64_t>(is, path);
    const auto cols = get<std::uint64_t>(is, path);
    DenseMatrix<T> m(rows, cols);
    is.read(reinterpret_cast<char*>(m.data.data()), sizeof(T) * m.data.size());
    if (!is) throw input_error(path + ": truncated checkpoint");
    return m;
}

inline void put_config(std::ofstream& os, const ModelConfig& c) {
    put(os, static_cast<std::uint32_t>(c.conv));
    put(os, static_cast<std::uint64_t>(c.layers));
    put(os, static_cast<std::uint64_t>(c.hidden));
    put(os, static_cast<std::uint64_t>(c.codebook_size));
    put(os, static_cast<std::uint64_t>(c.f_prod));
    put(os, static_cast<std::uint64_t>(c.batch_size));
    put(os, c.lr);
    put(os, c.smoothing);
    put(os, c.gamma);
    put(os, c.beta);
    put(os, static_cast<std::uint64_t>(c.epochs));
    put(os, static_cast<std::uint32_t>(c.sampler));
    put(os, c.seed);
    put(os, static_cast<std::uint64_t>(c.heads));
    put(os, c.lipschitz_bound);
    put(os, c.score_clamp);
    put(os, static_cast<std::uint8_t>(c.batch_norm));
    put(os, static_cast<std::uint32_t>(c.hidden_act));
    put(os, static_cast<std::uint64_t>(c.walk_len));
    put(os, static_cast<std::uint64_t>(c.early_stop_patience));
    put(os, static_cast<std::uint8_t>(c.record_timing));
}

inline ModelConfig get_config(std::ifstream& is, const std::string& path) {
    ModelConfig c;
    c.conv = static_cast<ConvKind>(get<std::uint32_t>(is, path));
    c.layers = get<std::uint64_t>(is, path);
    c.hidden = get<std::uint64_t>(is, path);
    c.codebook_size = get<std::uint64_t>(is, path);
    c.f_prod = get<std::uint64_t>(is, path);
    c.batch_size = get<std::uint64_t>(is, path);
    c.lr = get<double>(is, path);
    c.smoothing = get<double>(is, path);
    c.gamma = get<double>(is, path);
    c.beta = get<double>(is, path);
    c.epochs = get<std::uint64_t>(is, path);
    c.sampler = static_cast<SamplerKind>(get<std::uint32_t>(is, path));
    c.seed = get<std::uint64_t>(is, path);
    c.heads = get<std::uint64_t>(is, path);
    c.lipschitz_bound = get<double>(is, path);
    c.score_clamp = get<double>(is, path);
    c.batch_norm = get<std::uint8_t>(is, path) != 0;
    c.hidden_act = static_cast<Nonlin>(get<std::uint32_t>(is, path));
    c.walk_len = get<std::uint64_t>(is, path);
    c.early_stop_patience = get<std::uint64_t>(is, path);
    c.record_timing = get<std::uint8_t>(is, path) != 0;
    return c;
}

}  // namespace ckpt

template <typename T>
void save_checkpoint(const std::string& path, const TrainState<T>& state) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot write " + path);
    os.write(ckpt::kMagic, 4);
    ckpt::put(os, ckpt::kVersion);
    ckpt::put(os, static_cast<std::uint8_t>(sizeof(T)));  // scalar width
    ckpt::put_config(os, state.cfg);
    ckpt::put_vec(os, std::vector<std::uint64_t>(state.widths.begin(), state.widths.end()));
    ckpt::put(os, static_cast<std::uint64_t>(state.epochs_done));

    auto put_grad_like = [&](const GradWeights<T>& g) {
        ckpt::put(os, static_cast<std::uint64_t>(g.w.size()));
        for (const auto& m : g.w) ckpt::put_mat(os, m);
        ckpt::put(os, static_cast<std::uint64_t>(g.att.size()));
        for (const auto& a : g.att) ckpt::put_vec(os, a);
        ckpt::put(os, g.gin_eps);
    };
    for (std::size_t l = 0; l < state.num_layers(); ++l) {
        const auto& w = state.weights[l];
        ckpt::put(os, static_cast<std::uint64_t>(w.w.size()));
        for (const auto& m : w.w) ckpt::put_mat(os, m);
        ckpt::put(os, static_cast<std::uint64_t>(w.att.size()));
        for (const auto& a : w.att) ckpt::put_vec(os, a);
        ckpt::put(os, w.gin_eps);
        put_grad_like(state.opt[l]);
    }
    ckpt::put(os, static_cast<std::uint64_t>(state.bn.size()));
    for (std::size_t l = 0; l < state.bn.size(); ++l) {
        ckpt::put_vec(os, state.bn[l].gamma);
        ckpt::put_vec(os, state.bn[l].beta);
        ckpt::put_vec(os, state.bn[l].running_mean);
        ckpt::put_vec(os, state.bn[l].running_var);
        ckpt::put_vec(os, state.opt_bn_gamma[l]);
        ckpt::put_vec(os, state.opt_bn_beta[l]);
    }
    for (std::size_t l = 0; l < state.num_layers(); ++l) {
        ckpt::put(os, static_cast<std::uint64_t>(state.books[l].size()));
        for (const auto& cb : state.books[l]) {
            ckpt::put_mat(os, cb.codewords);
            ckpt::put_vec(os, cb.eta);
            ckpt::put_mat(os, cb.sums);
            ckpt::put_vec(os, cb.stats.mean);
            ckpt::put_vec(os, cb.stats.var);
            ckpt::put(os, cb.gamma);
            ckpt::put(os, cb.beta);
        }
        ckpt::put(os, static_cast<std::uint64_t>(state.assign[l].branch.size()));
        for (const auto& a : state.assign[l].branch) ckpt::put_vec(os, a);
    }
}

template <typename T>
TrainState<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw input_error("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, ckpt::kMagic, 4) != 0)
        throw input_error(path + ": bad checkpoint magic");
    const auto version = ckpt::get<std::uint32_t>(is, path);
    if (version != ckpt::kVersion) throw input_error(path + ": unsupported checkpoint version");
    const auto width = ckpt::get<std::uint8_t>(is, path);
    if (width != sizeof(T)) throw input_error(path + ": checkpoint scalar width mismatch");

    TrainState<T> state;
    state.cfg = ckpt::get_config(is, path);
    for (auto w : ckpt::get_vec<std::uint64_t>(is, path)) state.widths.push_back(w);
    state.epochs_done = ckpt::get<std::uint64_t>(is, path);

    auto get_grad_like = [&]() {
        GradWeights<T> g;
        const auto nw = ckpt::get<std::uint64_t>(is, path);
        for (std::uint64_t i = 0; i < nw; ++i) g.w.push_back(ckpt::get_mat<T>(is, path));
        const auto na = ckpt::get<std::uint64_t>(is, path);
        for (std::uint64_t i = 0; i < na; ++i) g.att.push_back(ckpt::get_vec<T>(is, path));
        g.gin_eps = ckpt::get<T>(is, path);
        return g;
    };
    for (std::size_t l = 0; l < state.cfg.layers; ++l) {
        LayerWeights<T> w;
        const auto nw = ckpt::get<std::uint64_t>(is, path);
        for (std::uint64_t i = 0; i < nw; ++i) w.w.push_back(ckpt::get_mat<T>(is, path));
        const auto na = ckpt::get<std::uint64_t>(is, path);
        for (std::uint64_t i = 0; i < na; ++i) w.att.push_back(ckpt::get_vec<T>(is, path));
        w.gin_eps = ckpt::get<T>(is, path);
        state.weights.push_back(std::move(w));
        state.opt.push_back(get_grad_like());
    }
    const auto nbn = ckpt::get<std::uint64_t>(is, path);
    for (std::uint64_t l = 0; l < nbn; ++l) {
        BatchNormState<T> bn;
        bn.gamma = ckpt::get_vec<T>(is, path);
        bn.beta = ckpt::get_vec<T>(is, path);
        bn.running_mean = ckpt::get_vec<T>(is, path);
        bn.running_var = ckpt::get_vec<T>(is, path);
        state.bn.push_back(std::move(bn));
        state.opt_bn_gamma.push_back(ckpt::get_vec<T>(is, path));
        state.opt_bn_beta.push_back(ckpt::get_vec<T>(is, path));
    }
    for (std::size_t l = 0; l < state.cfg.layers; ++l) {
        const auto nb = ckpt::get<std::uint64_t>(is, path);
        std::vector<Codebook<T>> books;
        for (std::uint64_t b = 0; b < nb; ++b) {
            Codebook<T> cb;
            cb.codewords = ckpt::get_mat<T>(is, path);
            cb.eta = ckpt::get_vec<T>(is, path);
            cb.sums = ckpt::get_mat<T>(is, path);
            cb.stats.mean = ckpt::get_vec<T>(is, path);
            cb.stats.var = ckpt::get_vec<T>(is, path);
            cb.gamma = ckpt::get<T>(is, path);
            cb.beta = ckpt::get<T>(is, path);
            books.push_back(std::move(cb));
        }
        state.books.push_back(std::move(books));
        AssignmentTable table;
        const auto nt = ckpt::get<std::uint64_t>(is, path);
        for (std::uint64_t b = 0; b < nt; ++b) table.branch.push_back(ckpt::get_vec<Index>(is, path));
        state.assign.push_back(std::move(table));
    }
    return state;
}

}  // namespace vqgnn
