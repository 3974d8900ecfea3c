// Dataset directory format and synthetic generators. A dataset directory
// holds edges.tsv, features.bin (magic "VQFT"), labels.tsv and splits.tsv;
// loaders validate the bundle invariants and report offsets on corruption.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vqgnn/common.hpp"
#include "vqgnn/dense.hpp"
#include "vqgnn/graph.hpp"

namespace vqgnn {

struct DatasetBundle {
    Graph graph;
    DenseMatrix<double> features;       // n x f0
    std::uint8_t feature_dtype = 1;     // 0 = f32, 1 = f64 (payload dtype on disk)
    std::vector<std::int64_t> labels;   // -1 = unlabeled
    std::vector<char> train_mask, val_mask, test_mask;

    std::size_t n() const { return graph.n; }
    std::size_t num_classes() const {
        std::int64_t hi = -1;
        for (auto l : labels) hi = std::max(hi, l);
        return static_cast<std::size_t>(hi + 1);
    }

    void validate() const {
        if (features.rows != graph.n) throw input_error("dataset: feature row count != n");
        if (labels.size() != graph.n || train_mask.size() != graph.n ||
            val_mask.size() != graph.n || test_mask.size() != graph.n)
            throw input_error("dataset: per-node arrays disagree with n");
        for (std::size_t i = 0; i < graph.n; ++i) {
            if ((train_mask[i] && val_mask[i]) || (train_mask[i] && test_mask[i]) ||
                (val_mask[i] && test_mask[i]))
                throw input_error("dataset: overlapping splits");
            if (train_mask[i] && labels[i] < 0)
                throw input_error("dataset: unlabeled node in the train split");
        }
        if (!all_finite(features.data.data(), features.data.size()))
            throw input_error("dataset: non-finite feature");
    }
};

namespace detail {

constexpr char kFeatureMagic[4] = {'V', 'Q', 'F', 'T'};
constexpr std::uint32_t kFeatureVersion = 1;

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is, const std::string& file, std::size_t* offset) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw input_error(file + ": truncated at byte " + std::to_string(*offset));
    *offset += sizeof(T);
    return v;
}

}  // namespace detail

inline void save_features(const std::string& path, const DenseMatrix<double>& f,
                          std::uint8_t dtype) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot write " + path);
    os.write(detail::kFeatureMagic, 4);
    detail::write_pod(os, detail::kFeatureVersion);
    detail::write_pod(os, static_cast<std::uint64_t>(f.rows));
    detail::write_pod(os, static_cast<std::uint64_t>(f.cols));
    detail::write_pod(os, dtype);
    if (dtype == 0) {
        for (double v : f.data) detail::write_pod(os, static_cast<float>(v));
    } else {
        for (double v : f.data) detail::write_pod(os, v);
    }
}

inline DenseMatrix<double> load_features(const std::string& path, std::uint8_t* dtype_out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw input_error("cannot open " + path);
    std::size_t offset = 0;
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, detail::kFeatureMagic, 4) != 0)
        throw input_error(path + ": bad magic at byte 0");
    offset = 4;
    const auto version = detail::read_pod<std::uint32_t>(is, path, &offset);
    if (version != detail::kFeatureVersion)
        throw input_error(path + ": unsupported version at byte 4");
    const auto rows = detail::read_pod<std::uint64_t>(is, path, &offset);
    const auto cols = detail::read_pod<std::uint64_t>(is, path, &offset);
    const auto dtype = detail::read_pod<std::uint8_t>(is, path, &offset);
    if (dtype > 1) throw input_error(path + ": unknown dtype at byte 20");
    DenseMatrix<double> f(rows, cols);
    for (auto& v : f.data) {
        if (dtype == 0) v = static_cast<double>(detail::read_pod<float>(is, path, &offset));
        else v = detail::read_pod<double>(is, path, &offset);
    }
    // must be exactly at end of file
    is.peek();
    if (!is.eof()) throw input_error(path + ": trailing bytes at byte " + std::to_string(offset));
    if (dtype_out) *dtype_out = dtype;
    return f;
}

inline void save_dataset(const std::string& dir, const DatasetBundle& d) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream os(dir + "/edges.tsv");
        if (!os) throw io_error("cannot write " + dir + "/edges.tsv");
        os << "# src\tdst\n";
        for (auto [s, t] : d.graph.edges)
            if (s <= t || d.graph.directed) os << s << '\t' << t << '\n';
    }
    save_features(dir + "/features.bin", d.features, d.feature_dtype);
    {
        std::ofstream os(dir + "/labels.tsv");
        for (std::size_t i = 0; i < d.n(); ++i)
            if (d.labels[i] >= 0) os << i << '\t' << d.labels[i] << '\n';
    }
    {
        std::ofstream os(dir + "/splits.tsv");
        for (std::size_t i = 0; i < d.n(); ++i) {
            if (d.train_mask[i]) os << i << "\ttrain\n";
            else if (d.val_mask[i]) os << i << "\tval\n";
            else if (d.test_mask[i]) os << i << "\ttest\n";
        }
    }
}

inline DatasetBundle load_dataset(const std::string& dir) {
    DatasetBundle d;
    d.features = load_features(dir + "/features.bin", &d.feature_dtype);
    const std::size_t n = d.features.rows;

    std::vector<std::pair<Index, Index>> edges;
    {
        std::ifstream is(dir + "/edges.tsv");
        if (!is) throw input_error("cannot open " + dir + "/edges.tsv");
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ss(line);
            std::uint64_t s, t;
            if (!(ss >> s >> t))
                throw input_error(dir + "/edges.tsv: malformed line " + std::to_string(lineno));
            if (s >= n || t >= n)
                throw input_error(dir + "/edges.tsv: node id out of range on line " +
                                  std::to_string(lineno));
            edges.push_back({static_cast<Index>(s), static_cast<Index>(t)});
        }
    }
    d.graph = from_edge_list(std::move(edges), n, true);

    d.labels.assign(n, -1);
    {
        std::ifstream is(dir + "/labels.tsv");
        if (!is) throw input_error("cannot open " + dir + "/labels.tsv");
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ss(line);
            std::uint64_t node;
            std::int64_t cls;
            if (!(ss >> node >> cls) || node >= n)
                throw input_error(dir + "/labels.tsv: malformed line " + std::to_string(lineno));
            d.labels[node] = cls;
        }
    }

    d.train_mask.assign(n, 0);
    d.val_mask.assign(n, 0);
    d.test_mask.assign(n, 0);
    {
        std::ifstream is(dir + "/splits.tsv");
        if (!is) throw input_error("cannot open " + dir + "/splits.tsv");
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ss(line);
            std::uint64_t node;
            std::string split;
            if (!(ss >> node >> split) || node >= n)
                throw input_error(dir + "/splits.tsv: malformed line " + std::to_string(lineno));
            if (split == "train") d.train_mask[node] = 1;
            else if (split == "val") d.val_mask[node] = 1;
            else if (split == "test") d.test_mask[node] = 1;
            else
                throw input_error(dir + "/splits.tsv: unknown split on line " +
                                  std::to_string(lineno));
        }
    }
    d.validate();
    return d;
}

// Planted-partition generator: equal-size blocks, intra-block edge
// probability p_in, inter-block p_out; features are the class direction
// scaled by sep plus unit Gaussian noise; 60/20/20 split stratified by class.
inline DatasetBundle gen_sbm(std::size_t n, std::size_t classes, double p_in, double p_out,
                             std::size_t feature_dim, double class_sep, std::uint64_t seed) {
    if (classes > n) throw input_error("gen_sbm: more classes than nodes");
    if (classes == 0) throw input_error("gen_sbm: need at least one class");
    if (p_in < 0 || p_in > 1 || p_out < 0 || p_out > 1)
        throw input_error("gen_sbm: probabilities must lie in [0, 1]");
    auto rng = make_rng(seed, 1);
    DatasetBundle d;
    std::vector<std::int64_t> block(n);
    for (std::size_t i = 0; i < n; ++i) block[i] = static_cast<std::int64_t>(i % classes);

    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::vector<std::pair<Index, Index>> edges;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double p = block[i] == block[j] ? p_in : p_out;
            if (coin(rng) < p) edges.push_back({static_cast<Index>(i), static_cast<Index>(j)});
        }
    d.graph = from_edge_list(std::move(edges), n, true);

    d.features = DenseMatrix<double>(n, feature_dim);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < feature_dim; ++c) d.features.at(i, c) = noise(rng);
        d.features.at(i, static_cast<std::size_t>(block[i]) % feature_dim) += class_sep;
    }
    d.labels = block;

    d.train_mask.assign(n, 0);
    d.val_mask.assign(n, 0);
    d.test_mask.assign(n, 0);
    // stratified 60/20/20: shuffle within each class, then cut
    for (std::size_t c = 0; c < classes; ++c) {
        std::vector<Index> members;
        for (std::size_t i = 0; i < n; ++i)
            if (block[i] == static_cast<std::int64_t>(c)) members.push_back(static_cast<Index>(i));
        for (std::size_t i = members.size(); i > 1; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i - 1);
            std::swap(members[i - 1], members[pick(rng)]);
        }
        const std::size_t tr = (members.size() * 6) / 10;
        const std::size_t va = (members.size() * 2) / 10;
        for (std::size_t i = 0; i < members.size(); ++i) {
            if (i < tr) d.train_mask[members[i]] = 1;
            else if (i < tr + va) d.val_mask[members[i]] = 1;
            else d.test_mask[members[i]] = 1;
        }
    }
    d.validate();
    return d;
}

// Erdos-Renyi: each unordered pair independently with probability p.
inline Graph gen_er(std::size_t n, double p, std::uint64_t seed) {
    if (p < 0 || p > 1) throw input_error("gen_er: p must lie in [0, 1]");
    auto rng = make_rng(seed, 2);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::vector<std::pair<Index, Index>> edges;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (coin(rng) < p) edges.push_back({static_cast<Index>(i), static_cast<Index>(j)});
    return from_edge_list(std::move(edges), n, true);
}

}  // namespace vqgnn
