// Graph representation: canonical deduplicated edge list over n nodes.
#pragma once

#include <algorithm>
#include <cstddef>
#include <utility>
#include <vector>

#include "vqgnn/common.hpp"
#include "vqgnn/sparse.hpp"

namespace vqgnn {

struct Graph {
    std::size_t n = 0;
    std::vector<std::pair<Index, Index>> edges;  // canonical: sorted, unique
    bool directed = false;

    std::size_t num_edges() const { return edges.size(); }

    // Binary adjacency. Duplicate input edges were collapsed at construction.
    template <typename T>
    CsrMatrix<T> adjacency() const {
        std::vector<std::tuple<Index, Index, T>> trip;
        trip.reserve(edges.size());
        for (const auto& [s, d] : edges) trip.push_back({s, d, T(1)});
        return csr_from_triplets<T>(n, n, std::move(trip));
    }

    std::vector<std::size_t> out_degrees() const {
        std::vector<std::size_t> deg(n, 0);
        for (const auto& [s, d] : edges) {
            (void)d;
            ++deg[s];
        }
        return deg;
    }
};

// Canonicalizes an edge list: bounds-checked, deduplicated, optionally
// symmetrized. Self-loops are kept as given; convolution builders add their
// own where needed.
inline Graph from_edge_list(std::vector<std::pair<Index, Index>> pairs, std::size_t n,
                            bool symmetrize) {
    if (n == 0) throw input_error("from_edge_list: empty graph (n = 0)");
    for (const auto& [s, d] : pairs) {
        if (s >= n || d >= n) throw input_error("from_edge_list: edge index >= n");
    }
    if (symmetrize) {
        const std::size_t given = pairs.size();
        pairs.reserve(2 * given);
        for (std::size_t i = 0; i < given; ++i) {
            if (pairs[i].first != pairs[i].second)
                pairs.push_back({pairs[i].second, pairs[i].first});
        }
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    Graph g;
    g.n = n;
    g.edges = std::move(pairs);
    g.directed = !symmetrize;
    return g;
}

}  // namespace vqgnn
