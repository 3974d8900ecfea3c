// Mini-batch node samplers: uniform nodes, edge endpoints, and random walks.
// Every strategy returns exactly b distinct sorted node indices.
#pragma once

#include <algorithm>
#include <cstddef>
#include <unordered_set>
#include <vector>

#include "vqgnn/common.hpp"
#include "vqgnn/graph.hpp"

namespace vqgnn {

enum class SamplerKind { Nodes, Edges, RandomWalk };

namespace detail {

// Tops a partial selection up to exactly b nodes with uniform draws.
inline void top_up_uniform(std::vector<Index>& picked, std::unordered_set<Index>& seen,
                           std::size_t b, std::size_t n, Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (picked.size() < b) {
        const Index v = static_cast<Index>(pick(rng));
        if (seen.insert(v).second) picked.push_back(v);
    }
}

}  // namespace detail

inline std::vector<Index> sample_minibatch(SamplerKind strategy, std::size_t b, const Graph& g,
                                           const std::vector<std::vector<Index>>& adj, Rng& rng,
                                           std::size_t walk_len = 3) {
    if (b > g.n) throw input_error("sample_minibatch: batch larger than the graph");
    if (b == 0) throw input_error("sample_minibatch: empty batch");
    std::vector<Index> picked;
    picked.reserve(b);
    std::unordered_set<Index> seen;

    switch (strategy) {
        case SamplerKind::Nodes: {
            // partial Fisher-Yates
            std::vector<Index> pool(g.n);
            for (std::size_t i = 0; i < g.n; ++i) pool[i] = static_cast<Index>(i);
            for (std::size_t i = 0; i < b; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, g.n - 1);
                std::swap(pool[i], pool[pick(rng)]);
                picked.push_back(pool[i]);
            }
            break;
        }
        case SamplerKind::Edges: {
            if (!g.edges.empty()) {
                std::uniform_int_distribution<std::size_t> pick(0, g.edges.size() - 1);
                // endpoints of sampled edges until the batch is full
                for (std::size_t tries = 0; tries < 4 * b && picked.size() < b; ++tries) {
                    const auto& e = g.edges[pick(rng)];
                    if (picked.size() < b && seen.insert(e.first).second) picked.push_back(e.first);
                    if (picked.size() < b && seen.insert(e.second).second) picked.push_back(e.second);
                }
            }
            detail::top_up_uniform(picked, seen, b, g.n, rng);
            break;
        }
        case SamplerKind::RandomWalk: {
            const std::size_t roots = std::max<std::size_t>(1, b / std::max<std::size_t>(1, walk_len));
            std::uniform_int_distribution<std::size_t> pick(0, g.n - 1);
            for (std::size_t r = 0; r < roots && picked.size() < b; ++r) {
                Index cur = static_cast<Index>(pick(rng));
                if (seen.insert(cur).second) picked.push_back(cur);
                for (std::size_t step = 0; step < walk_len && picked.size() < b; ++step) {
                    const auto& nb = adj[cur];
                    if (nb.empty()) break;
                    std::uniform_int_distribution<std::size_t> next(0, nb.size() - 1);
                    cur = nb[next(rng)];
                    if (seen.insert(cur).second) picked.push_back(cur);
                }
            }
            detail::top_up_uniform(picked, seen, b, g.n, rng);
            break;
        }
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

inline std::vector<std::vector<Index>> adjacency_lists(const Graph& g) {
    std::vector<std::vector<Index>> adj(g.n);
    for (auto [s, d] : g.edges) adj[s].push_back(d);
    return adj;
}

}  // namespace vqgnn
