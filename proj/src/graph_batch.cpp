#include "vqsad/graph_batch.hpp"

#include <cmath>

namespace vqsad {

int GraphBatch::pair_index(int graph, int local_u, int local_v) const {
    if (local_u > local_v) std::swap(local_u, local_v);
    int n = node_offset[static_cast<std::size_t>(graph) + 1] - node_offset[static_cast<std::size_t>(graph)];
    // Rank of (u,v) in the u<v enumeration of an n-node graph.
    int rank = local_u * n - local_u * (local_u + 1) / 2 + (local_v - local_u - 1);
    return pair_offset[static_cast<std::size_t>(graph)] + rank;
}

GraphBatch make_batch(const std::vector<const NoisyGraph*>& graphs, const std::vector<double>& times,
                      const std::vector<RrwpTensor>& encodings,
                      const std::function<bool(int)>& is_bond) {
    GraphBatch b;
    b.num_graphs = static_cast<int>(graphs.size());
    b.node_offset.push_back(0);
    b.pair_offset.push_back(0);
    for (const NoisyGraph* g : graphs) {
        b.total_nodes += g->n;
        b.total_pairs += g->n * (g->n - 1) / 2;
        b.node_offset.push_back(b.total_nodes);
        b.pair_offset.push_back(b.total_pairs);
    }
    int K = encodings.empty() ? 1 : encodings[0].K;
    b.node_struct = Array(b.total_nodes, K);
    b.pair_struct = Array(b.total_pairs, K);
    for (int gi = 0; gi < b.num_graphs; ++gi) {
        const NoisyGraph& g = *graphs[static_cast<std::size_t>(gi)];
        const RrwpTensor& enc = encodings[static_cast<std::size_t>(gi)];
        int n0 = b.node_offset[static_cast<std::size_t>(gi)];
        double t = times[static_cast<std::size_t>(gi)];
        for (int i = 0; i < g.n; ++i) {
            b.graph_of_node.push_back(gi);
            b.node_t.push_back(t);
            b.node_cat.push_back(g.atom_types[static_cast<std::size_t>(i)]);
            for (int k = 0; k < K; ++k) b.node_struct.at(n0 + i, k) = enc.at(i, i, k);
        }
        for (int u = 0; u < g.n; ++u)
            for (int v = u + 1; v < g.n; ++v) {
                int p = static_cast<int>(b.pair_u.size());
                b.pair_u.push_back(n0 + u);
                b.pair_v.push_back(n0 + v);
                b.graph_of_pair.push_back(gi);
                b.pair_t.push_back(t);
                b.pair_cat.push_back(g.bond(u, v));
                // Walk probabilities are direction-dependent; unordered pair
                // rows take the two-direction average so relabeling cannot
                // flip the feature.
                for (int k = 0; k < K; ++k)
                    b.pair_struct.at(p, k) = 0.5 * (enc.at(u, v, k) + enc.at(v, u, k));
                if (is_bond(g.bond(u, v))) {
                    b.msg_src.push_back(n0 + u);
                    b.msg_dst.push_back(n0 + v);
                    b.msg_pair.push_back(p);
                    b.msg_src.push_back(n0 + v);
                    b.msg_dst.push_back(n0 + u);
                    b.msg_pair.push_back(p);
                }
            }
    }
    return b;
}

Array onehot_rows(const std::vector<int>& cats, int classes_with_mask) {
    Array out(static_cast<long>(cats.size()), classes_with_mask);
    for (std::size_t r = 0; r < cats.size(); ++r) {
        if (cats[r] < 0 || cats[r] >= classes_with_mask) throw DomainError("onehot_rows: category out of range");
        out.at(static_cast<long>(r), cats[r]) = 1.0;
    }
    return out;
}

Array time_features(const std::vector<double>& t, int dims) {
    int half = dims / 2;
    Array out(static_cast<long>(t.size()), dims);
    for (std::size_t r = 0; r < t.size(); ++r)
        for (int k = 0; k < half; ++k) {
            double freq = std::pow(2.0, k) * 3.141592653589793;
            out.at(static_cast<long>(r), 2 * k) = std::sin(freq * t[r]);
            out.at(static_cast<long>(r), 2 * k + 1) = std::cos(freq * t[r]);
        }
    return out;
}

}  // namespace vqsad
