#include "vqsad/rrwp.hpp"

#include <algorithm>

namespace vqsad {

Array RrwpTensor::node_diag() const {
    Array out(n, K);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < K; ++k) out.at(i, k) = at(i, i, k);
    return out;
}

Array RrwpTensor::pair_rows(const std::vector<int>& us, const std::vector<int>& vs) const {
    Array out(static_cast<long>(us.size()), K);
    for (std::size_t r = 0; r < us.size(); ++r)
        for (int k = 0; k < K; ++k) out.at(static_cast<long>(r), k) = at(us[r], vs[r], k);
    return out;
}

RrwpTensor rrwp_from_adjacency(int n, const std::vector<std::uint8_t>& adj, int K) {
    if (K < 1) throw DomainError("rrwp requires K >= 1");
    RrwpTensor t;
    t.n = n;
    t.K = K;
    t.p.assign(static_cast<std::size_t>(n) * n * K, 0.0);
    auto slot = [&](int i, int j, int k) -> double& {
        return t.p[(static_cast<std::size_t>(i) * n + j) * K + k];
    };
    for (int i = 0; i < n; ++i) slot(i, i, 0) = 1.0;
    if (K == 1) return t;

    // One-step matrix M = D^-1 A; isolated nodes get an all-zero row.
    std::vector<double> m(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        int deg = 0;
        for (int j = 0; j < n; ++j) deg += adj[static_cast<std::size_t>(i) * n + j] ? 1 : 0;
        if (deg == 0) continue;
        double w = 1.0 / deg;
        for (int j = 0; j < n; ++j)
            if (adj[static_cast<std::size_t>(i) * n + j]) m[static_cast<std::size_t>(i) * n + j] = w;
    }

    std::vector<double> prev = m;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) slot(i, j, 1) = m[static_cast<std::size_t>(i) * n + j];
    std::vector<double> cur(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> terms;
    terms.reserve(static_cast<std::size_t>(n));
    for (int k = 2; k < K; ++k) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                terms.clear();
                for (int l = 0; l < n; ++l) {
                    double v = prev[static_cast<std::size_t>(i) * n + l] * m[static_cast<std::size_t>(l) * n + j];
                    if (v != 0.0) terms.push_back(v);
                }
                // Value-sorted accumulation: summation order no longer depends
                // on node labels, so relabeled graphs produce identical bits.
                std::sort(terms.begin(), terms.end());
                double s = 0.0;
                for (double v : terms) s += v;
                cur[static_cast<std::size_t>(i) * n + j] = s;
                slot(i, j, k) = s;
            }
        prev.swap(cur);
    }
    return t;
}

namespace {

template <typename G, typename Pred>
std::vector<std::uint8_t> adjacency_of(const G& g, Pred has_edge) {
    std::vector<std::uint8_t> adj(static_cast<std::size_t>(g.n) * g.n, 0);
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j)
            if (i != j && has_edge(g.bond(i, j))) adj[static_cast<std::size_t>(i) * g.n + j] = 1;
    return adj;
}

}  // namespace

RrwpTensor rrwp(const MolecularGraph& g, int K) {
    return rrwp_from_adjacency(g.n, adjacency_of(g, [](int b) { return b != kBondNone; }), K);
}

RrwpTensor rrwp(const NoisyGraph& g, int K) {
    int mask = g.edge_mask();
    return rrwp_from_adjacency(g.n, adjacency_of(g, [mask](int b) { return b != kBondNone && b != mask; }), K);
}

Array concat_structural_nodes(const Array& node_feats, const RrwpTensor& r) {
    if (node_feats.rows() != r.n) throw DomainError("concat_structural_nodes: row count mismatch");
    Array out(node_feats.rows(), node_feats.cols() + r.K);
    for (long i = 0; i < node_feats.rows(); ++i) {
        for (long c = 0; c < node_feats.cols(); ++c) out.at(i, c) = node_feats.at(i, c);
        for (int k = 0; k < r.K; ++k) out.at(i, node_feats.cols() + k) = r.at(static_cast<int>(i), static_cast<int>(i), k);
    }
    return out;
}

Array concat_structural_pairs(const Array& pair_feats, const std::vector<int>& us,
                              const std::vector<int>& vs, const RrwpTensor& r) {
    if (pair_feats.rows() != static_cast<long>(us.size()) || us.size() != vs.size())
        throw DomainError("concat_structural_pairs: index mismatch");
    Array out(pair_feats.rows(), pair_feats.cols() + r.K);
    for (long p = 0; p < pair_feats.rows(); ++p) {
        for (long c = 0; c < pair_feats.cols(); ++c) out.at(p, c) = pair_feats.at(p, c);
        for (int k = 0; k < r.K; ++k) out.at(p, pair_feats.cols() + k) = r.at(us[static_cast<std::size_t>(p)], vs[static_cast<std::size_t>(p)], k);
    }
    return out;
}

}  // namespace vqsad
