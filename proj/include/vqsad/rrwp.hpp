#pragma once

#include <vector>

#include "vqsad/array.hpp"
#include "vqsad/graph.hpp"

namespace vqsad {

// Random-walk probability stack: p[i][j] = [I, M, M^2, ..., M^(K-1)]_{ij}
// with M = D^-1 A. Rows of isolated nodes are all zero beyond the identity
// slice. Entries are accumulated in value-sorted order, which makes the
// result bitwise invariant under node relabeling.
struct RrwpTensor {
    int n = 0;
    int K = 0;
    std::vector<double> p;  // [n*n*K]

    double at(int i, int j, int k) const {
        return p[(static_cast<std::size_t>(i) * n + j) * K + k];
    }
    // Node-level slice P[i][i] as an [n,K] array.
    Array node_diag() const;
    // Pair rows P[u][v] for the given (u,v) list as a [|pairs|,K] array.
    Array pair_rows(const std::vector<int>& us, const std::vector<int>& vs) const;
};

RrwpTensor rrwp_from_adjacency(int n, const std::vector<std::uint8_t>& adj, int K);

// Adjacency from a molecular graph: any non-"no bond" category.
RrwpTensor rrwp(const MolecularGraph& g, int K);

// Adjacency from a diffusion state: masked edges carry no topology.
RrwpTensor rrwp(const NoisyGraph& g, int K);

// Appends the K structural columns: node rows gain P_vv, pair rows gain P_uv.
Array concat_structural_nodes(const Array& node_feats, const RrwpTensor& r);
Array concat_structural_pairs(const Array& pair_feats, const std::vector<int>& us,
                              const std::vector<int>& vs, const RrwpTensor& r);

}  // namespace vqsad
