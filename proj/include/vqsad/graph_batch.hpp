#pragma once

#include <functional>
#include <vector>

#include "vqsad/array.hpp"
#include "vqsad/graph.hpp"
#include "vqsad/rrwp.hpp"

namespace vqsad {

// Several graphs flattened into contiguous node and unordered-pair rows so
// model evaluation runs as a handful of large matrix ops. Pair rows enumerate
// u < v within each graph; message-passing lists hold both directions of every
// currently bonded pair.
struct GraphBatch {
    int num_graphs = 0;
    int total_nodes = 0;
    int total_pairs = 0;
    std::vector<int> node_offset;  // [num_graphs + 1]
    std::vector<int> pair_offset;  // [num_graphs + 1]
    std::vector<int> pair_u, pair_v;          // global node ids, per pair
    std::vector<int> graph_of_node, graph_of_pair;
    std::vector<double> node_t, pair_t;       // diffusion time per element
    std::vector<int> node_cat, pair_cat;      // current categories (mask included)
    std::vector<int> msg_src, msg_dst, msg_pair;  // directed bonded edges
    Array node_struct;  // [total_nodes, K] RRWP diagonal rows
    Array pair_struct;  // [total_pairs, K] RRWP pair rows

    int pair_index(int graph, int local_u, int local_v) const;
};

// is_bond decides which edge categories carry topology (mask never does).
GraphBatch make_batch(const std::vector<const NoisyGraph*>& graphs, const std::vector<double>& times,
                      const std::vector<RrwpTensor>& encodings,
                      const std::function<bool(int)>& is_bond);

// One-hot rows over classes+1 categories (mask = classes).
Array onehot_rows(const std::vector<int>& cats, int classes_with_mask);

// Sinusoidal features of t per row: sin/cos at dims/2 geometric frequencies.
Array time_features(const std::vector<double>& t, int dims);

}  // namespace vqsad
