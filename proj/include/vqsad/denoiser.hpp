#pragma once

#include <optional>

#include "vqsad/autodiff.hpp"
#include "vqsad/graph_batch.hpp"
#include "vqsad/param_store.hpp"

namespace vqsad {

struct DenoiserConfig {
    int layers = 4;
    int hidden = 64;
    int time_dim = 8;
    int cond_dim = 8;
    int rrwp_k = 8;
};

// Edge-featured GIN with node and pair prediction heads. Node states update
// as MLP((1+eps)h_v + sum_{u in N(v)} relu(h_u + e_uv)); pair states update
// through a direction-averaged 2-layer MLP on [h_u || h_v || e_uv]. Heads are
// 2-layer MLPs; pair logits are averaged over both orientations, so predicted
// edge distributions are exactly symmetric.
class Denoiser {
public:
    Denoiser() = default;
    Denoiser(ParamStore& store, const DenoiserConfig& cfg, int node_classes, int edge_classes, Rng& rng);
    void bind(ParamStore& store, const DenoiserConfig& cfg, int node_classes, int edge_classes);

    const DenoiserConfig& config() const { return cfg_; }
    int node_classes() const { return node_classes_; }
    int edge_classes() const { return edge_classes_; }

    struct Output {
        ad::Tensor node_logits;  // [total_nodes, node_classes+1]
        ad::Tensor edge_logits;  // [total_pairs, edge_classes+1]
        ad::Tensor node_states;  // [total_nodes, hidden], final layer
    };

    // node_onehots/pair_onehots may be relaxed rows from the forward process;
    // message passing uses the hard categories recorded in the batch.
    Output predict(const GraphBatch& b, const ad::Tensor& node_onehots, const ad::Tensor& pair_onehots,
                   const ad::Tensor* cond) const;

    // Hard-category convenience path.
    Output predict_hard(const GraphBatch& b, const ad::Tensor* cond) const;

    // Property embedding: learned projection of [z, 1], or the reserved null
    // token when no condition is given. Returns [1, cond_dim].
    ad::Tensor condition_embed(std::optional<double> z_scored_property) const;

private:
    ParamStore* store_ = nullptr;
    DenoiserConfig cfg_;
    int node_classes_ = 0;
    int edge_classes_ = 0;
};

}  // namespace vqsad
