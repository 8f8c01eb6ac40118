#include "vqsad/denoiser.hpp"

namespace vqsad {

using ad::Tensor;

Denoiser::Denoiser(ParamStore& store, const DenoiserConfig& cfg, int node_classes, int edge_classes,
                   Rng& rng) {
    store_ = &store;
    cfg_ = cfg;
    node_classes_ = node_classes;
    edge_classes_ = edge_classes;
    int d = cfg.hidden;
    int node_in = (node_classes + 1) + cfg.rrwp_k + cfg.time_dim + cfg.cond_dim;
    int edge_in = (edge_classes + 1) + cfg.rrwp_k + cfg.time_dim + cfg.cond_dim;
    store.add_linear("den.node_in", node_in, d, rng);
    store.add("den.node_in_b", Array::zeros(1, d));
    store.add_linear("den.edge_in", edge_in, d, rng);
    store.add("den.edge_in_b", Array::zeros(1, d));
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = "den.layer" + std::to_string(l);
        store.add(p + ".eps", Array::zeros(1, 1));
        store.add_linear(p + ".w1", d, d, rng);
        store.add(p + ".b1", Array::zeros(1, d));
        store.add_linear(p + ".w2", d, d, rng);
        store.add(p + ".b2", Array::zeros(1, d));
        store.add_linear(p + ".ew1", 3 * d, d, rng);
        store.add(p + ".eb1", Array::zeros(1, d));
        store.add_linear(p + ".ew2", d, d, rng);
        store.add(p + ".eb2", Array::zeros(1, d));
    }
    store.add_linear("den.node_head.w1", d, d, rng);
    store.add("den.node_head.b1", Array::zeros(1, d));
    store.add_linear("den.node_head.w2", d, node_classes + 1, rng);
    store.add("den.node_head.b2", Array::zeros(1, node_classes + 1));
    store.add_linear("den.edge_head.w1", 3 * d, d, rng);
    store.add("den.edge_head.b1", Array::zeros(1, d));
    store.add_linear("den.edge_head.w2", d, edge_classes + 1, rng);
    store.add("den.edge_head.b2", Array::zeros(1, edge_classes + 1));
    store.add_linear("den.cond_proj", 2, cfg.cond_dim, rng);
    store.add_uniform("den.cond_null", 1, cfg.cond_dim, -0.1, 0.1, rng);
}

void Denoiser::bind(ParamStore& store, const DenoiserConfig& cfg, int node_classes, int edge_classes) {
    store_ = &store;
    cfg_ = cfg;
    node_classes_ = node_classes;
    edge_classes_ = edge_classes;
}

Tensor Denoiser::condition_embed(std::optional<double> z) const {
    if (!z) return store_->at("den.cond_null");
    Array in(1, 2);
    in.at(0, 0) = *z;
    in.at(0, 1) = 1.0;
    return matmul(Tensor::constant(std::move(in)), store_->at("den.cond_proj"));
}

Denoiser::Output Denoiser::predict(const GraphBatch& b, const Tensor& node_onehots,
                                   const Tensor& pair_onehots, const Tensor* cond) const {
    const ParamStore& s = *store_;
    Tensor cond_nodes, cond_pairs;
    if (cond && cond->defined()) {
        cond_nodes = gather_rows(*cond, b.graph_of_node);
        cond_pairs = gather_rows(*cond, b.graph_of_pair);
    } else {
        cond_nodes = Tensor::constant(Array::zeros(b.total_nodes, cfg_.cond_dim));
        cond_pairs = Tensor::constant(Array::zeros(b.total_pairs, cfg_.cond_dim));
    }
    Tensor h = add(matmul(ad::concat_cols({node_onehots, Tensor::constant(b.node_struct),
                                       Tensor::constant(time_features(b.node_t, cfg_.time_dim)), cond_nodes}),
                          s.at("den.node_in")),
                   s.at("den.node_in_b"));
    Tensor e = add(matmul(ad::concat_cols({pair_onehots, Tensor::constant(b.pair_struct),
                                       Tensor::constant(time_features(b.pair_t, cfg_.time_dim)), cond_pairs}),
                          s.at("den.edge_in")),
                   s.at("den.edge_in_b"));
    for (int l = 0; l < cfg_.layers; ++l) {
        std::string p = "den.layer" + std::to_string(l);
        Tensor agg;
        if (!b.msg_src.empty()) {
            Tensor messages = relu(add(gather_rows(h, b.msg_src), gather_rows(e, b.msg_pair)));
            agg = scatter_add_rows(messages, b.msg_dst, b.total_nodes);
        } else {
            agg = Tensor::constant(Array::zeros(b.total_nodes, cfg_.hidden));
        }
        Tensor self = mul(h, add_scalar(s.at(p + ".eps"), 1.0));
        Tensor z = add(self, agg);
        Tensor hid = relu(add(matmul(z, s.at(p + ".w1")), s.at(p + ".b1")));
        h = add(matmul(hid, s.at(p + ".w2")), s.at(p + ".b2"));
        // Direction-averaged pair update keeps e symmetric in its endpoints.
        Tensor hu = gather_rows(h, b.pair_u);
        Tensor hv = gather_rows(h, b.pair_v);
        Tensor euv = ad::concat_cols({hu, hv, e});
        Tensor evu = ad::concat_cols({hv, hu, e});
        Tensor upd_uv = add(matmul(relu(add(matmul(euv, s.at(p + ".ew1")), s.at(p + ".eb1"))), s.at(p + ".ew2")),
                            s.at(p + ".eb2"));
        Tensor upd_vu = add(matmul(relu(add(matmul(evu, s.at(p + ".ew1")), s.at(p + ".eb1"))), s.at(p + ".ew2")),
                            s.at(p + ".eb2"));
        e = scale(add(upd_uv, upd_vu), 0.5);
    }
    Output out;
    out.node_states = h;
    out.node_logits = add(matmul(relu(add(matmul(h, s.at("den.node_head.w1")), s.at("den.node_head.b1"))),
                                 s.at("den.node_head.w2")),
                          s.at("den.node_head.b2"));
    Tensor hu = gather_rows(h, b.pair_u);
    Tensor hv = gather_rows(h, b.pair_v);
    auto edge_head = [&](const Tensor& x) {
        return add(matmul(relu(add(matmul(x, s.at("den.edge_head.w1")), s.at("den.edge_head.b1"))),
                          s.at("den.edge_head.w2")),
                   s.at("den.edge_head.b2"));
    };
    Tensor raw_uv = edge_head(ad::concat_cols({hu, hv, e}));
    Tensor raw_vu = edge_head(ad::concat_cols({hv, hu, e}));
    out.edge_logits = scale(add(raw_uv, raw_vu), 0.5);
    return out;
}

Denoiser::Output Denoiser::predict_hard(const GraphBatch& b, const Tensor* cond) const {
    Tensor node_onehots = Tensor::constant(onehot_rows(b.node_cat, node_classes_ + 1));
    Tensor pair_onehots = Tensor::constant(onehot_rows(b.pair_cat, edge_classes_ + 1));
    return predict(b, node_onehots, pair_onehots, cond);
}

}  // namespace vqsad
