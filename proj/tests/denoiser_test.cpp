#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "vqsad/denoiser.hpp"
#include "vqsad/diffusion.hpp"

using namespace vqsad;
using ad::Tensor;

namespace {

constexpr int kNodeClasses = 5;
constexpr int kEdgeClasses = 4;

GraphBatch batch_of(const NoisyGraph& g, double t, int rrwp_k) {
    std::vector<const NoisyGraph*> ptrs{&g};
    std::vector<RrwpTensor> encs{rrwp(g, rrwp_k)};
    return make_batch(ptrs, {t}, encs, sad_bond_predicate(kEdgeClasses));
}

NoisyGraph permuted_noisy(const NoisyGraph& g, const std::vector<int>& perm) {
    NoisyGraph out(g.n, g.node_classes, g.edge_classes, 0, 0);
    for (int i = 0; i < g.n; ++i) out.atom_types[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = g.atom_types[static_cast<std::size_t>(i)];
    for (int i = 0; i < g.n; ++i)
        for (int j = i + 1; j < g.n; ++j)
            out.set_bond(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)], g.bond(i, j));
    return out;
}

NoisyGraph random_noisy(int n, Rng& rng, bool with_mask) {
    NoisyGraph g(n, kNodeClasses, kEdgeClasses, 0, 0);
    for (int i = 0; i < n; ++i)
        g.atom_types[static_cast<std::size_t>(i)] = rng.uniform_int(kNodeClasses + (with_mask ? 1 : 0));
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            int roll = rng.uniform_int(10);
            int cat = roll < 5 ? 0 : (roll < 8 ? 1 + rng.uniform_int(3) : (with_mask ? kEdgeClasses : 0));
            g.set_bond(i, j, cat);
        }
    return g;
}

}  // namespace

TEST_CASE("gin layer base cases") {
    ParamStore store;
    Rng rng(3);
    DenoiserConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 8;
    Denoiser den(store, cfg, kNodeClasses, kEdgeClasses, rng);

    SUBCASE("isolated nodes see only the self term") {
        NoisyGraph g(2, kNodeClasses, kEdgeClasses, 1, 0);  // no bonds
        GraphBatch b = batch_of(g, 0.5, cfg.rrwp_k);
        CHECK(b.msg_src.empty());
        Denoiser::Output out = den.predict_hard(b, nullptr);
        CHECK(out.node_states.value().rows() == 2);
        // Identical isolated nodes produce identical states.
        for (int c = 0; c < cfg.hidden; ++c)
            CHECK(out.node_states.value().at(0, c) == doctest::Approx(out.node_states.value().at(1, c)));
    }
    SUBCASE("masked edges are excluded from the neighborhood") {
        NoisyGraph g(3, kNodeClasses, kEdgeClasses, 1, 0);
        g.set_bond(0, 1, kEdgeClasses);  // mask
        g.set_bond(1, 2, 1);
        GraphBatch b = batch_of(g, 0.5, cfg.rrwp_k);
        CHECK(b.msg_src.size() == 2);  // only the real bond, both directions
    }
}

TEST_CASE("prediction softmax rows sum to one and edges are exactly symmetric") {
    ParamStore store;
    Rng rng(11);
    DenoiserConfig cfg;
    Denoiser den(store, cfg, kNodeClasses, kEdgeClasses, rng);
    NoisyGraph g = random_noisy(6, rng, true);
    GraphBatch b = batch_of(g, 0.3, cfg.rrwp_k);
    Denoiser::Output out = den.predict_hard(b, nullptr);
    Tensor np = softmax_rows(out.node_logits);
    for (long r = 0; r < np.value().rows(); ++r) {
        double s = 0.0;
        for (long c = 0; c < np.value().cols(); ++c) s += np.value().at(r, c);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
    // Symmetry is structural: the pair row is shared by (u,v) and (v,u) and the
    // head averages both orientations, so a swapped graph gives identical rows.
    std::vector<int> swap_first_two(static_cast<std::size_t>(g.n));
    for (int i = 0; i < g.n; ++i) swap_first_two[static_cast<std::size_t>(i)] = i;
    std::swap(swap_first_two[0], swap_first_two[1]);
    NoisyGraph gs = permuted_noisy(g, swap_first_two);
    GraphBatch bs = batch_of(gs, 0.3, cfg.rrwp_k);
    Denoiser::Output outs = den.predict_hard(bs, nullptr);
    for (long c = 0; c < out.edge_logits.value().cols(); ++c)
        CHECK(out.edge_logits.value().at(0, c) ==
              doctest::Approx(outs.edge_logits.value().at(0, c)).epsilon(1e-12));
}

TEST_CASE("full-model permutation equivariance within 1e-9") {
    ParamStore store;
    Rng rng(13);
    DenoiserConfig cfg;
    Denoiser den(store, cfg, kNodeClasses, kEdgeClasses, rng);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 3 + rng.uniform_int(5);
        NoisyGraph g = random_noisy(n, rng, true);
        auto perm = testutil::random_permutation(n, rng);
        NoisyGraph pg = permuted_noisy(g, perm);
        GraphBatch b = batch_of(g, 0.4, cfg.rrwp_k);
        GraphBatch pb = batch_of(pg, 0.4, cfg.rrwp_k);
        Denoiser::Output a = den.predict_hard(b, nullptr);
        Denoiser::Output p = den.predict_hard(pb, nullptr);
        for (int i = 0; i < n; ++i)
            for (long c = 0; c < a.node_logits.value().cols(); ++c)
                CHECK(a.node_logits.value().at(i, c) ==
                      doctest::Approx(p.node_logits.value().at(perm[static_cast<std::size_t>(i)], c)).epsilon(1e-9));
        for (int u = 0; u < n; ++u)
            for (int v = u + 1; v < n; ++v) {
                int pu = perm[static_cast<std::size_t>(u)], pv = perm[static_cast<std::size_t>(v)];
                int row = b.pair_index(0, u, v);
                int prow = pb.pair_index(0, pu, pv);
                for (long c = 0; c < a.edge_logits.value().cols(); ++c)
                    CHECK(a.edge_logits.value().at(row, c) ==
                          doctest::Approx(p.edge_logits.value().at(prow, c)).epsilon(1e-9));
            }
    }
}

TEST_CASE("condition embedding") {
    ParamStore store;
    Rng rng(17);
    DenoiserConfig cfg;
    Denoiser den(store, cfg, kNodeClasses, kEdgeClasses, rng);
    SUBCASE("null token path is deterministic") {
        Tensor a = den.condition_embed(std::nullopt);
        Tensor b = den.condition_embed(std::nullopt);
        for (long i = 0; i < a.value().size(); ++i) CHECK(a.value()[i] == b.value()[i]);
    }
    SUBCASE("distinct properties give distinct embeddings") {
        Tensor a = den.condition_embed(0.5);
        Tensor b = den.condition_embed(-1.5);
        double diff = 0.0;
        for (long i = 0; i < a.value().size(); ++i) diff += std::fabs(a.value()[i] - b.value()[i]);
        CHECK(diff > 1e-8);
    }
    SUBCASE("zero z-score is the projection of [0,1]") {
        Tensor a = den.condition_embed(0.0);
        const Array& w = store.at("den.cond_proj").value();
        for (long c = 0; c < a.value().cols(); ++c) CHECK(a.value().at(0, c) == doctest::Approx(w.at(1, c)));
    }
    SUBCASE("conditioning changes predictions") {
        NoisyGraph g = random_noisy(4, rng, true);
        GraphBatch b = batch_of(g, 0.5, cfg.rrwp_k);
        Tensor c1 = den.condition_embed(1.0);
        Tensor c0 = den.condition_embed(std::nullopt);
        Denoiser::Output o1 = den.predict(b, Tensor::constant(onehot_rows(b.node_cat, kNodeClasses + 1)),
                                          Tensor::constant(onehot_rows(b.pair_cat, kEdgeClasses + 1)), &c1);
        Denoiser::Output o0 = den.predict(b, Tensor::constant(onehot_rows(b.node_cat, kNodeClasses + 1)),
                                          Tensor::constant(onehot_rows(b.pair_cat, kEdgeClasses + 1)), &c0);
        double diff = 0.0;
        for (long i = 0; i < o1.node_logits.value().size(); ++i)
            diff += std::fabs(o1.node_logits.value()[i] - o0.node_logits.value()[i]);
        CHECK(diff > 1e-8);
    }
}

TEST_CASE("head widths follow the class counts") {
    ParamStore store;
    Rng rng(19);
    DenoiserConfig cfg;
    Denoiser den(store, cfg, 32, 16, rng);  // latent-mode sizing
    NoisyGraph g(3, 32, 16, 32, 16);        // fully masked code graph
    std::vector<const NoisyGraph*> ptrs{&g};
    std::vector<RrwpTensor> encs{rrwp(g, cfg.rrwp_k)};
    GraphBatch b = make_batch(ptrs, {1.0}, encs, [](int c) { return c != 16 && c != 0; });
    Denoiser::Output out = den.predict_hard(b, nullptr);
    CHECK(out.node_logits.value().cols() == 33);
    CHECK(out.edge_logits.value().cols() == 17);
}
