#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_util.hpp"
#include "vqsad/rrwp.hpp"

using namespace vqsad;

namespace {

// Independent oracle: repeated dense matrix multiplication in index order.
std::vector<std::vector<double>> naive_power(const std::vector<std::vector<double>>& m, int k) {
    std::size_t n = m.size();
    std::vector<std::vector<double>> out(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) out[i][i] = 1.0;
    for (int rep = 0; rep < k; ++rep) {
        std::vector<std::vector<double>> next(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t l = 0; l < n; ++l)
                for (std::size_t j = 0; j < n; ++j) next[i][j] += out[i][l] * m[l][j];
        out = next;
    }
    return out;
}

std::vector<std::vector<double>> walk_matrix(const MolecularGraph& g) {
    std::vector<std::vector<double>> m(static_cast<std::size_t>(g.n), std::vector<double>(static_cast<std::size_t>(g.n), 0.0));
    for (int i = 0; i < g.n; ++i) {
        int deg = 0;
        for (int j = 0; j < g.n; ++j) deg += g.bond(i, j) != kBondNone ? 1 : 0;
        if (deg == 0) continue;
        for (int j = 0; j < g.n; ++j)
            if (g.bond(i, j) != kBondNone) m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = 1.0 / deg;
    }
    return m;
}

}  // namespace

TEST_CASE("two-node path alternates") {
    MolecularGraph g(2);
    g.atom_types = {0, 0};
    g.set_bond(0, 1, 1);
    RrwpTensor t = rrwp(g, 3);
    CHECK(t.at(0, 0, 0) == 1.0);
    CHECK(t.at(0, 0, 1) == 0.0);
    CHECK(t.at(0, 0, 2) == 1.0);
    CHECK(t.at(0, 1, 0) == 0.0);
    CHECK(t.at(0, 1, 1) == 1.0);
    CHECK(t.at(0, 1, 2) == 0.0);
}

TEST_CASE("triangle spreads uniformly") {
    MolecularGraph g(3);
    g.atom_types = {0, 0, 0};
    g.set_bond(0, 1, 1);
    g.set_bond(1, 2, 1);
    g.set_bond(0, 2, 1);
    RrwpTensor t = rrwp(g, 2);
    for (int i = 0; i < 3; ++i) {
        CHECK(t.at(i, i, 0) == 1.0);
        CHECK(t.at(i, i, 1) == 0.0);
        for (int j = 0; j < 3; ++j)
            if (i != j) {
                CHECK(t.at(i, j, 0) == 0.0);
                CHECK(t.at(i, j, 1) == doctest::Approx(0.5));
            }
    }
}

TEST_CASE("matches the naive matrix-power oracle on random graphs") {
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
        int n = 2 + rng.uniform_int(9);
        MolecularGraph g = testutil::random_graph(n, 3, 0.4, rng);
        int K = 1 + rng.uniform_int(6);
        RrwpTensor t = rrwp(g, K);
        auto m = walk_matrix(g);
        for (int k = 0; k < K; ++k) {
            auto mk = naive_power(m, k);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    CHECK(std::fabs(t.at(i, j, k) - mk[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) <= 1e-12);
        }
    }
}

TEST_CASE("permutation equivariance is bitwise exact") {
    Rng rng(43);
    for (int trial = 0; trial < 25; ++trial) {
        int n = 3 + rng.uniform_int(8);
        MolecularGraph g = testutil::random_graph(n, 4, 0.45, rng);
        auto perm = testutil::random_permutation(n, rng);
        RrwpTensor a = rrwp(g, 6);
        RrwpTensor b = rrwp(g.permuted(perm), 6);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < 6; ++k)
                    CHECK(a.at(i, j, k) == b.at(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)], k));
    }
}

TEST_CASE("row-stochastic where walks exist, zero from isolated nodes") {
    Rng rng(47);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 2 + rng.uniform_int(8);
        MolecularGraph g = testutil::random_graph(n, 3, 0.3, rng);
        RrwpTensor t = rrwp(g, 5);
        for (int i = 0; i < n; ++i) {
            int deg = 0;
            for (int j = 0; j < n; ++j) deg += g.bond(i, j) != kBondNone ? 1 : 0;
            for (int k = 1; k < 5; ++k) {
                double row = 0.0;
                for (int j = 0; j < n; ++j) {
                    double v = t.at(i, j, k);
                    CHECK(v >= 0.0);
                    CHECK(v <= 1.0);
                    row += v;
                }
                if (deg == 0)
                    CHECK(row == 0.0);
                else
                    CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("masked edges carry no topology") {
    NoisyGraph g(3, 5, 4, 0, 0);
    g.set_bond(0, 1, 1);
    g.set_bond(1, 2, g.edge_mask());
    RrwpTensor t = rrwp(g, 3);
    CHECK(t.at(0, 1, 1) == 1.0);   // real bond
    CHECK(t.at(1, 2, 1) == 0.0);   // masked pair contributes nothing
    CHECK(t.at(2, 2, 0) == 1.0);   // identity slice still marks the node
}

TEST_CASE("structural concatenation") {
    MolecularGraph g(3);
    g.atom_types = {0, 1, 2};
    g.set_bond(0, 1, 1);
    g.set_bond(1, 2, 2);
    RrwpTensor t = rrwp(g, 3);

    SUBCASE("K=1 appends the identity indicator") {
        RrwpTensor t1 = rrwp(g, 1);
        Array nodes = concat_structural_nodes(Array::zeros(3, 0), t1);
        for (int i = 0; i < 3; ++i) CHECK(nodes.at(i, 0) == 1.0);
        std::vector<int> us{0, 0, 1}, vs{1, 2, 2};
        Array pairs = concat_structural_pairs(Array::zeros(3, 0), us, vs, t1);
        for (int p = 0; p < 3; ++p) CHECK(pairs.at(p, 0) == 0.0);  // off-diagonal identity
    }
    SUBCASE("zero base features reproduce the slices verbatim") {
        Array nodes = concat_structural_nodes(Array::zeros(3, 0), t);
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 3; ++k) CHECK(nodes.at(i, k) == t.at(i, i, k));
    }
    SUBCASE("dimension bookkeeping: 7 + 8 = 15") {
        RrwpTensor t8 = rrwp(g, 8);
        Array nodes = concat_structural_nodes(Array::zeros(3, 7), t8);
        CHECK(nodes.cols() == 15);
    }
    SUBCASE("K=0 is rejected") { CHECK_THROWS_AS(rrwp(g, 0), DomainError); }
    SUBCASE("index mismatch is rejected") {
        CHECK_THROWS_AS(concat_structural_nodes(Array::zeros(2, 1), t), DomainError);
    }
}
