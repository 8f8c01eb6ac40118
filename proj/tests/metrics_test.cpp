#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "test_util.hpp"
#include "vqsad/metrics.hpp"
#include "vqsad/smiles.hpp"

using namespace vqsad;

namespace {

MolecularGraph from_smiles(const char* s) {
    auto vocab = AtomVocabulary::qm9();
    return add_explicit_hydrogens(parse_smiles(s, vocab), vocab);
}

}  // namespace

TEST_CASE("validity percentages") {
    auto vocab = AtomVocabulary::qm9();
    SUBCASE("all methane") {
        std::vector<MolecularGraph> batch(4, from_smiles("C"));
        CHECK(validity(batch, vocab) == doctest::Approx(100.0));
    }
    SUBCASE("five-bond carbon scores zero") {
        MolecularGraph g(6);
        g.atom_types = {1, 0, 0, 0, 0, 0};
        for (int i = 1; i < 6; ++i) g.set_bond(0, i, 1);
        CHECK(validity({g}, vocab) == doctest::Approx(0.0));
    }
    SUBCASE("three valid one invalid gives 75") {
        MolecularGraph bad(2);
        bad.atom_types = {0, 0};  // disconnected hydrogens
        std::vector<MolecularGraph> batch{from_smiles("C"), from_smiles("CC"), from_smiles("CO"), bad};
        CHECK(validity(batch, vocab) == doctest::Approx(75.0));
    }
    SUBCASE("empty input is rejected") { CHECK_THROWS_AS(validity({}, vocab), DomainError); }
}

TEST_CASE("uniqueness percentages") {
    auto vocab = AtomVocabulary::qm9();
    SUBCASE("three copies of one molecule") {
        std::vector<MolecularGraph> batch(3, from_smiles("CCO"));
        CHECK(*uniqueness(batch, vocab) == doctest::Approx(100.0 / 3));
    }
    SUBCASE("relabeled duplicates are detected") {
        MolecularGraph a = from_smiles("CCO");
        Rng rng(3);
        MolecularGraph b = a.permuted(testutil::random_permutation(a.n, rng));
        std::vector<MolecularGraph> batch{a, b, from_smiles("CCN")};
        CHECK(*uniqueness(batch, vocab) == doctest::Approx(200.0 / 3));
    }
    SUBCASE("no valid samples reports null, not zero") {
        MolecularGraph bad(2);
        bad.atom_types = {0, 0};
        CHECK_FALSE(uniqueness({bad}, vocab).has_value());
    }
    SUBCASE("uniqueness counts over valid samples only") {
        MolecularGraph bad(2);
        bad.atom_types = {0, 0};
        std::vector<MolecularGraph> batch{from_smiles("C"), from_smiles("C"), bad};
        CHECK(*uniqueness(batch, vocab) == doctest::Approx(50.0));
    }
}

namespace {

// Independent feature enumeration for tiny graphs: explicit canonical forms
// via brute-force permutation, string keys, then the same normalized dot.
std::map<std::string, double> oracle_features(const MolecularGraph& g, int max_radius, int max_distance) {
    auto bfs = [&](int root) {
        std::vector<int> dist(static_cast<std::size_t>(g.n), -1);
        std::vector<int> q{root};
        dist[static_cast<std::size_t>(root)] = 0;
        for (std::size_t qi = 0; qi < q.size(); ++qi)
            for (int u = 0; u < g.n; ++u)
                if (g.bond(q[qi], u) != kBondNone && dist[static_cast<std::size_t>(u)] < 0) {
                    dist[static_cast<std::size_t>(u)] = dist[static_cast<std::size_t>(q[qi])] + 1;
                    q.push_back(u);
                }
        return dist;
    };
    // Canonical string of the rooted radius-r ball: lexicographically smallest
    // adjacency encoding over all member permutations.
    auto ball_string = [&](int root, int r) {
        std::vector<int> dist = bfs(root);
        std::vector<int> members;
        for (int v = 0; v < g.n; ++v)
            if (dist[static_cast<std::size_t>(v)] >= 0 && dist[static_cast<std::size_t>(v)] <= r) members.push_back(v);
        std::string best;
        std::sort(members.begin(), members.end());
        do {
            std::string s;
            for (int v : members)
                s += std::to_string(g.atom_types[static_cast<std::size_t>(v)]) + ":" +
                     std::to_string(dist[static_cast<std::size_t>(v)]) + ";";
            for (int a : members)
                for (int b : members) s += std::to_string(g.bond(a, b));
            if (best.empty() || s < best) best = s;
        } while (std::next_permutation(members.begin(), members.end()));
        return best;
    };
    std::map<std::string, double> feats;
    for (int u = 0; u < g.n; ++u)
        for (int w = u; w < g.n; ++w) {
            int d = bfs(u)[static_cast<std::size_t>(w)];
            if (d < 0 || d > max_distance) continue;
            for (int r = 0; r <= max_radius; ++r) {
                std::string a = ball_string(u, r), b = ball_string(w, r);
                if (a > b) std::swap(a, b);
                feats[std::to_string(r) + "|" + std::to_string(d) + "|" + a + "|" + b] += 1.0;
            }
        }
    return feats;
}

double oracle_kernel(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (const auto& [k, v] : a) {
        na += v * v;
        auto it = b.find(k);
        if (it != b.end()) dot += v * it->second;
    }
    for (const auto& [k, v] : b) nb += v * v;
    if (na == 0 || nb == 0) return 0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

TEST_CASE("nspdk") {
    auto vocab = AtomVocabulary::qm9();
    SUBCASE("self kernel is one") {
        for (const char* s : {"C", "CCO", "C1CCCCC1", "CC(=O)O"}) {
            auto f = nspdk_features(from_smiles(s), 3, 4);
            CHECK(nspdk_kernel(f, f) == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    SUBCASE("identical sets give zero MMD") {
        std::vector<MolecularGraph> set{from_smiles("CCO"), from_smiles("CCN"), from_smiles("C1CC1")};
        CHECK(std::fabs(nspdk_mmd(set, set)) <= 1e-12);
    }
    SUBCASE("kernel matches the enumerated-feature oracle on 4-node graphs") {
        Rng rng(7);
        for (int trial = 0; trial < 8; ++trial) {
            MolecularGraph a = testutil::random_graph(4, 3, 0.5, rng);
            MolecularGraph b = testutil::random_graph(4, 3, 0.5, rng);
            double got = nspdk_kernel(nspdk_features(a, 2, 3), nspdk_features(b, 2, 3));
            double want = oracle_kernel(oracle_features(a, 2, 3), oracle_features(b, 2, 3));
            CHECK(std::fabs(got - want) <= 1e-12);
        }
    }
    SUBCASE("gram matrix is positive semidefinite") {
        Rng rng(11);
        std::vector<std::map<std::uint64_t, double>> feats;
        for (int i = 0; i < 12; ++i)
            feats.push_back(nspdk_features(testutil::random_graph(3 + rng.uniform_int(5), 4, 0.4, rng), 3, 4));
        std::vector<std::vector<double>> gram(feats.size(), std::vector<double>(feats.size()));
        for (std::size_t i = 0; i < feats.size(); ++i)
            for (std::size_t j = 0; j < feats.size(); ++j) {
                gram[i][j] = nspdk_kernel(feats[i], feats[j]);
                if (j < i) CHECK(gram[i][j] == doctest::Approx(gram[j][i]).epsilon(1e-12));
            }
        auto eig = testutil::symmetric_eigenvalues(gram);
        CHECK(eig.front() >= -1e-8);
    }
    SUBCASE("different topology scores below one") {
        auto f1 = nspdk_features(from_smiles("C1CCCCC1"), 3, 4);
        auto f2 = nspdk_features(from_smiles("CCCCCC"), 3, 4);
        CHECK(nspdk_kernel(f1, f2) < 1.0 - 1e-6);
    }
}

TEST_CASE("collision rate") {
    SUBCASE("identical embeddings collide always") {
        EmbeddingTrace tr;
        tr.n = 3;
        tr.dim = 2;
        for (int t = 0; t < 4; ++t) tr.states.push_back(Array::full(3, 2, 1.5));
        CHECK(collision_rate(tr, 1e-3) == doctest::Approx(1.0));
    }
    SUBCASE("spread embeddings never collide") {
        EmbeddingTrace tr;
        tr.n = 3;
        tr.dim = 1;
        Array a(3, 1);
        a.at(0, 0) = 0;
        a.at(1, 0) = 1;
        a.at(2, 0) = 2;
        tr.states.push_back(a);
        CHECK(collision_rate(tr, 0.5) == doctest::Approx(0.0));
    }
    SUBCASE("matches an independent double-loop reimplementation exactly") {
        Rng rng(13);
        EmbeddingTrace tr;
        tr.n = 5;
        tr.dim = 3;
        for (int t = 0; t < 4; ++t) tr.states.push_back(Array::uniform(5, 3, -0.005, 0.005, rng));
        double eps = 0.004;
        long c = 0, n = 0;
        for (int t = 0; t < 4; ++t)
            for (int i = 0; i < 5; ++i)
                for (int j = i + 1; j < 5; ++j) {
                    ++n;
                    double d2 = 0;
                    for (int k = 0; k < 3; ++k) {
                        double diff = tr.states[static_cast<std::size_t>(t)].at(i, k) -
                                      tr.states[static_cast<std::size_t>(t)].at(j, k);
                        d2 += diff * diff;
                    }
                    if (std::sqrt(d2) < eps) ++c;
                }
        CHECK(collision_rate(tr, eps) == static_cast<double>(c) / n);
        CHECK(c > 0);  // the scale makes some collisions certain
    }
    SUBCASE("invariant under simultaneous node permutation") {
        Rng rng(17);
        EmbeddingTrace tr;
        tr.n = 6;
        tr.dim = 4;
        for (int t = 0; t < 3; ++t) tr.states.push_back(Array::uniform(6, 4, -0.01, 0.01, rng));
        auto perm = testutil::random_permutation(6, rng);
        EmbeddingTrace pt;
        pt.n = 6;
        pt.dim = 4;
        for (const Array& s : tr.states) {
            Array out(6, 4);
            for (int i = 0; i < 6; ++i)
                for (int k = 0; k < 4; ++k) out.at(perm[static_cast<std::size_t>(i)], k) = s.at(i, k);
            pt.states.push_back(out);
        }
        CHECK(collision_rate(tr, 0.008) == collision_rate(pt, 0.008));
    }
    SUBCASE("error paths") {
        EmbeddingTrace tr;
        tr.n = 1;
        tr.dim = 2;
        tr.states.push_back(Array::zeros(1, 2));
        CHECK_THROWS_AS(collision_rate(tr, 1e-3), DomainError);
        EmbeddingTrace tr2;
        tr2.n = 3;
        tr2.dim = 2;
        tr2.states.push_back(Array::zeros(3, 2));
        CHECK_THROWS_AS(collision_rate(tr2, 0.0), DomainError);
    }
}

TEST_CASE("evaluation report") {
    auto vocab = AtomVocabulary::qm9();
    std::vector<MolecularGraph> gen{from_smiles("C"), from_smiles("CC"), from_smiles("CC")};
    std::vector<MolecularGraph> ref{from_smiles("C"), from_smiles("CO")};
    EvalReport r = evaluate(gen, ref, vocab);
    CHECK(r.sample_count == 3);
    CHECK(r.validity == doctest::Approx(100.0));
    CHECK(*r.uniqueness == doctest::Approx(200.0 / 3));
    CHECK(*r.nspdk_mmd > 0.0);
}
