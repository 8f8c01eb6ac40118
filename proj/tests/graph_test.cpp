#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "vqsad/graph.hpp"
#include "vqsad/smiles.hpp"

using namespace vqsad;

namespace {

MolecularGraph methane() {
    auto vocab = AtomVocabulary::qm9();
    return add_explicit_hydrogens(parse_smiles("C", vocab), vocab);
}

}  // namespace

TEST_CASE("canonical hash is invariant under relabeling") {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        MolecularGraph g = testutil::random_graph(2 + rng.uniform_int(7), 5, 0.4, rng);
        auto perm = testutil::random_permutation(g.n, rng);
        CHECK(canonical_hash(g) == canonical_hash(g.permuted(perm)));
    }
}

TEST_CASE("methane and ethane hash differently") {
    auto vocab = AtomVocabulary::qm9();
    auto a = add_explicit_hydrogens(parse_smiles("C", vocab), vocab);
    auto b = add_explicit_hydrogens(parse_smiles("CC", vocab), vocab);
    CHECK(canonical_hash(a) != canonical_hash(b));
}

TEST_CASE("hash agrees with the exhaustive isomorphism oracle on small graphs") {
    Rng rng(17);
    std::vector<MolecularGraph> graphs;
    for (int i = 0; i < 25; ++i) graphs.push_back(testutil::random_graph(3 + rng.uniform_int(5), 3, 0.45, rng));
    // Include relabeled copies so isomorphic pairs actually occur.
    for (int i = 0; i < 25; ++i) {
        const MolecularGraph& base = graphs[static_cast<std::size_t>(rng.uniform_int(25))];
        graphs.push_back(base.permuted(testutil::random_permutation(base.n, rng)));
    }
    int iso_pairs = 0;
    for (std::size_t i = 0; i < graphs.size(); ++i)
        for (std::size_t j = i + 1; j < graphs.size(); ++j) {
            bool iso = testutil::isomorphic_bruteforce(graphs[i], graphs[j]);
            bool same_hash = canonical_hash(graphs[i]) == canonical_hash(graphs[j]);
            CHECK(iso == same_hash);
            if (iso) ++iso_pairs;
        }
    CHECK(iso_pairs >= 25);  // the permuted copies at minimum
}

TEST_CASE("valence checking") {
    auto vocab = AtomVocabulary::qm9();
    SUBCASE("explicit-hydrogen methane is valid") { CHECK(check_valence(methane(), vocab)); }
    SUBCASE("carbon with five bonds is invalid") {
        MolecularGraph g(6);
        g.atom_types = {1, 0, 0, 0, 0, 0};  // C with five H
        for (int i = 1; i < 6; ++i) g.set_bond(0, i, 1);
        CHECK_FALSE(check_valence(g, vocab));
    }
    SUBCASE("two disconnected valid fragments are invalid") {
        MolecularGraph g(2);
        g.atom_types = {0, 0};  // two lone hydrogens
        CHECK_FALSE(check_valence(g, vocab));
    }
    SUBCASE("single atom graph is connected by convention") {
        MolecularGraph g(1);
        g.atom_types = {1};
        CHECK(check_valence(g, vocab));
    }
    SUBCASE("unknown category raises") {
        MolecularGraph g(1);
        g.atom_types = {9};
        CHECK_THROWS_AS(check_valence(g, vocab), DomainError);
    }
    SUBCASE("permutation invariance") {
        Rng rng(5);
        for (int i = 0; i < 20; ++i) {
            MolecularGraph g = testutil::random_graph(5, vocab.size(), 0.4, rng);
            auto perm = testutil::random_permutation(g.n, rng);
            CHECK(check_valence(g, vocab) == check_valence(g.permuted(perm), vocab));
        }
    }
}

TEST_CASE("dataset io") {
    namespace fs = std::filesystem;
    auto vocab = AtomVocabulary::qm9();
    fs::path dir = fs::temp_directory_path() / "vqsad_dataset_test";
    fs::create_directories(dir);

    SUBCASE("empty file reads as empty sequence") {
        fs::path p = dir / "empty.jsonl";
        std::ofstream(p.string()).close();
        CHECK(read_dataset(p.string(), vocab).empty());
    }
    SUBCASE("single methane record") {
        fs::path p = dir / "methane.jsonl";
        write_dataset({methane()}, vocab, p.string());
        auto back = read_dataset(p.string(), vocab);
        REQUIRE(back.size() == 1);
        CHECK(back[0].n == 5);
        CHECK(back[0].atom_types == methane().atom_types);
    }
    SUBCASE("100 random molecules re-serialize bit-identically") {
        Rng rng(23);
        std::vector<MolecularGraph> mols;
        for (int i = 0; i < 100; ++i) {
            mols.push_back(testutil::random_valid_molecule(2 + rng.uniform_int(8), vocab, rng));
            if (i % 3 == 0) mols.back().property = rng.uniform() * 10.0;
        }
        fs::path p1 = dir / "a.jsonl", p2 = dir / "b.jsonl";
        write_dataset(mols, vocab, p1.string());
        auto back = read_dataset(p1.string(), vocab);
        REQUIRE(back.size() == mols.size());
        for (std::size_t i = 0; i < mols.size(); ++i) {
            CHECK(back[i].atom_types == mols[i].atom_types);
            CHECK(back[i].bond_types == mols[i].bond_types);
            CHECK(back[i].property.has_value() == mols[i].property.has_value());
        }
        write_dataset(back, vocab, p2.string());
        std::ifstream f1(p1.string()), f2(p2.string());
        std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        CHECK(s1 == s2);
    }
    SUBCASE("malformed record reports the line number") {
        fs::path p = dir / "bad.jsonl";
        std::ofstream out(p.string());
        out << serialize_graph(methane(), vocab) << "\n";
        out << "{not json\n";
        out.close();
        CHECK_THROWS_WITH_AS(read_dataset(p.string(), vocab), doctest::Contains("line 2"), ParseError);
    }
    SUBCASE("out-of-vocabulary symbol raises a domain error") {
        fs::path p = dir / "oov.jsonl";
        std::ofstream out(p.string());
        out << R"({"atoms":["Xe"],"bonds":[],"property":null})" << "\n";
        out.close();
        CHECK_THROWS_AS(read_dataset(p.string(), vocab), DomainError);
    }
    fs::remove_all(dir);
}

TEST_CASE("graph invariants are enforced") {
    MolecularGraph g(2);
    g.atom_types = {0, 1};
    g.bond_types = {0, 1, 2, 0};  // asymmetric
    CHECK_THROWS_AS(g.validate(5), DomainError);
    g.bond_types = {1, 0, 0, 0};  // diagonal bond
    CHECK_THROWS_AS(g.validate(5), DomainError);
}

TEST_CASE("noisy graph mask bookkeeping") {
    NoisyGraph g = NoisyGraph::fully_masked(3, 5, 4);
    CHECK(g.node_mask() == 5);
    CHECK(g.edge_mask() == 4);
    for (int i = 0; i < 3; ++i) CHECK(g.node_masked(i));
    CHECK(g.bond(1, 1) == 0);  // diagonal stays clear
    g.set_bond(0, 1, 2);
    CHECK(g.bond(1, 0) == 2);
}
