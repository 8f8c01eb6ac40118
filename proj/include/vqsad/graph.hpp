#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vqsad/errors.hpp"

namespace vqsad {

// Bond categories are global: index doubles as bond order for 1..3.
inline constexpr int kBondNone = 0;
inline constexpr int kNumBondClasses = 4;  // none, single, double, triple

struct AtomVocabulary {
    std::vector<std::string> symbols;
    std::vector<int> valences;

    int size() const { return static_cast<int>(symbols.size()); }
    int index_of(const std::string& symbol) const;       // -1 when absent
    bool has_hydrogen() const { return index_of("H") >= 0; }

    static AtomVocabulary qm9();   // H, C, N, O, F (explicit hydrogens)
    static AtomVocabulary zinc();  // C, N, O, S, Cl (implicit hydrogens)
    static AtomVocabulary by_name(const std::string& name);
};

// Undirected typed molecular graph. Bond matrix is symmetric with zero
// diagonal; categories index the vocabulary / bond classes.
struct MolecularGraph {
    int n = 0;
    std::vector<int> atom_types;   // [n]
    std::vector<int> bond_types;   // [n*n], row-major
    std::optional<double> property;

    MolecularGraph() = default;
    explicit MolecularGraph(int nodes)
        : n(nodes), atom_types(nodes, 0), bond_types(static_cast<std::size_t>(nodes) * nodes, 0) {}

    int bond(int i, int j) const { return bond_types[static_cast<std::size_t>(i) * n + j]; }
    void set_bond(int i, int j, int category) {
        bond_types[static_cast<std::size_t>(i) * n + j] = category;
        bond_types[static_cast<std::size_t>(j) * n + i] = category;
    }

    // Throws DomainError on any invariant violation.
    void validate(int node_classes, int edge_classes = kNumBondClasses) const;

    MolecularGraph permuted(const std::vector<int>& perm) const;  // node i -> perm[i]
};

// Graph state during diffusion: category ranges extended by one mask index
// (node_classes for nodes, edge_classes for edges). Also used for the code
// graphs of the latent-space model, where classes are codebook sizes.
struct NoisyGraph {
    int n = 0;
    int node_classes = 0;  // excluding mask
    int edge_classes = 0;  // excluding mask
    std::vector<int> atom_types;
    std::vector<int> bond_types;

    NoisyGraph() = default;
    NoisyGraph(int nodes, int node_cls, int edge_cls, int fill_node, int fill_edge)
        : n(nodes),
          node_classes(node_cls),
          edge_classes(edge_cls),
          atom_types(nodes, fill_node),
          bond_types(static_cast<std::size_t>(nodes) * nodes, fill_edge) {
        for (int i = 0; i < nodes; ++i) bond_types[static_cast<std::size_t>(i) * nodes + i] = 0;
    }

    static NoisyGraph fully_masked(int nodes, int node_cls, int edge_cls) {
        NoisyGraph g(nodes, node_cls, edge_cls, node_cls, edge_cls);
        return g;
    }
    static NoisyGraph from_molecule(const MolecularGraph& m, int node_cls, int edge_cls);

    int node_mask() const { return node_classes; }
    int edge_mask() const { return edge_classes; }
    int bond(int i, int j) const { return bond_types[static_cast<std::size_t>(i) * n + j]; }
    void set_bond(int i, int j, int category) {
        bond_types[static_cast<std::size_t>(i) * n + j] = category;
        bond_types[static_cast<std::size_t>(j) * n + i] = category;
    }
    bool node_masked(int i) const { return atom_types[static_cast<std::size_t>(i)] == node_classes; }
    bool edge_masked(int i, int j) const { return bond(i, j) == edge_classes; }
};

// Relabeling-invariant digest: Weisfeiler-Lehman refinement seeded with atom
// types and incident bond-type multisets, >= n rounds, folded with the node
// count and connected-component size profile.
std::uint64_t canonical_hash(const MolecularGraph& g);

// True iff every atom's total bond order stays within the vocabulary valence
// and the bonded graph is a single connected component.
bool check_valence(const MolecularGraph& g, const AtomVocabulary& vocab);

bool connected(const MolecularGraph& g);

// JSON Lines dataset: one object per molecule,
// {"atoms": [...symbols], "bonds": [[i,j,order],...], "property": number|null}.
std::vector<MolecularGraph> read_dataset(const std::string& path, const AtomVocabulary& vocab);
void write_dataset(const std::vector<MolecularGraph>& graphs, const AtomVocabulary& vocab,
                   const std::string& path);
std::string serialize_graph(const MolecularGraph& g, const AtomVocabulary& vocab);

}  // namespace vqsad
