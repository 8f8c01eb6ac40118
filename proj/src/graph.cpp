#include "vqsad/graph.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace vqsad {

using nlohmann::json;

int AtomVocabulary::index_of(const std::string& symbol) const {
    for (int i = 0; i < size(); ++i)
        if (symbols[static_cast<std::size_t>(i)] == symbol) return i;
    return -1;
}

AtomVocabulary AtomVocabulary::qm9() { return {{"H", "C", "N", "O", "F"}, {1, 4, 3, 2, 1}}; }

AtomVocabulary AtomVocabulary::zinc() { return {{"C", "N", "O", "S", "Cl"}, {4, 3, 2, 6, 1}}; }

AtomVocabulary AtomVocabulary::by_name(const std::string& name) {
    if (name == "qm9") return qm9();
    if (name == "zinc") return zinc();
    throw DomainError("unknown vocabulary: " + name + " (expected qm9 or zinc)");
}

void MolecularGraph::validate(int node_classes, int edge_classes) const {
    if (n < 1) throw DomainError("graph must have at least one node");
    if (static_cast<int>(atom_types.size()) != n) throw DomainError("atom_types size mismatch");
    if (static_cast<long>(bond_types.size()) != static_cast<long>(n) * n)
        throw DomainError("bond_types size mismatch");
    for (int i = 0; i < n; ++i) {
        if (atom_types[static_cast<std::size_t>(i)] < 0 || atom_types[static_cast<std::size_t>(i)] >= node_classes)
            throw DomainError("atom category out of range at node " + std::to_string(i));
        if (bond(i, i) != kBondNone) throw DomainError("nonzero bond on diagonal at node " + std::to_string(i));
        for (int j = 0; j < n; ++j) {
            if (bond(i, j) != bond(j, i)) throw DomainError("asymmetric bond matrix");
            if (bond(i, j) < 0 || bond(i, j) >= edge_classes)
                throw DomainError("bond category out of range at pair (" + std::to_string(i) + "," +
                                  std::to_string(j) + ")");
        }
    }
}

MolecularGraph MolecularGraph::permuted(const std::vector<int>& perm) const {
    MolecularGraph out(n);
    out.property = property;
    for (int i = 0; i < n; ++i) out.atom_types[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = atom_types[static_cast<std::size_t>(i)];
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            out.bond_types[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]) * n + perm[static_cast<std::size_t>(j)]] =
                bond(i, j);
    return out;
}

NoisyGraph NoisyGraph::from_molecule(const MolecularGraph& m, int node_cls, int edge_cls) {
    NoisyGraph g;
    g.n = m.n;
    g.node_classes = node_cls;
    g.edge_classes = edge_cls;
    g.atom_types = m.atom_types;
    g.bond_types = m.bond_types;
    return g;
}

namespace {

std::uint64_t mix(std::uint64_t h, std::uint64_t x) {
    h ^= x + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    return h ^ (h >> 27);
}

std::vector<int> component_sizes(const MolecularGraph& g) {
    std::vector<int> comp(static_cast<std::size_t>(g.n), -1);
    std::vector<int> sizes;
    for (int s = 0; s < g.n; ++s) {
        if (comp[static_cast<std::size_t>(s)] >= 0) continue;
        int id = static_cast<int>(sizes.size());
        sizes.push_back(0);
        std::vector<int> stack{s};
        comp[static_cast<std::size_t>(s)] = id;
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            ++sizes[static_cast<std::size_t>(id)];
            for (int u = 0; u < g.n; ++u)
                if (g.bond(v, u) != kBondNone && comp[static_cast<std::size_t>(u)] < 0) {
                    comp[static_cast<std::size_t>(u)] = id;
                    stack.push_back(u);
                }
        }
    }
    std::sort(sizes.begin(), sizes.end());
    return sizes;
}

}  // namespace

std::uint64_t canonical_hash(const MolecularGraph& g) {
    const int n = g.n;
    std::vector<std::uint64_t> label(static_cast<std::size_t>(n));
    // Seed: atom type plus the sorted multiset of incident bond types.
    for (int i = 0; i < n; ++i) {
        std::vector<int> incident;
        for (int j = 0; j < n; ++j)
            if (g.bond(i, j) != kBondNone) incident.push_back(g.bond(i, j));
        std::sort(incident.begin(), incident.end());
        std::uint64_t h = mix(0x243f6a8885a308d3ull, static_cast<std::uint64_t>(g.atom_types[static_cast<std::size_t>(i)]));
        for (int b : incident) h = mix(h, static_cast<std::uint64_t>(b));
        label[static_cast<std::size_t>(i)] = h;
    }
    int rounds = std::max(n, 2);
    std::vector<std::uint64_t> next(static_cast<std::size_t>(n));
    for (int r = 0; r < rounds; ++r) {
        for (int i = 0; i < n; ++i) {
            std::vector<std::uint64_t> neigh;
            for (int j = 0; j < n; ++j)
                if (g.bond(i, j) != kBondNone)
                    neigh.push_back(mix(static_cast<std::uint64_t>(g.bond(i, j)), label[static_cast<std::size_t>(j)]));
            std::sort(neigh.begin(), neigh.end());
            std::uint64_t h = mix(0x13198a2e03707344ull, label[static_cast<std::size_t>(i)]);
            for (std::uint64_t x : neigh) h = mix(h, x);
            next[static_cast<std::size_t>(i)] = h;
        }
        label.swap(next);
    }
    std::sort(label.begin(), label.end());
    std::uint64_t digest = mix(0xa4093822299f31d0ull, static_cast<std::uint64_t>(n));
    for (std::uint64_t x : label) digest = mix(digest, x);
    for (int s : component_sizes(g)) digest = mix(digest, static_cast<std::uint64_t>(s));
    return digest;
}

bool connected(const MolecularGraph& g) { return component_sizes(g).size() == 1; }

bool check_valence(const MolecularGraph& g, const AtomVocabulary& vocab) {
    for (int i = 0; i < g.n; ++i) {
        int a = g.atom_types[static_cast<std::size_t>(i)];
        if (a < 0 || a >= vocab.size()) throw DomainError("unknown atom category " + std::to_string(a));
        int order_sum = 0;
        for (int j = 0; j < g.n; ++j) {
            int b = g.bond(i, j);
            if (b < 0 || b >= kNumBondClasses) throw DomainError("unknown bond category " + std::to_string(b));
            order_sum += b;  // category index is the bond order
        }
        if (order_sum > vocab.valences[static_cast<std::size_t>(a)]) return false;
    }
    return connected(g);
}

std::string serialize_graph(const MolecularGraph& g, const AtomVocabulary& vocab) {
    json rec;
    json atoms = json::array();
    for (int i = 0; i < g.n; ++i) atoms.push_back(vocab.symbols[static_cast<std::size_t>(g.atom_types[static_cast<std::size_t>(i)])]);
    json bonds = json::array();
    for (int i = 0; i < g.n; ++i)
        for (int j = i + 1; j < g.n; ++j)
            if (g.bond(i, j) != kBondNone) bonds.push_back({i, j, g.bond(i, j)});
    rec["atoms"] = atoms;
    rec["bonds"] = bonds;
    if (g.property)
        rec["property"] = *g.property;
    else
        rec["property"] = nullptr;
    return rec.dump();
}

void write_dataset(const std::vector<MolecularGraph>& graphs, const AtomVocabulary& vocab,
                   const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DomainError("cannot write dataset: " + path);
    for (const auto& g : graphs) out << serialize_graph(g, vocab) << "\n";
}

std::vector<MolecularGraph> read_dataset(const std::string& path, const AtomVocabulary& vocab) {
    std::ifstream in(path);
    if (!in) throw DomainError("cannot read dataset: " + path);
    std::vector<MolecularGraph> graphs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("bad dataset record on line " + std::to_string(line_no) + ": " + e.what(), line_no);
        }
        if (!rec.contains("atoms") || !rec.contains("bonds"))
            throw ParseError("dataset record missing atoms/bonds on line " + std::to_string(line_no), line_no);
        const auto& atoms = rec["atoms"];
        MolecularGraph g(static_cast<int>(atoms.size()));
        for (int i = 0; i < g.n; ++i) {
            std::string sym = atoms[static_cast<std::size_t>(i)].get<std::string>();
            int idx = vocab.index_of(sym);
            if (idx < 0)
                throw DomainError("out-of-vocabulary symbol '" + sym + "' on line " + std::to_string(line_no));
            g.atom_types[static_cast<std::size_t>(i)] = idx;
        }
        for (const auto& b : rec["bonds"]) {
            if (!b.is_array() || b.size() != 3)
                throw ParseError("bad bond entry on line " + std::to_string(line_no), line_no);
            int i = b[0].get<int>(), j = b[1].get<int>(), order = b[2].get<int>();
            if (i < 0 || j < 0 || i >= g.n || j >= g.n || i == j)
                throw ParseError("bond endpoint out of range on line " + std::to_string(line_no), line_no);
            if (order < 1 || order >= kNumBondClasses)
                throw ParseError("bond order out of range on line " + std::to_string(line_no), line_no);
            g.set_bond(i, j, order);
        }
        if (rec.contains("property") && !rec["property"].is_null()) g.property = rec["property"].get<double>();
        g.validate(vocab.size());
        graphs.push_back(std::move(g));
    }
    return graphs;
}

}  // namespace vqsad
