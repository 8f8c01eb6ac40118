#include "vqsad/smiles.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>

namespace vqsad {

namespace {

struct PendingRing {
    int atom;
    int order;  // 0 = unspecified at opening
};

struct Builder {
    std::vector<int> atoms;
    std::vector<std::array<int, 3>> bonds;  // i, j, order

    int add_atom(int type) {
        atoms.push_back(type);
        return static_cast<int>(atoms.size()) - 1;
    }
    void add_bond(int i, int j, int order, std::size_t pos) {
        if (i == j) throw ParseError("self bond", pos);
        for (const auto& b : bonds)
            if ((b[0] == i && b[1] == j) || (b[0] == j && b[1] == i))
                throw ParseError("duplicate bond", pos);
        bonds.push_back({i, j, order});
    }
    MolecularGraph finish() const {
        MolecularGraph g(static_cast<int>(atoms.size()));
        g.atom_types = atoms;
        for (const auto& b : bonds) g.set_bond(b[0], b[1], b[2]);
        return g;
    }
};

}  // namespace

MolecularGraph parse_smiles(const std::string& s, const AtomVocabulary& vocab) {
    if (s.empty()) throw ParseError("empty SMILES", 0);
    Builder b;
    std::vector<int> branch_stack;
    std::map<int, PendingRing> open_rings;
    int prev = -1;
    int pending_order = 0;  // 0 = default single
    std::size_t i = 0;
    while (i < s.size()) {
        char c = s[i];
        if (c == '-' || c == '=' || c == '#') {
            if (pending_order != 0) throw ParseError("two bond symbols in a row", i);
            pending_order = c == '-' ? 1 : (c == '=' ? 2 : 3);
            ++i;
            continue;
        }
        if (c == '(') {
            if (prev < 0) throw ParseError("branch before any atom", i);
            if (pending_order != 0) throw ParseError("bond symbol before branch open", i);
            branch_stack.push_back(prev);
            ++i;
            continue;
        }
        if (c == ')') {
            if (branch_stack.empty()) throw ParseError("unbalanced ')'", i);
            if (pending_order != 0) throw ParseError("dangling bond symbol before ')'", i);
            prev = branch_stack.back();
            branch_stack.pop_back();
            ++i;
            continue;
        }
        if (c >= '1' && c <= '9') {
            if (prev < 0) throw ParseError("ring digit before any atom", i);
            int digit = c - '0';
            auto it = open_rings.find(digit);
            if (it == open_rings.end()) {
                open_rings[digit] = {prev, pending_order};
            } else {
                int order = pending_order;
                if (order == 0) order = it->second.order;
                if (it->second.order != 0 && pending_order != 0 && it->second.order != pending_order)
                    throw ParseError("conflicting ring-bond orders for digit " + std::to_string(digit), i);
                if (order == 0) order = 1;
                b.add_bond(it->second.atom, prev, order, i);
                open_rings.erase(it);
            }
            pending_order = 0;
            ++i;
            continue;
        }
        if (std::isupper(static_cast<unsigned char>(c))) {
            // Longest symbol match: two characters first (e.g. Cl), then one.
            int type = -1;
            std::size_t len = 0;
            if (i + 1 < s.size() && std::islower(static_cast<unsigned char>(s[i + 1]))) {
                type = vocab.index_of(s.substr(i, 2));
                len = 2;
            }
            if (type < 0) {
                type = vocab.index_of(s.substr(i, 1));
                len = 1;
            }
            if (type < 0) throw ParseError("unknown element '" + s.substr(i, 2) + "'", i);
            int atom = b.add_atom(type);
            if (prev >= 0) b.add_bond(prev, atom, pending_order == 0 ? 1 : pending_order, i);
            pending_order = 0;
            prev = atom;
            i += len;
            continue;
        }
        if (std::islower(static_cast<unsigned char>(c)))
            throw ParseError("aromatic atoms are not supported", i);
        if (c == '[' || c == '+' || c == '/' || c == '\\' || c == '@' || c == '%' || c == '.')
            throw ParseError(std::string("unsupported SMILES feature '") + c + "'", i);
        if (std::isspace(static_cast<unsigned char>(c))) break;  // trailing name field
        throw ParseError(std::string("unexpected character '") + c + "'", i);
    }
    if (!branch_stack.empty()) throw ParseError("unbalanced '('", s.size());
    if (!open_rings.empty())
        throw ParseError("unpaired ring digit " + std::to_string(open_rings.begin()->first), s.size());
    if (pending_order != 0) throw ParseError("dangling bond symbol", s.size());
    if (b.atoms.empty()) throw ParseError("no atoms", 0);
    MolecularGraph g = b.finish();
    g.validate(vocab.size());
    return g;
}

MolecularGraph add_explicit_hydrogens(const MolecularGraph& g, const AtomVocabulary& vocab) {
    int h_idx = vocab.index_of("H");
    if (h_idx < 0) throw DomainError("vocabulary has no hydrogen");
    std::vector<int> deficit(static_cast<std::size_t>(g.n), 0);
    int extra = 0;
    for (int i = 0; i < g.n; ++i) {
        int order_sum = 0;
        for (int j = 0; j < g.n; ++j) order_sum += g.bond(i, j);
        int d = vocab.valences[static_cast<std::size_t>(g.atom_types[static_cast<std::size_t>(i)])] - order_sum;
        deficit[static_cast<std::size_t>(i)] = std::max(0, d);
        extra += deficit[static_cast<std::size_t>(i)];
    }
    MolecularGraph out(g.n + extra);
    out.property = g.property;
    for (int i = 0; i < g.n; ++i) out.atom_types[static_cast<std::size_t>(i)] = g.atom_types[static_cast<std::size_t>(i)];
    for (int i = 0; i < g.n; ++i)
        for (int j = i + 1; j < g.n; ++j)
            if (g.bond(i, j) != kBondNone) out.set_bond(i, j, g.bond(i, j));
    int next = g.n;
    for (int i = 0; i < g.n; ++i)
        for (int k = 0; k < deficit[static_cast<std::size_t>(i)]; ++k) {
            out.atom_types[static_cast<std::size_t>(next)] = h_idx;
            out.set_bond(i, next, 1);
            ++next;
        }
    return out;
}

namespace {

const char* bond_symbol(int order) {
    switch (order) {
        case 2: return "=";
        case 3: return "#";
        default: return "";
    }
}

struct Writer {
    const MolecularGraph& g;
    const AtomVocabulary& vocab;
    std::vector<bool> visited;
    std::vector<std::array<int, 3>> ring_bonds;  // i, j, order (back edges)
    std::string out;

    // First pass: DFS spanning tree, collecting back edges.
    void scan(int v, int parent) {
        visited[static_cast<std::size_t>(v)] = true;
        for (int u = 0; u < g.n; ++u) {
            if (g.bond(v, u) == kBondNone || u == parent) continue;
            if (visited[static_cast<std::size_t>(u)]) {
                bool known = false;
                for (const auto& rb : ring_bonds)
                    if ((rb[0] == v && rb[1] == u) || (rb[0] == u && rb[1] == v)) known = true;
                if (!known) ring_bonds.push_back({u, v, g.bond(v, u)});
            } else {
                scan(u, v);
            }
        }
    }

    bool is_ring_bond(int a, int c) const {
        for (const auto& rb : ring_bonds)
            if ((rb[0] == a && rb[1] == c) || (rb[0] == c && rb[1] == a)) return true;
        return false;
    }

    void emit(int v, int parent, std::map<int, int>& digit_of_atom, std::vector<bool>& digit_used) {
        visited[static_cast<std::size_t>(v)] = true;
        out += vocab.symbols[static_cast<std::size_t>(g.atom_types[static_cast<std::size_t>(v)])];
        // Ring digits attached to this atom.
        for (std::size_t r = 0; r < ring_bonds.size(); ++r) {
            const auto& rb = ring_bonds[r];
            if (rb[0] != v && rb[1] != v) continue;
            auto it = digit_of_atom.find(static_cast<int>(r));
            if (it == digit_of_atom.end()) {
                int d = 1;
                while (d <= 9 && digit_used[static_cast<std::size_t>(d)]) ++d;
                if (d > 9) throw DomainError("more than nine simultaneously open rings");
                digit_used[static_cast<std::size_t>(d)] = true;
                digit_of_atom[static_cast<int>(r)] = d;
                out += bond_symbol(rb[2]);
                out += static_cast<char>('0' + d);
            } else {
                int d = it->second;
                digit_used[static_cast<std::size_t>(d)] = false;
                out += static_cast<char>('0' + d);
            }
        }
        std::vector<int> children;
        for (int u = 0; u < g.n; ++u)
            if (u != parent && g.bond(v, u) != kBondNone && !visited[static_cast<std::size_t>(u)] && !is_ring_bond(v, u))
                children.push_back(u);
        for (std::size_t k = 0; k < children.size(); ++k) {
            int u = children[k];
            if (visited[static_cast<std::size_t>(u)]) continue;  // closed via a ring path meanwhile
            bool last = true;
            for (std::size_t k2 = k + 1; k2 < children.size(); ++k2)
                if (!visited[static_cast<std::size_t>(children[k2])]) last = false;
            if (!last) out += "(";
            out += bond_symbol(g.bond(v, u));
            emit(u, v, digit_of_atom, digit_used);
            if (!last) out += ")";
        }
    }
};

}  // namespace

std::string write_smiles(const MolecularGraph& g, const AtomVocabulary& vocab) {
    if (!connected(g)) throw DomainError("write_smiles requires a connected graph");
    Writer w{g, vocab, std::vector<bool>(static_cast<std::size_t>(g.n), false), {}, {}};
    w.scan(0, -1);
    std::fill(w.visited.begin(), w.visited.end(), false);
    std::map<int, int> digit_of_ring;
    std::vector<bool> digit_used(10, false);
    w.emit(0, -1, digit_of_ring, digit_used);
    return w.out;
}

}  // namespace vqsad
