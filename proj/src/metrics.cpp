#include "vqsad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace vqsad {

double validity(const std::vector<MolecularGraph>& samples, const AtomVocabulary& vocab) {
    if (samples.empty()) throw DomainError("validity: empty sample set");
    int ok = 0;
    for (const auto& g : samples)
        if (check_valence(g, vocab)) ++ok;
    return 100.0 * ok / static_cast<double>(samples.size());
}

std::optional<double> uniqueness(const std::vector<MolecularGraph>& samples, const AtomVocabulary& vocab) {
    if (samples.empty()) throw DomainError("uniqueness: empty sample set");
    std::set<std::uint64_t> distinct;
    int valid = 0;
    for (const auto& g : samples)
        if (check_valence(g, vocab)) {
            ++valid;
            distinct.insert(canonical_hash(g));
        }
    if (valid == 0) return std::nullopt;
    return 100.0 * static_cast<double>(distinct.size()) / valid;
}

namespace {

std::uint64_t mix(std::uint64_t h, std::uint64_t x) {
    h ^= x + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    return h ^ (h >> 27);
}

std::vector<int> bfs_distances(const MolecularGraph& g, int root) {
    std::vector<int> dist(static_cast<std::size_t>(g.n), -1);
    std::vector<int> queue{root};
    dist[static_cast<std::size_t>(root)] = 0;
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
        int v = queue[qi];
        for (int u = 0; u < g.n; ++u)
            if (g.bond(v, u) != kBondNone && dist[static_cast<std::size_t>(u)] < 0) {
                dist[static_cast<std::size_t>(u)] = dist[static_cast<std::size_t>(v)] + 1;
                queue.push_back(u);
            }
    }
    return dist;
}

// Relabeling-invariant hash of the radius-r neighborhood rooted at `root`:
// WL refinement over the induced subgraph, seeded with (atom type, distance
// from root).
std::uint64_t neighborhood_hash(const MolecularGraph& g, const std::vector<int>& dist_from_root, int radius) {
    std::vector<int> members;
    for (int v = 0; v < g.n; ++v)
        if (dist_from_root[static_cast<std::size_t>(v)] >= 0 && dist_from_root[static_cast<std::size_t>(v)] <= radius)
            members.push_back(v);
    std::vector<std::uint64_t> label(members.size());
    for (std::size_t i = 0; i < members.size(); ++i)
        label[i] = mix(static_cast<std::uint64_t>(g.atom_types[static_cast<std::size_t>(members[i])]),
                       static_cast<std::uint64_t>(dist_from_root[static_cast<std::size_t>(members[i])]));
    int rounds = std::max<int>(static_cast<int>(members.size()), 2);
    std::vector<std::uint64_t> next(members.size());
    for (int r = 0; r < rounds; ++r) {
        for (std::size_t i = 0; i < members.size(); ++i) {
            std::vector<std::uint64_t> neigh;
            for (std::size_t j = 0; j < members.size(); ++j)
                if (i != j && g.bond(members[i], members[j]) != kBondNone)
                    neigh.push_back(mix(static_cast<std::uint64_t>(g.bond(members[i], members[j])), label[j]));
            std::sort(neigh.begin(), neigh.end());
            std::uint64_t h = mix(0x452821e638d01377ull, label[i]);
            for (std::uint64_t x : neigh) h = mix(h, x);
            next[i] = h;
        }
        label.swap(next);
    }
    std::sort(label.begin(), label.end());
    std::uint64_t digest = mix(0xbe5466cf34e90c6cull, static_cast<std::uint64_t>(members.size()));
    for (std::uint64_t x : label) digest = mix(digest, x);
    return digest;
}

}  // namespace

std::map<std::uint64_t, double> nspdk_features(const MolecularGraph& g, int max_radius, int max_distance) {
    // Per-root neighborhood hashes for every radius.
    std::vector<std::vector<int>> dist(static_cast<std::size_t>(g.n));
    for (int v = 0; v < g.n; ++v) dist[static_cast<std::size_t>(v)] = bfs_distances(g, v);
    std::vector<std::vector<std::uint64_t>> nh(static_cast<std::size_t>(g.n),
                                               std::vector<std::uint64_t>(static_cast<std::size_t>(max_radius) + 1));
    for (int v = 0; v < g.n; ++v)
        for (int r = 0; r <= max_radius; ++r)
            nh[static_cast<std::size_t>(v)][static_cast<std::size_t>(r)] =
                neighborhood_hash(g, dist[static_cast<std::size_t>(v)], r);
    std::map<std::uint64_t, double> feats;
    for (int u = 0; u < g.n; ++u)
        for (int w = u; w < g.n; ++w) {
            int d = dist[static_cast<std::size_t>(u)][static_cast<std::size_t>(w)];
            if (d < 0 || d > max_distance) continue;
            for (int r = 0; r <= max_radius; ++r) {
                std::uint64_t a = nh[static_cast<std::size_t>(u)][static_cast<std::size_t>(r)];
                std::uint64_t b = nh[static_cast<std::size_t>(w)][static_cast<std::size_t>(r)];
                if (a > b) std::swap(a, b);
                std::uint64_t key = mix(mix(mix(static_cast<std::uint64_t>(r) + 1, static_cast<std::uint64_t>(d)), a), b);
                feats[key] += 1.0;
            }
        }
    return feats;
}

double nspdk_kernel(const std::map<std::uint64_t, double>& a, const std::map<std::uint64_t, double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [k, v] : a) na += v * v;
    for (const auto& [k, v] : b) nb += v * v;
    if (na == 0.0 || nb == 0.0) return 0.0;
    auto it = b.begin();
    for (const auto& [k, v] : a) {
        while (it != b.end() && it->first < k) ++it;
        if (it == b.end()) break;
        if (it->first == k) dot += v * it->second;
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

double nspdk_mmd(const std::vector<MolecularGraph>& generated, const std::vector<MolecularGraph>& reference,
                 int max_radius, int max_distance) {
    if (generated.empty() || reference.empty()) throw DomainError("nspdk_mmd: empty set");
    std::vector<std::map<std::uint64_t, double>> fg, fr;
    for (const auto& g : generated) fg.push_back(nspdk_features(g, max_radius, max_distance));
    for (const auto& g : reference) fr.push_back(nspdk_features(g, max_radius, max_distance));
    auto mean_kernel = [](const auto& a, const auto& b) {
        double s = 0.0;
        for (const auto& fa : a)
            for (const auto& fb : b) s += nspdk_kernel(fa, fb);
        return s / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
    };
    return mean_kernel(fg, fg) + mean_kernel(fr, fr) - 2.0 * mean_kernel(fg, fr);
}

double collision_rate(const EmbeddingTrace& trace, double eps) {
    if (trace.n < 2) throw DomainError("collision_rate: need at least two nodes");
    if (trace.states.empty()) throw DomainError("collision_rate: empty trace");
    if (eps <= 0.0) throw DomainError("collision_rate: eps must be positive");
    long collisions = 0;
    long examined = 0;
    for (auto it = trace.states.rbegin(); it != trace.states.rend(); ++it) {
        const Array& h = *it;
        for (int i = 0; i < trace.n; ++i)
            for (int j = i + 1; j < trace.n; ++j) {
                ++examined;
                double d2 = 0.0;
                for (int c = 0; c < trace.dim; ++c) {
                    double diff = h.at(i, c) - h.at(j, c);
                    d2 += diff * diff;
                }
                if (std::sqrt(d2) < eps) ++collisions;
            }
    }
    return static_cast<double>(collisions) / static_cast<double>(examined);
}

EvalReport evaluate(const std::vector<MolecularGraph>& generated, const std::vector<MolecularGraph>& reference,
                    const AtomVocabulary& vocab, int max_radius, int max_distance) {
    EvalReport r;
    r.sample_count = static_cast<int>(generated.size());
    r.validity = validity(generated, vocab);
    r.uniqueness = uniqueness(generated, vocab);
    if (!reference.empty()) r.nspdk_mmd = nspdk_mmd(generated, reference, max_radius, max_distance);
    return r;
}

}  // namespace vqsad
