#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "vqsad/array.hpp"
#include "vqsad/graph.hpp"

namespace vqsad {

// Per-node continuous embeddings recorded at each reverse diffusion step.
struct EmbeddingTrace {
    int n = 0;
    int dim = 0;
    std::vector<Array> states;  // one [n,dim] array per step
};

struct EvalReport {
    int sample_count = 0;
    double validity = 0.0;                  // percent
    std::optional<double> uniqueness;       // percent over valid samples; null when none valid
    std::optional<double> nspdk_mmd;
};

// 100 * (#valence-and-connectivity-valid) / #samples.
double validity(const std::vector<MolecularGraph>& samples, const AtomVocabulary& vocab);

// 100 * (#distinct canonical hashes among valid samples) / (#valid samples);
// nullopt when no sample is valid.
std::optional<double> uniqueness(const std::vector<MolecularGraph>& samples, const AtomVocabulary& vocab);

// Sparse feature map of the neighborhood-subgraph pairwise kernel: counts of
// (radius, root distance, hash(A), hash(B)) over root pairs within distance
// max_distance and neighborhoods of radius up to max_radius.
std::map<std::uint64_t, double> nspdk_features(const MolecularGraph& g, int max_radius, int max_distance);

// Normalized kernel <phi(a), phi(b)> / (|phi(a)| |phi(b)|).
double nspdk_kernel(const std::map<std::uint64_t, double>& a, const std::map<std::uint64_t, double>& b);

// Squared MMD under the normalized kernel (biased V-statistic, so identical
// sets give exactly zero).
double nspdk_mmd(const std::vector<MolecularGraph>& generated, const std::vector<MolecularGraph>& reference,
                 int max_radius = 3, int max_distance = 4);

// Fraction of node pairs closer than eps in L2, over all steps and pairs i<j.
double collision_rate(const EmbeddingTrace& trace, double eps);

EvalReport evaluate(const std::vector<MolecularGraph>& generated, const std::vector<MolecularGraph>& reference,
                    const AtomVocabulary& vocab, int max_radius = 3, int max_distance = 4);

}  // namespace vqsad
