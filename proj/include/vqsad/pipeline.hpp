#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vqsad/diffusion.hpp"
#include "vqsad/smiles.hpp"
#include "vqsad/vqvae.hpp"

namespace vqsad {

// Tokenizer model pinned together with its parameter store.
class TokenizerBundle {
public:
    ParamStore store;
    VqVae model;
    AtomVocabulary vocab;
    VqConfig cfg;

    static std::unique_ptr<TokenizerBundle> create(const VqConfig& cfg, const AtomVocabulary& vocab,
                                                   std::uint64_t seed);
    // Loads a trained checkpoint; the model comes back frozen.
    static std::unique_ptr<TokenizerBundle> load(const std::string& dir);
    void save(const std::string& dir) const;

    TokenizerBundle(const TokenizerBundle&) = delete;
    TokenizerBundle& operator=(const TokenizerBundle&) = delete;

private:
    TokenizerBundle() = default;
};

struct IngestResult {
    std::vector<MolecularGraph> graphs;
    std::vector<std::string> rejects;  // "line <n>: <reason>: <text>"
};

// One SMILES per line; a whitespace-separated trailing name is ignored.
// QM9-style vocabularies (containing H) get explicit hydrogens; property is
// the heavy-atom count unless with_property is false.
IngestResult ingest_smiles(const std::string& path, const AtomVocabulary& vocab, bool with_property = true);

std::vector<NoisyGraph> molecules_to_noisy(const std::vector<MolecularGraph>& mols,
                                           const AtomVocabulary& vocab);
std::vector<NoisyGraph> tokenize_dataset(const VqVae& tokenizer, const std::vector<MolecularGraph>& mols);
std::vector<std::optional<double>> properties_of(const std::vector<MolecularGraph>& mols);

}  // namespace vqsad
