#pragma once

#include <span>
#include <string>
#include <vector>

#include "vqsad/autodiff.hpp"
#include "vqsad/graph.hpp"
#include "vqsad/param_store.hpp"
#include "vqsad/rng.hpp"
#include "vqsad/rrwp.hpp"

namespace vqsad {

struct VqConfig {
    int code_dim = 16;   // D
    int k_atom = 32;     // atom codebook entries
    int k_bond = 16;     // bond codebook entries
    double cosine_gamma = 2.0;  // scaling exponent, >= 1
    double commit_beta = 0.25;  // commitment weight, > 0
    int hidden = 32;
    int rrwp_k = 8;
};

// Atom and bond code assignments for one molecule; Z_E covers every unordered
// pair, including non-bonded ones, and is stored symmetrically.
struct TokenizedGraph {
    int n = 0;
    std::vector<int> atom_codes;  // [n]
    std::vector<int> bond_codes;  // [n*n], symmetric, diagonal 0
    int code(int i, int j) const { return bond_codes[static_cast<std::size_t>(i) * n + j]; }
};

// Nearest code by squared Euclidean distance; ties break to the lowest index.
int quantize(std::span<const double> h, const Array& codebook);

class VqVae {
public:
    VqVae() = default;
    // Defines parameters in the store under the "vq." prefix.
    VqVae(ParamStore& store, const VqConfig& cfg, const AtomVocabulary& vocab, Rng& rng);
    void bind(ParamStore& store, const VqConfig& cfg, const AtomVocabulary& vocab);

    const VqConfig& config() const { return cfg_; }
    int node_input_dim() const { return vocab_size_ + cfg_.rrwp_k; }
    int edge_input_dim() const { return 2 * vocab_size_ + kNumBondClasses + cfg_.rrwp_k; }

    // Deterministic 2-layer encoders; rows are elements.
    ad::Tensor encode_nodes(const Array& inputs) const;
    ad::Tensor encode_edges(const Array& inputs) const;
    // Softmax distributions over original categories.
    ad::Tensor decode_nodes(const ad::Tensor& codes) const;
    ad::Tensor decode_edges(const ad::Tensor& codes) const;

    // Encoder input rows for a molecule (one-hot plus RRWP context).
    Array node_inputs(const MolecularGraph& g, const RrwpTensor& enc) const;
    Array edge_inputs(const MolecularGraph& g, const RrwpTensor& enc, const std::vector<int>& us,
                      const std::vector<int>& vs) const;

    // Appendix-form loss for one batch of molecules: scaled-cosine
    // reconstruction, codebook and commitment terms, node and edge parts
    // averaged separately then summed. Requires an unfrozen model.
    ad::Tensor vq_loss(const std::vector<MolecularGraph>& batch) const;

    struct TrainResult {
        std::vector<double> loss_trace;
        std::vector<long> atom_code_usage;
        std::vector<long> bond_code_usage;
    };
    TrainResult train(const std::vector<MolecularGraph>& dataset, int steps, int batch_size, double lr,
                      Rng& rng, const std::string& loss_csv = "");

    void freeze();
    bool frozen() const { return frozen_; }

    // Frozen-model operations.
    TokenizedGraph tokenize(const MolecularGraph& g) const;
    MolecularGraph detokenize(const TokenizedGraph& t) const;
    int atom_code_category(int code) const;   // decoded argmax
    int bond_code_category(int code) const;
    bool code_is_bond(int bond_code) const { return bond_code_category(bond_code) != kBondNone; }

    const Array& atom_codes() const { return store_->at("vq.atom_codes").value(); }
    const Array& bond_codes() const { return store_->at("vq.bond_codes").value(); }

private:
    void require_frozen(const char* op) const;
    void refresh_decode_tables();
    // Codebooks start at encoder outputs of dataset elements; uniform-random
    // codes far from the encodings leave most entries dead.
    void seed_codebooks(const std::vector<MolecularGraph>& dataset, Rng& rng);

    ParamStore* store_ = nullptr;
    VqConfig cfg_;
    int vocab_size_ = 0;
    bool frozen_ = false;
    std::vector<int> atom_decode_table_;
    std::vector<int> bond_decode_table_;
};

}  // namespace vqsad
