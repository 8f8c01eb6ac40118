#include "vqsad/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace vqsad {

using nlohmann::json;

std::unique_ptr<TokenizerBundle> TokenizerBundle::create(const VqConfig& cfg, const AtomVocabulary& vocab,
                                                         std::uint64_t seed) {
    std::unique_ptr<TokenizerBundle> b(new TokenizerBundle());
    b->cfg = cfg;
    b->vocab = vocab;
    Rng rng(derive_seed(seed, "vq-init"));
    b->model = VqVae(b->store, cfg, vocab, rng);
    return b;
}

void TokenizerBundle::save(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    store.save(dir);
    json meta;
    meta["kind"] = "vqvae";
    meta["code_dim"] = cfg.code_dim;
    meta["k_atom"] = cfg.k_atom;
    meta["k_bond"] = cfg.k_bond;
    meta["cosine_gamma"] = cfg.cosine_gamma;
    meta["commit_beta"] = cfg.commit_beta;
    meta["hidden"] = cfg.hidden;
    meta["rrwp_k"] = cfg.rrwp_k;
    meta["vocab_symbols"] = vocab.symbols;
    meta["vocab_valences"] = vocab.valences;
    std::ofstream out(fs::path(dir) / "meta.json");
    out << meta.dump(2) << "\n";
}

std::unique_ptr<TokenizerBundle> TokenizerBundle::load(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "meta.json");
    if (!in) throw DomainError("missing meta.json in " + dir);
    json meta = json::parse(in);
    if (meta.value("kind", "") != "vqvae") throw DomainError(dir + " is not a tokenizer checkpoint");
    VqConfig cfg;
    cfg.code_dim = meta.at("code_dim").get<int>();
    cfg.k_atom = meta.at("k_atom").get<int>();
    cfg.k_bond = meta.at("k_bond").get<int>();
    cfg.cosine_gamma = meta.at("cosine_gamma").get<double>();
    cfg.commit_beta = meta.at("commit_beta").get<double>();
    cfg.hidden = meta.at("hidden").get<int>();
    cfg.rrwp_k = meta.at("rrwp_k").get<int>();
    AtomVocabulary vocab;
    vocab.symbols = meta.at("vocab_symbols").get<std::vector<std::string>>();
    vocab.valences = meta.at("vocab_valences").get<std::vector<int>>();
    auto b = create(cfg, vocab, 0);
    b->store.load(dir);
    b->model.freeze();
    return b;
}

IngestResult ingest_smiles(const std::string& path, const AtomVocabulary& vocab, bool with_property) {
    std::ifstream in(path);
    if (!in) throw DomainError("cannot read SMILES file: " + path);
    IngestResult out;
    std::string line;
    std::size_t line_no = 0;
    bool explicit_h = vocab.has_hydrogen();
    while (std::getline(in, line)) {
        ++line_no;
        std::string token = line.substr(0, line.find_first_of(" \t"));
        if (token.empty()) continue;
        try {
            MolecularGraph g = parse_smiles(token, vocab);
            int heavy = 0;
            int h_idx = vocab.index_of("H");
            for (int a : g.atom_types)
                if (a != h_idx) ++heavy;
            if (explicit_h) g = add_explicit_hydrogens(g, vocab);
            if (with_property) g.property = static_cast<double>(heavy);
            out.graphs.push_back(std::move(g));
        } catch (const std::exception& e) {
            out.rejects.push_back("line " + std::to_string(line_no) + ": " + e.what() + ": " + token);
        }
    }
    return out;
}

std::vector<NoisyGraph> molecules_to_noisy(const std::vector<MolecularGraph>& mols,
                                           const AtomVocabulary& vocab) {
    std::vector<NoisyGraph> out;
    out.reserve(mols.size());
    for (const auto& m : mols) out.push_back(NoisyGraph::from_molecule(m, vocab.size(), kNumBondClasses));
    return out;
}

std::vector<NoisyGraph> tokenize_dataset(const VqVae& tokenizer, const std::vector<MolecularGraph>& mols) {
    std::vector<NoisyGraph> out;
    out.reserve(mols.size());
    for (const auto& m : mols) {
        TokenizedGraph t = tokenizer.tokenize(m);
        NoisyGraph g;
        g.n = t.n;
        g.node_classes = tokenizer.config().k_atom;
        g.edge_classes = tokenizer.config().k_bond;
        g.atom_types = std::move(t.atom_codes);
        g.bond_types = std::move(t.bond_codes);
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<std::optional<double>> properties_of(const std::vector<MolecularGraph>& mols) {
    std::vector<std::optional<double>> out;
    out.reserve(mols.size());
    for (const auto& m : mols) out.push_back(m.property);
    return out;
}

}  // namespace vqsad
