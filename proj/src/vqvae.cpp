#include "vqsad/vqvae.hpp"

#include <cmath>
#include <fstream>

#include "vqsad/graph_batch.hpp"

namespace vqsad {

using ad::Tensor;

int quantize(std::span<const double> h, const Array& codebook) {
    if (codebook.rows() < 1) throw DomainError("quantize: empty codebook");
    if (static_cast<long>(h.size()) != codebook.cols()) throw DomainError("quantize: dimension mismatch");
    for (double x : h)
        if (!std::isfinite(x)) throw DomainError("quantize: non-finite query");
    int best = 0;
    double best_d = 0.0;
    for (long k = 0; k < codebook.rows(); ++k) {
        double d = 0.0;
        for (long c = 0; c < codebook.cols(); ++c) {
            double diff = h[static_cast<std::size_t>(c)] - codebook.at(k, c);
            d += diff * diff;
        }
        if (k == 0 || d < best_d) {
            best_d = d;
            best = static_cast<int>(k);
        }
    }
    return best;
}

VqVae::VqVae(ParamStore& store, const VqConfig& cfg, const AtomVocabulary& vocab, Rng& rng) {
    if (cfg.cosine_gamma < 1.0) throw DomainError("VqVae: cosine exponent must be >= 1");
    if (cfg.commit_beta <= 0.0) throw DomainError("VqVae: commitment weight must be positive");
    if (cfg.k_atom < 2 || cfg.k_bond < 2) throw DomainError("VqVae: codebooks need at least 2 entries");
    store_ = &store;
    cfg_ = cfg;
    vocab_size_ = vocab.size();
    store.add_linear("vq.node_enc.w1", node_input_dim(), cfg.hidden, rng);
    store.add("vq.node_enc.b1", Array::zeros(1, cfg.hidden));
    store.add_linear("vq.node_enc.w2", cfg.hidden, cfg.code_dim, rng);
    store.add("vq.node_enc.b2", Array::zeros(1, cfg.code_dim));
    store.add_linear("vq.edge_enc.w1", edge_input_dim(), cfg.hidden, rng);
    store.add("vq.edge_enc.b1", Array::zeros(1, cfg.hidden));
    store.add_linear("vq.edge_enc.w2", cfg.hidden, cfg.code_dim, rng);
    store.add("vq.edge_enc.b2", Array::zeros(1, cfg.code_dim));
    store.add_linear("vq.node_dec.w1", cfg.code_dim, cfg.hidden, rng);
    store.add("vq.node_dec.b1", Array::zeros(1, cfg.hidden));
    store.add_linear("vq.node_dec.w2", cfg.hidden, vocab_size_, rng);
    store.add("vq.node_dec.b2", Array::zeros(1, vocab_size_));
    store.add_linear("vq.edge_dec.w1", cfg.code_dim, cfg.hidden, rng);
    store.add("vq.edge_dec.b1", Array::zeros(1, cfg.hidden));
    store.add_linear("vq.edge_dec.w2", cfg.hidden, kNumBondClasses, rng);
    store.add("vq.edge_dec.b2", Array::zeros(1, kNumBondClasses));
    store.add_uniform("vq.atom_codes", cfg.k_atom, cfg.code_dim, -1.0, 1.0, rng);
    store.add_uniform("vq.bond_codes", cfg.k_bond, cfg.code_dim, -1.0, 1.0, rng);
}

void VqVae::bind(ParamStore& store, const VqConfig& cfg, const AtomVocabulary& vocab) {
    store_ = &store;
    cfg_ = cfg;
    vocab_size_ = vocab.size();
}

namespace {

Tensor mlp2(const ParamStore& store, const Tensor& x, const std::string& prefix) {
    Tensor h = relu(add(matmul(x, store.at(prefix + ".w1")), store.at(prefix + ".b1")));
    return add(matmul(h, store.at(prefix + ".w2")), store.at(prefix + ".b2"));
}

}  // namespace

Tensor VqVae::encode_nodes(const Array& inputs) const {
    if (inputs.cols() != node_input_dim()) throw DomainError("encode_nodes: input dim mismatch");
    return mlp2(*store_, Tensor::constant(inputs), "vq.node_enc");
}

Tensor VqVae::encode_edges(const Array& inputs) const {
    if (inputs.cols() != edge_input_dim()) throw DomainError("encode_edges: input dim mismatch");
    return mlp2(*store_, Tensor::constant(inputs), "vq.edge_enc");
}

Tensor VqVae::decode_nodes(const Tensor& codes) const {
    return softmax_rows(mlp2(*store_, codes, "vq.node_dec"));
}

Tensor VqVae::decode_edges(const Tensor& codes) const {
    return softmax_rows(mlp2(*store_, codes, "vq.edge_dec"));
}

Array VqVae::node_inputs(const MolecularGraph& g, const RrwpTensor& enc) const {
    Array onehot = onehot_rows(g.atom_types, vocab_size_);
    return concat_structural_nodes(onehot, enc);
}

Array VqVae::edge_inputs(const MolecularGraph& g, const RrwpTensor& enc, const std::vector<int>& us,
                         const std::vector<int>& vs) const {
    long p = static_cast<long>(us.size());
    Array feats(p, 2 * vocab_size_ + kNumBondClasses);
    for (long r = 0; r < p; ++r) {
        int u = us[static_cast<std::size_t>(r)], v = vs[static_cast<std::size_t>(r)];
        feats.at(r, g.atom_types[static_cast<std::size_t>(u)]) = 1.0;
        feats.at(r, vocab_size_ + g.atom_types[static_cast<std::size_t>(v)]) = 1.0;
        feats.at(r, 2 * vocab_size_ + g.bond(u, v)) = 1.0;
    }
    return concat_structural_pairs(feats, us, vs, enc);
}

namespace {

void enumerate_pairs(int n, std::vector<int>& us, std::vector<int>& vs) {
    for (int u = 0; u < n; ++u)
        for (int v = u + 1; v < n; ++v) {
            us.push_back(u);
            vs.push_back(v);
        }
}

struct SideLoss {
    Tensor loss;
    std::vector<int> codes;
};

// One VQ side (atoms or bonds): encode, quantize, straight-through decode,
// then the three appendix terms averaged over elements.
SideLoss side_loss(const ParamStore& store, const Tensor& h, const Array& targets_onehot,
                   const std::string& codebook_name, const std::string& dec_prefix, double cos_gamma,
                   double commit_beta) {
    const Array& hv = h.value();
    Tensor codebook = store.at(codebook_name);
    std::vector<int> idx(static_cast<std::size_t>(hv.rows()));
    for (long r = 0; r < hv.rows(); ++r)
        idx[static_cast<std::size_t>(r)] =
            quantize(std::span<const double>(hv.data() + r * hv.cols(), static_cast<std::size_t>(hv.cols())),
                     codebook.value());
    Tensor selected = gather_rows(codebook, idx);
    // Straight-through: decoder input carries encoder gradients unchanged.
    Tensor quantized = add(h, stop_gradient(sub(selected, h)));
    Tensor recon = softmax_rows(mlp2(store, quantized, dec_prefix));
    Tensor cos = cosine_rows(Tensor::constant(targets_onehot), recon);
    Tensor cos_term = mean_all(pow_const(add_scalar(neg(cos), 1.0), cos_gamma));
    Tensor code_term = mean_all(sum_rows(pow_const(sub(stop_gradient(h), selected), 2.0)));
    Tensor commit_term = mean_all(sum_rows(pow_const(sub(h, stop_gradient(selected)), 2.0)));
    SideLoss out;
    out.loss = add(cos_term, add(code_term, scale(commit_term, commit_beta)));
    out.codes = std::move(idx);
    return out;
}

}  // namespace

Tensor VqVae::vq_loss(const std::vector<MolecularGraph>& batch) const {
    if (frozen_) throw ContractError("vq_loss: model is frozen");
    if (batch.empty()) throw DomainError("vq_loss: empty batch");
    // Stack every molecule's elements into one set of rows per side.
    std::vector<Array> node_in, edge_in, node_t, edge_t;
    long total_nodes = 0, total_pairs = 0;
    for (const auto& g : batch) {
        RrwpTensor enc = rrwp(g, cfg_.rrwp_k);
        std::vector<int> us, vs;
        enumerate_pairs(g.n, us, vs);
        node_in.push_back(node_inputs(g, enc));
        edge_in.push_back(edge_inputs(g, enc, us, vs));
        node_t.push_back(onehot_rows(g.atom_types, vocab_size_));
        std::vector<int> bond_cats;
        for (std::size_t p = 0; p < us.size(); ++p) bond_cats.push_back(g.bond(us[p], vs[p]));
        edge_t.push_back(onehot_rows(bond_cats, kNumBondClasses));
        total_nodes += g.n;
        total_pairs += static_cast<long>(us.size());
    }
    auto stack = [](const std::vector<Array>& parts, long rows) {
        Array out(rows, parts[0].cols());
        long off = 0;
        for (const auto& a : parts) {
            for (long r = 0; r < a.rows(); ++r)
                for (long c = 0; c < a.cols(); ++c) out.at(off + r, c) = a.at(r, c);
            off += a.rows();
        }
        return out;
    };
    Tensor hn = encode_nodes(stack(node_in, total_nodes));
    SideLoss ln = side_loss(*store_, hn, stack(node_t, total_nodes), "vq.atom_codes", "vq.node_dec",
                            cfg_.cosine_gamma, cfg_.commit_beta);
    if (total_pairs == 0) return ln.loss;  // single-atom batch has no bond side
    Tensor he = encode_edges(stack(edge_in, total_pairs));
    SideLoss le = side_loss(*store_, he, stack(edge_t, total_pairs), "vq.bond_codes", "vq.edge_dec",
                            cfg_.cosine_gamma, cfg_.commit_beta);
    return add(ln.loss, le.loss);
}

void VqVae::seed_codebooks(const std::vector<MolecularGraph>& dataset, Rng& rng) {
    ad::NoGradGuard ng;
    std::vector<std::vector<double>> node_samples, edge_samples;
    for (int draw = 0; draw < 8 * std::max(cfg_.k_atom, cfg_.k_bond); ++draw) {
        const MolecularGraph& g = dataset[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(dataset.size())))];
        RrwpTensor enc = rrwp(g, cfg_.rrwp_k);
        ad::Tensor hn = encode_nodes(node_inputs(g, enc));
        long r = rng.uniform_int(static_cast<int>(hn.value().rows()));
        node_samples.emplace_back(hn.value().data() + r * cfg_.code_dim,
                                  hn.value().data() + (r + 1) * cfg_.code_dim);
        if (g.n >= 2) {
            std::vector<int> us, vs;
            enumerate_pairs(g.n, us, vs);
            ad::Tensor he = encode_edges(edge_inputs(g, enc, us, vs));
            long re = rng.uniform_int(static_cast<int>(he.value().rows()));
            edge_samples.emplace_back(he.value().data() + re * cfg_.code_dim,
                                      he.value().data() + (re + 1) * cfg_.code_dim);
        }
    }
    Array& atoms = store_->at("vq.atom_codes").node()->value;
    for (long k = 0; k < atoms.rows(); ++k) {
        const auto& s = node_samples[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(node_samples.size())))];
        for (long c = 0; c < atoms.cols(); ++c) atoms.at(k, c) = s[static_cast<std::size_t>(c)] + 0.01 * rng.normal();
    }
    if (!edge_samples.empty()) {
        Array& bonds = store_->at("vq.bond_codes").node()->value;
        for (long k = 0; k < bonds.rows(); ++k) {
            const auto& s = edge_samples[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(edge_samples.size())))];
            for (long c = 0; c < bonds.cols(); ++c) bonds.at(k, c) = s[static_cast<std::size_t>(c)] + 0.01 * rng.normal();
        }
    }
}

VqVae::TrainResult VqVae::train(const std::vector<MolecularGraph>& dataset, int steps, int batch_size,
                                double lr, Rng& rng, const std::string& loss_csv) {
    if (frozen_) throw ContractError("train: model is frozen");
    if (dataset.empty()) throw DomainError("train: empty dataset");
    seed_codebooks(dataset, rng);
    TrainResult result;
    std::ofstream csv;
    if (!loss_csv.empty()) {
        csv.open(loss_csv);
        csv << "step,loss\n";
    }
    AdamConfig adam;
    adam.lr = lr;
    for (int step = 1; step <= steps; ++step) {
        std::vector<MolecularGraph> batch;
        for (int b = 0; b < batch_size; ++b)
            batch.push_back(dataset[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(dataset.size())))]);
        Tensor loss = vq_loss(batch);
        double value = loss.value().scalar_value();
        if (!std::isfinite(value)) throw DivergenceError("vq training diverged at step " + std::to_string(step));
        ad::backward(loss);
        store_->adam_step(adam);
        result.loss_trace.push_back(value);
        if (csv.is_open()) csv << step << "," << value << "\n";
    }
    // Code usage over the full dataset with the final parameters.
    result.atom_code_usage.assign(static_cast<std::size_t>(cfg_.k_atom), 0);
    result.bond_code_usage.assign(static_cast<std::size_t>(cfg_.k_bond), 0);
    ad::NoGradGuard ng;
    for (const auto& g : dataset) {
        RrwpTensor enc = rrwp(g, cfg_.rrwp_k);
        std::vector<int> us, vs;
        enumerate_pairs(g.n, us, vs);
        Tensor hn = encode_nodes(node_inputs(g, enc));
        for (long r = 0; r < hn.value().rows(); ++r)
            ++result.atom_code_usage[static_cast<std::size_t>(quantize(
                std::span<const double>(hn.value().data() + r * cfg_.code_dim, static_cast<std::size_t>(cfg_.code_dim)),
                atom_codes()))];
        if (!us.empty()) {
            Tensor he = encode_edges(edge_inputs(g, enc, us, vs));
            for (long r = 0; r < he.value().rows(); ++r)
                ++result.bond_code_usage[static_cast<std::size_t>(quantize(
                    std::span<const double>(he.value().data() + r * cfg_.code_dim,
                                            static_cast<std::size_t>(cfg_.code_dim)),
                    bond_codes()))];
        }
    }
    return result;
}

void VqVae::freeze() {
    store_->set_trainable_prefix("vq.", false);
    frozen_ = true;
    refresh_decode_tables();
}

void VqVae::require_frozen(const char* op) const {
    if (!frozen_)
        throw ContractError(std::string(op) + ": tokenizer must be frozen before diffusion-side use");
}

void VqVae::refresh_decode_tables() {
    ad::NoGradGuard ng;
    atom_decode_table_.assign(static_cast<std::size_t>(cfg_.k_atom), 0);
    bond_decode_table_.assign(static_cast<std::size_t>(cfg_.k_bond), 0);
    Tensor an = decode_nodes(Tensor::constant(atom_codes()));
    for (long k = 0; k < an.value().rows(); ++k) {
        int best = 0;
        for (long c = 1; c < an.value().cols(); ++c)
            if (an.value().at(k, c) > an.value().at(k, best)) best = static_cast<int>(c);
        atom_decode_table_[static_cast<std::size_t>(k)] = best;
    }
    Tensor be = decode_edges(Tensor::constant(bond_codes()));
    for (long k = 0; k < be.value().rows(); ++k) {
        int best = 0;
        for (long c = 1; c < be.value().cols(); ++c)
            if (be.value().at(k, c) > be.value().at(k, best)) best = static_cast<int>(c);
        bond_decode_table_[static_cast<std::size_t>(k)] = best;
    }
}

int VqVae::atom_code_category(int code) const {
    require_frozen("atom_code_category");
    return atom_decode_table_[static_cast<std::size_t>(code)];
}

int VqVae::bond_code_category(int code) const {
    require_frozen("bond_code_category");
    return bond_decode_table_[static_cast<std::size_t>(code)];
}

TokenizedGraph VqVae::tokenize(const MolecularGraph& g) const {
    require_frozen("tokenize");
    ad::NoGradGuard ng;
    TokenizedGraph t;
    t.n = g.n;
    t.atom_codes.resize(static_cast<std::size_t>(g.n));
    t.bond_codes.assign(static_cast<std::size_t>(g.n) * g.n, 0);
    RrwpTensor enc = rrwp(g, cfg_.rrwp_k);
    Tensor hn = encode_nodes(node_inputs(g, enc));
    for (long r = 0; r < hn.value().rows(); ++r)
        t.atom_codes[static_cast<std::size_t>(r)] = quantize(
            std::span<const double>(hn.value().data() + r * cfg_.code_dim, static_cast<std::size_t>(cfg_.code_dim)),
            atom_codes());
    std::vector<int> us, vs;
    enumerate_pairs(g.n, us, vs);
    if (!us.empty()) {
        Tensor he = encode_edges(edge_inputs(g, enc, us, vs));
        for (std::size_t p = 0; p < us.size(); ++p) {
            int code = quantize(std::span<const double>(he.value().data() + static_cast<long>(p) * cfg_.code_dim,
                                                        static_cast<std::size_t>(cfg_.code_dim)),
                                bond_codes());
            t.bond_codes[static_cast<std::size_t>(us[p]) * g.n + vs[p]] = code;
            t.bond_codes[static_cast<std::size_t>(vs[p]) * g.n + us[p]] = code;
        }
    }
    return t;
}

MolecularGraph VqVae::detokenize(const TokenizedGraph& t) const {
    require_frozen("detokenize");
    MolecularGraph g(t.n);
    for (int i = 0; i < t.n; ++i) g.atom_types[static_cast<std::size_t>(i)] = atom_code_category(t.atom_codes[static_cast<std::size_t>(i)]);
    for (int i = 0; i < t.n; ++i)
        for (int j = i + 1; j < t.n; ++j) g.set_bond(i, j, bond_code_category(t.code(i, j)));
    return g;
}

}  // namespace vqsad
