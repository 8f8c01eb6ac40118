// Batch command-line surface for the graph-diffusion pipeline: dataset
// ingestion, tokenizer and diffusion training, sampling, evaluation and
// schedule inspection. Non-interactive; config file keys can be overridden
// by flags. Exit codes: 0 ok, 2 usage, 3 data, 4 numeric divergence.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vqsad/metrics.hpp"
#include "vqsad/pipeline.hpp"

namespace vqsad::cli {

using nlohmann::json;

class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct OptionSpec {
    std::string key;
    std::string help;
    std::string def;       // empty + !required => optional without default
    bool required = false;
};

class Options {
public:
    Options(const std::vector<OptionSpec>& specs, const std::vector<std::string>& args) : specs_(specs) {
        std::map<std::string, std::string> raw;
        // Flags first to find a config file, then config, then flags win.
        std::map<std::string, std::string> flags;
        for (std::size_t i = 0; i < args.size(); ++i) {
            std::string a = args[i];
            if (a.rfind("--", 0) != 0) throw UsageError("expected --key, got '" + a + "'");
            a = a.substr(2);
            std::string value;
            auto eq = a.find('=');
            if (eq != std::string::npos) {
                value = a.substr(eq + 1);
                a = a.substr(0, eq);
            } else {
                if (i + 1 >= args.size()) throw UsageError("missing value for --" + a);
                value = args[++i];
            }
            flags[a] = value;
        }
        if (flags.count("config")) {
            std::ifstream in(flags["config"]);
            if (!in) throw UsageError("cannot read config file: " + flags["config"]);
            std::string line;
            while (std::getline(in, line)) {
                auto hash = line.find('#');
                if (hash != std::string::npos) line = line.substr(0, hash);
                auto eq = line.find('=');
                if (eq == std::string::npos) continue;
                auto trim = [](std::string s) {
                    auto b = s.find_first_not_of(" \t\r");
                    auto e = s.find_last_not_of(" \t\r");
                    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
                };
                std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
                if (!k.empty()) raw[k] = v;
            }
            flags.erase("config");
        }
        for (const auto& [k, v] : flags) raw[k] = v;
        for (const auto& [k, v] : raw) {
            if (!find(k)) {
                std::string keys;
                for (const auto& s : specs_) keys += (keys.empty() ? "" : ", ") + s.key;
                throw UsageError("unknown key '" + k + "' (valid keys: " + keys + ")");
            }
            values_[k] = v;
        }
        for (const auto& s : specs_) {
            if (values_.count(s.key)) continue;
            if (s.required) throw UsageError("missing required key '" + s.key + "': " + s.help);
            if (!s.def.empty()) values_[s.key] = s.def;
        }
    }

    bool has(const std::string& k) const { return values_.count(k) > 0; }
    std::string str(const std::string& k) const {
        auto it = values_.find(k);
        if (it == values_.end()) throw UsageError("missing value for '" + k + "'");
        return it->second;
    }
    int integer(const std::string& k) const { return static_cast<int>(number(k)); }
    std::uint64_t u64(const std::string& k) const { return static_cast<std::uint64_t>(number(k)); }
    double number(const std::string& k) const {
        try {
            return std::stod(str(k));
        } catch (const std::exception&) {
            throw UsageError("key '" + k + "' expects a number, got '" + str(k) + "'");
        }
    }
    bool flag(const std::string& k) const {
        std::string v = str(k);
        if (v == "1" || v == "true" || v == "yes") return true;
        if (v == "0" || v == "false" || v == "no") return false;
        throw UsageError("key '" + k + "' expects a boolean, got '" + v + "'");
    }

private:
    const OptionSpec* find(const std::string& k) const {
        for (const auto& s : specs_)
            if (s.key == k) return &s;
        return nullptr;
    }
    std::vector<OptionSpec> specs_;
    std::map<std::string, std::string> values_;
};

const OptionSpec kConfigSpec{"config", "key = value config file; flags override", "", false};

// ---- commands --------------------------------------------------------------------

int cmd_ingest(const std::vector<std::string>& args) {
    Options opt({kConfigSpec,
                 {"in", "input .smi file", "", true},
                 {"out", "output JSONL dataset", "", true},
                 {"vocab", "qm9 or zinc", "qm9"},
                 {"rejects", "rejects file (default <out>.rejects)", ""},
                 {"property", "synthetic scalar: heavy_atoms or none", "heavy_atoms"}},
                args);
    AtomVocabulary vocab = AtomVocabulary::by_name(opt.str("vocab"));
    std::string prop_mode = opt.str("property");
    if (prop_mode != "heavy_atoms" && prop_mode != "none")
        throw UsageError("property must be heavy_atoms or none");
    IngestResult res = ingest_smiles(opt.str("in"), vocab, prop_mode == "heavy_atoms");
    write_dataset(res.graphs, vocab, opt.str("out"));
    std::string rejects_path = opt.has("rejects") ? opt.str("rejects") : opt.str("out") + ".rejects";
    std::ofstream rej(rejects_path);
    for (const auto& r : res.rejects) rej << r << "\n";
    std::cout << "ingested " << res.graphs.size() << " molecules, rejected " << res.rejects.size() << "\n";
    return 0;
}

int cmd_train_vqvae(const std::vector<std::string>& args) {
    Options opt({kConfigSpec,
                 {"data", "JSONL dataset", "", true},
                 {"out", "checkpoint directory", "", true},
                 {"vocab", "qm9 or zinc", "qm9"},
                 {"steps", "optimizer steps", "2000"},
                 {"batch", "molecules per step", "16"},
                 {"lr", "learning rate", "1e-3"},
                 {"code-dim", "code vector width D", "16"},
                 {"k-atom", "atom codebook size", "32"},
                 {"k-bond", "bond codebook size", "16"},
                 {"cos-gamma", "cosine term exponent", "2"},
                 {"commit-beta", "commitment weight", "0.25"},
                 {"hidden", "encoder/decoder hidden width", "32"},
                 {"rrwp-k", "random-walk feature count", "8"},
                 {"seed", "rng seed", "0"}},
                args);
    AtomVocabulary vocab = AtomVocabulary::by_name(opt.str("vocab"));
    auto mols = read_dataset(opt.str("data"), vocab);
    VqConfig cfg;
    cfg.code_dim = opt.integer("code-dim");
    cfg.k_atom = opt.integer("k-atom");
    cfg.k_bond = opt.integer("k-bond");
    cfg.cosine_gamma = opt.number("cos-gamma");
    cfg.commit_beta = opt.number("commit-beta");
    cfg.hidden = opt.integer("hidden");
    cfg.rrwp_k = opt.integer("rrwp-k");
    auto bundle = TokenizerBundle::create(cfg, vocab, opt.u64("seed"));
    std::filesystem::create_directories(opt.str("out"));
    Rng rng(derive_seed(opt.u64("seed"), "vq-train"));
    auto result = bundle->model.train(mols, opt.integer("steps"), opt.integer("batch"), opt.number("lr"),
                                      rng, opt.str("out") + "/loss.csv");
    bundle->model.freeze();
    bundle->save(opt.str("out"));
    std::ofstream usage(opt.str("out") + "/code_usage.csv");
    usage << "side,code_index,count\n";
    for (std::size_t k = 0; k < result.atom_code_usage.size(); ++k)
        usage << "atom," << k << "," << result.atom_code_usage[k] << "\n";
    for (std::size_t k = 0; k < result.bond_code_usage.size(); ++k)
        usage << "bond," << k << "," << result.bond_code_usage[k] << "\n";
    std::cout << "trained tokenizer on " << mols.size() << " molecules, final loss "
              << result.loss_trace.back() << "\n";
    return 0;
}

namespace {

std::vector<OptionSpec> diffusion_specs(bool vqsad) {
    std::vector<OptionSpec> s{kConfigSpec,
                              {"data", "JSONL dataset", "", true},
                              {"out", "checkpoint directory", "", true},
                              {"vocab", "qm9 or zinc", "qm9"},
                              {"steps", "optimizer steps", "2000"},
                              {"batch", "graphs per step", "4"},
                              {"lr", "learning rate", "1e-3"},
                              {"lambda", "edge loss weight", "5"},
                              {"T", "diffusion steps", "100"},
                              {"seed", "rng seed", "0"},
                              {"k-poly", "schedule polynomial terms", "6"},
                              {"zeta-min", "schedule lower bound", "-10"},
                              {"zeta-max", "schedule upper bound", "10"},
                              {"tau", "gumbel temperature", "1"},
                              {"relaxed", "straight-through corruption", "1"},
                              {"conditional", "train with property conditioning", "0"},
                              {"cond-dropout", "condition dropout probability", "0.1"},
                              {"paper-sign", "minimize the objective exactly as written", "0"},
                              {"fixed-schedule", "bypass scheduler nets (baseline)", "0"},
                              {"layers", "denoiser depth", "4"},
                              {"hidden", "denoiser width", "64"},
                              {"rrwp-k", "random-walk feature count", "8"},
                              {"checkpoint-every", "periodic checkpoint interval", "500"}};
    if (vqsad) s.push_back({"tokenizer", "tokenizer checkpoint required", "", true});
    return s;
}

TrainConfig diffusion_config(const Options& opt, DiffusionMode mode) {
    TrainConfig cfg;
    cfg.mode = mode;
    cfg.steps_T = opt.integer("T");
    cfg.lambda_edge = opt.number("lambda");
    cfg.train_steps = opt.integer("steps");
    cfg.batch = opt.integer("batch");
    cfg.lr = opt.number("lr");
    cfg.seed = opt.u64("seed");
    cfg.gumbel_tau = opt.number("tau");
    cfg.relaxed = opt.flag("relaxed");
    cfg.conditional = opt.flag("conditional");
    cfg.cond_dropout = opt.number("cond-dropout");
    cfg.paper_sign = opt.flag("paper-sign");
    cfg.fixed_schedule = opt.flag("fixed-schedule");
    cfg.checkpoint_every = opt.integer("checkpoint-every");
    cfg.sched.k_poly = opt.integer("k-poly");
    cfg.sched.zeta_min = opt.number("zeta-min");
    cfg.sched.zeta_max = opt.number("zeta-max");
    cfg.den.layers = opt.integer("layers");
    cfg.den.hidden = opt.integer("hidden");
    cfg.den.rrwp_k = opt.integer("rrwp-k");
    return cfg;
}

}  // namespace

int cmd_train_sad(const std::vector<std::string>& args) {
    Options opt(diffusion_specs(false), args);
    AtomVocabulary vocab = AtomVocabulary::by_name(opt.str("vocab"));
    auto mols = read_dataset(opt.str("data"), vocab);
    auto clean = molecules_to_noisy(mols, vocab);
    TrainConfig cfg = diffusion_config(opt, DiffusionMode::sad);
    DiffusionModel model(cfg, vocab.size(), kNumBondClasses);
    std::filesystem::create_directories(opt.str("out"));
    train_diffusion(model, clean, properties_of(mols), sad_bond_predicate(kNumBondClasses),
                    opt.str("out") + "/loss.csv", opt.str("out"));
    std::cout << "trained sad model on " << mols.size() << " molecules\n";
    return 0;
}

int cmd_train_vqsad(const std::vector<std::string>& args) {
    Options opt(diffusion_specs(true), args);
    if (!opt.has("tokenizer")) throw UsageError("tokenizer checkpoint required");
    AtomVocabulary vocab = AtomVocabulary::by_name(opt.str("vocab"));
    auto mols = read_dataset(opt.str("data"), vocab);
    auto tokenizer = TokenizerBundle::load(opt.str("tokenizer"));
    auto clean = tokenize_dataset(tokenizer->model, mols);
    TrainConfig cfg = diffusion_config(opt, DiffusionMode::vqsad);
    std::vector<std::uint8_t> bondlike;
    for (int code = 0; code < tokenizer->cfg.k_bond; ++code)
        bondlike.push_back(tokenizer->model.code_is_bond(code) ? 1 : 0);
    DiffusionModel model(cfg, tokenizer->cfg.k_atom, tokenizer->cfg.k_bond, bondlike);
    std::filesystem::create_directories(opt.str("out"));
    train_diffusion(model, clean, properties_of(mols),
                    vqsad_bond_predicate(tokenizer->model, tokenizer->cfg.k_bond),
                    opt.str("out") + "/loss.csv", opt.str("out"));
    std::cout << "trained vqsad model on " << mols.size() << " molecules\n";
    return 0;
}

namespace {

// Loads a diffusion checkpoint plus its tokenizer when the model is latent.
struct LoadedModel {
    std::unique_ptr<DiffusionModel> model;
    std::unique_ptr<TokenizerBundle> tokenizer;
    BondPredicate is_bond;
};

LoadedModel load_for_inference(const Options& opt) {
    LoadedModel lm;
    lm.model = DiffusionModel::load(opt.str("ckpt"));
    if (lm.model->cfg.mode == DiffusionMode::vqsad) {
        if (!opt.has("tokenizer")) throw UsageError("tokenizer checkpoint required");
        lm.tokenizer = TokenizerBundle::load(opt.str("tokenizer"));
        lm.is_bond = vqsad_bond_predicate(lm.tokenizer->model, lm.tokenizer->cfg.k_bond);
    } else {
        lm.is_bond = sad_bond_predicate(kNumBondClasses);
    }
    return lm;
}

}  // namespace

int cmd_sample(const std::vector<std::string>& args) {
    Options opt({kConfigSpec,
                 {"ckpt", "diffusion checkpoint directory", "", true},
                 {"tokenizer", "tokenizer checkpoint (latent models)", ""},
                 {"out", "output JSONL", "", true},
                 {"vocab", "qm9 or zinc", "qm9"},
                 {"count", "number of molecules", "64"},
                 {"seed", "rng seed", "0"},
                 {"guidance", "classifier-free guidance scale", "0"},
                 {"target-property", "condition value (raw units)", ""},
                 {"temperature", "category-draw temperature", "1"},
                 {"chain-group", "chains advanced in lockstep", "32"},
                 {"smiles-out", "optional SMILES dump", ""}},
                args);
    AtomVocabulary vocab = AtomVocabulary::by_name(opt.str("vocab"));
    LoadedModel lm = load_for_inference(opt);
    SampleConfig sc;
    sc.count = opt.integer("count");
    sc.seed = opt.u64("seed");
    sc.guidance = opt.number("guidance");
    sc.temperature = opt.number("temperature");
    sc.chain_group = opt.integer("chain-group");
    if (opt.has("target-property")) sc.target_property = opt.number("target-property");
    SampleOutput so = sample(*lm.model, lm.is_bond, sc);
    auto mols = samples_to_molecules(so.graphs, lm.model->cfg.mode,
                                     lm.tokenizer ? &lm.tokenizer->model : nullptr);
    write_dataset(mols, vocab, opt.str("out"));
    if (opt.has("smiles-out")) {
        std::ofstream smi(opt.str("smiles-out"));
        for (const auto& m : mols) {
            if (check_valence(m, vocab))
                smi << write_smiles(m, vocab) << "\n";
            else
                smi << "# invalid\n";
        }
    }
    std::cout << "sampled " << mols.size() << " molecules (" << so.forced_reveals << " forced reveals)\n";
    return 0;
}

int cmd_eval(const std::vector<std::string>& args) {
    Options opt({kConfigSpec,
                 {"generated", "generated JSONL", "", true},
                 {"reference", "reference JSONL", "", true},
                 {"vocab", "qm9 or zinc", "qm9"},
                 {"out", "JSON report path", "", true},
                 {"csv", "optional CSV row (validity,uniqueness,nspdk)", ""},
                 {"radius", "neighborhood radius bound", "3"},
                 {"distance", "root distance bound", "4"}},
                args);
    AtomVocabulary vocab = AtomVocabulary::by_name(opt.str("vocab"));
    auto gen = read_dataset(opt.str("generated"), vocab);
    auto ref = read_dataset(opt.str("reference"), vocab);
    EvalReport r = evaluate(gen, ref, vocab, opt.integer("radius"), opt.integer("distance"));
    json rep;
    rep["sample_count"] = r.sample_count;
    rep["validity"] = r.validity;
    if (r.uniqueness)
        rep["uniqueness"] = *r.uniqueness;
    else
        rep["uniqueness"] = nullptr;
    if (r.nspdk_mmd) rep["nspdk_mmd"] = *r.nspdk_mmd;
    std::ofstream out(opt.str("out"));
    out << rep.dump(2) << "\n";
    if (opt.has("csv")) {
        std::ofstream csv(opt.str("csv"));
        csv << "validity,uniqueness,nspdk\n";
        csv << r.validity << "," << (r.uniqueness ? std::to_string(*r.uniqueness) : "")
            << "," << (r.nspdk_mmd ? std::to_string(*r.nspdk_mmd) : "") << "\n";
    }
    std::cout << rep.dump() << "\n";
    return 0;
}

int cmd_collision(const std::vector<std::string>& args) {
    Options opt({kConfigSpec,
                 {"ckpt", "diffusion checkpoint directory", "", true},
                 {"tokenizer", "tokenizer checkpoint (latent models)", ""},
                 {"count", "sampling chains to trace", "16"},
                 {"seed", "rng seed", "0"},
                 {"eps", "collision threshold (default 1e-3*sqrt(d))", ""},
                 {"out", "JSON report path", "", true}},
                args);
    LoadedModel lm = load_for_inference(opt);
    SampleConfig sc;
    sc.count = opt.integer("count");
    sc.seed = opt.u64("seed");
    sc.trace_chains = sc.count;
    SampleOutput so = sample(*lm.model, lm.is_bond, sc);
    double eps = opt.has("eps") ? opt.number("eps")
                                : 1e-3 * std::sqrt(static_cast<double>(lm.model->cfg.den.hidden));
    double sum = 0.0;
    int used = 0;
    for (const auto& tr : so.traces)
        if (tr.n >= 2) {
            sum += collision_rate(tr, eps);
            ++used;
        }
    json rep;
    rep["eps"] = eps;
    rep["chains"] = used;
    rep["collision_rate"] = used > 0 ? sum / used : 0.0;
    std::ofstream out(opt.str("out"));
    out << rep.dump(2) << "\n";
    std::cout << rep.dump() << "\n";
    return 0;
}

int cmd_schedule_dump(const std::vector<std::string>& args) {
    Options opt({kConfigSpec,
                 {"ckpt", "diffusion checkpoint directory", "", true},
                 {"tokenizer", "tokenizer checkpoint (latent models)", ""},
                 {"data", "JSONL dataset", "", true},
                 {"vocab", "qm9 or zinc", "qm9"},
                 {"index", "molecule index", "0"},
                 {"out", "CSV path", "", true}},
                args);
    AtomVocabulary vocab = AtomVocabulary::by_name(opt.str("vocab"));
    LoadedModel lm = load_for_inference(opt);
    auto mols = read_dataset(opt.str("data"), vocab);
    int index = opt.integer("index");
    if (index < 0 || index >= static_cast<int>(mols.size())) throw DomainError("molecule index out of range");
    NoisyGraph g;
    if (lm.model->cfg.mode == DiffusionMode::vqsad) {
        auto coded = tokenize_dataset(lm.tokenizer->model, {mols[static_cast<std::size_t>(index)]});
        g = coded[0];
    } else {
        g = NoisyGraph::from_molecule(mols[static_cast<std::size_t>(index)], vocab.size(), kNumBondClasses);
    }
    std::ofstream out(opt.str("out"));
    out << "t,element,alpha_bar,beta_bar,gamma_bar\n";
    ad::NoGradGuard ng;
    const TrainConfig& cfg = lm.model->cfg;
    for (int ts = 1; ts <= cfg.steps_T; ++ts) {
        double t = static_cast<double>(ts) / cfg.steps_T;
        std::vector<const NoisyGraph*> ptrs{&g};
        std::vector<double> times{t};
        std::vector<RrwpTensor> encs{diffusion_rrwp(g, cfg.den.rrwp_k, lm.is_bond)};
        GraphBatch b = make_batch(ptrs, times, encs, lm.is_bond);
        ScheduleTensors ns = lm.model->scheduler.node_schedules(b, nullptr);
        ScheduleTensors es = lm.model->scheduler.edge_schedules(b, nullptr);
        for (int i = 0; i < g.n; ++i)
            out << t << ",n" << i << "," << ns.alpha_bar.value().at(i, 0) << ","
                << ns.beta_bar.value().at(i, 0) << "," << ns.gamma_bar.value().at(i, 0) << "\n";
        int p = 0;
        for (int u = 0; u < g.n; ++u)
            for (int v = u + 1; v < g.n; ++v, ++p)
                out << t << ",e" << u << "-" << v << "," << es.alpha_bar.value().at(p, 0) << ","
                    << es.beta_bar.value().at(p, 0) << "," << es.gamma_bar.value().at(p, 0) << "\n";
    }
    std::cout << "wrote schedule curves for molecule " << index << "\n";
    return 0;
}

int dispatch(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: vqsad <command> [--key value ...]\n"
                  << "commands: ingest, train-vqvae, train-sad, train-vqsad, sample, eval, collision, "
                     "schedule-dump\n";
        return 2;
    }
    std::string cmd = argv[1];
    std::vector<std::string> args(argv + 2, argv + argc);
    if (cmd == "ingest") return cmd_ingest(args);
    if (cmd == "train-vqvae") return cmd_train_vqvae(args);
    if (cmd == "train-sad") return cmd_train_sad(args);
    if (cmd == "train-vqsad") return cmd_train_vqsad(args);
    if (cmd == "sample") return cmd_sample(args);
    if (cmd == "eval") return cmd_eval(args);
    if (cmd == "collision") return cmd_collision(args);
    if (cmd == "schedule-dump") return cmd_schedule_dump(args);
    std::cerr << "error: unknown command '" << cmd << "'\n";
    return 2;
}

}  // namespace vqsad::cli

int main(int argc, char** argv) {
    try {
        return vqsad::cli::dispatch(argc, argv);
    } catch (const vqsad::cli::UsageError& e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        return 2;
    } catch (const vqsad::DivergenceError& e) {
        std::cerr << "error: divergence: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
