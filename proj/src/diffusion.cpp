#include "vqsad/diffusion.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace vqsad {

using ad::Tensor;
using nlohmann::json;

void TrainConfig::validate() const {
    if (steps_T < 1) throw DomainError("TrainConfig: T must be >= 1");
    if (lambda_edge <= 0.0) throw DomainError("TrainConfig: lambda must be positive");
    if (cond_dropout < 0.0 || cond_dropout > 1.0) throw DomainError("TrainConfig: dropout outside [0,1]");
    if (batch < 1 || train_steps < 0) throw DomainError("TrainConfig: bad batch/steps");
    if (gumbel_tau <= 0.0) throw DomainError("TrainConfig: gumbel temperature must be positive");
}

DiffusionModel::DiffusionModel(const TrainConfig& config, int n_classes, int e_classes,
                               const std::vector<std::uint8_t>& edge_bondlike)
    : cfg(config), node_classes(n_classes), edge_classes(e_classes) {
    cfg.validate();
    cfg.sched.learn_gamma = cfg.mode == DiffusionMode::vqsad;
    Rng rng(derive_seed(cfg.seed, "model-init"));
    scheduler = SchedulerNet(store, cfg.sched, node_classes, edge_classes, cfg.den.rrwp_k, rng, edge_bondlike);
    denoiser = Denoiser(store, cfg.den, node_classes, edge_classes, rng);
}

void DiffusionModel::save(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    store.save(dir);
    json meta;
    meta["kind"] = cfg.mode == DiffusionMode::sad ? "sad" : "vqsad";
    meta["node_classes"] = node_classes;
    meta["edge_classes"] = edge_classes;
    meta["steps_T"] = cfg.steps_T;
    meta["lambda_edge"] = cfg.lambda_edge;
    meta["seed"] = cfg.seed;
    meta["relaxed"] = cfg.relaxed;
    meta["paper_sign"] = cfg.paper_sign;
    meta["conditional"] = cfg.conditional;
    meta["fixed_schedule"] = cfg.fixed_schedule;
    meta["gumbel_tau"] = cfg.gumbel_tau;
    meta["cond_dropout"] = cfg.cond_dropout;
    meta["weight_clamp"] = cfg.weight_clamp;
    meta["sched"] = {{"k_poly", cfg.sched.k_poly},   {"zeta_min", cfg.sched.zeta_min},
                     {"zeta_max", cfg.sched.zeta_max}, {"embed_dim", cfg.sched.embed_dim},
                     {"hidden", cfg.sched.hidden},     {"cond_dim", cfg.sched.cond_dim}};
    meta["den"] = {{"layers", cfg.den.layers},
                   {"hidden", cfg.den.hidden},
                   {"time_dim", cfg.den.time_dim},
                   {"cond_dim", cfg.den.cond_dim},
                   {"rrwp_k", cfg.den.rrwp_k}};
    meta["size_histogram"] = size_histogram;
    meta["prop_mean"] = prop_mean;
    meta["prop_std"] = prop_std;
    std::ofstream out(fs::path(dir) / "meta.json");
    out << meta.dump(2) << "\n";
}

std::unique_ptr<DiffusionModel> DiffusionModel::load(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "meta.json");
    if (!in) throw DomainError("missing meta.json in " + dir);
    json meta = json::parse(in);
    TrainConfig cfg;
    cfg.mode = meta.at("kind").get<std::string>() == "vqsad" ? DiffusionMode::vqsad : DiffusionMode::sad;
    cfg.steps_T = meta.at("steps_T").get<int>();
    cfg.lambda_edge = meta.at("lambda_edge").get<double>();
    cfg.seed = meta.at("seed").get<std::uint64_t>();
    cfg.relaxed = meta.at("relaxed").get<bool>();
    cfg.paper_sign = meta.at("paper_sign").get<bool>();
    cfg.conditional = meta.at("conditional").get<bool>();
    cfg.fixed_schedule = meta.at("fixed_schedule").get<bool>();
    cfg.gumbel_tau = meta.at("gumbel_tau").get<double>();
    cfg.cond_dropout = meta.at("cond_dropout").get<double>();
    cfg.weight_clamp = meta.at("weight_clamp").get<double>();
    cfg.sched.k_poly = meta.at("sched").at("k_poly").get<int>();
    cfg.sched.zeta_min = meta.at("sched").at("zeta_min").get<double>();
    cfg.sched.zeta_max = meta.at("sched").at("zeta_max").get<double>();
    cfg.sched.embed_dim = meta.at("sched").at("embed_dim").get<int>();
    cfg.sched.hidden = meta.at("sched").at("hidden").get<int>();
    cfg.sched.cond_dim = meta.at("sched").at("cond_dim").get<int>();
    cfg.den.layers = meta.at("den").at("layers").get<int>();
    cfg.den.hidden = meta.at("den").at("hidden").get<int>();
    cfg.den.time_dim = meta.at("den").at("time_dim").get<int>();
    cfg.den.cond_dim = meta.at("den").at("cond_dim").get<int>();
    cfg.den.rrwp_k = meta.at("den").at("rrwp_k").get<int>();
    auto model = std::make_unique<DiffusionModel>(cfg, meta.at("node_classes").get<int>(),
                                                  meta.at("edge_classes").get<int>());
    model->size_histogram = meta.at("size_histogram").get<std::vector<int>>();
    model->prop_mean = meta.at("prop_mean").get<double>();
    model->prop_std = meta.at("prop_std").get<double>();
    model->store.load(dir);
    return model;
}

BondPredicate sad_bond_predicate(int edge_classes) {
    return [edge_classes](int c) { return c != kBondNone && c != edge_classes; };
}

BondPredicate vqsad_bond_predicate(const VqVae& tokenizer, int edge_classes) {
    const VqVae* tok = &tokenizer;
    return [tok, edge_classes](int c) { return c != edge_classes && tok->code_is_bond(c); };
}

RrwpTensor diffusion_rrwp(const NoisyGraph& g, int K, const BondPredicate& is_bond) {
    std::vector<std::uint8_t> adj(static_cast<std::size_t>(g.n) * g.n, 0);
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j)
            if (i != j && is_bond(g.bond(i, j))) adj[static_cast<std::size_t>(i) * g.n + j] = 1;
    return rrwp_from_adjacency(g.n, adj, K);
}

// ---- corruption -------------------------------------------------------------------

namespace {

int draw_replacement(int original, int classes, Rng& rng) {
    int r = rng.uniform_int(classes - 1);
    return r >= original ? r + 1 : r;
}

void check_triple(double a, double b, double g) {
    if (std::fabs(a + b + g - 1.0) > 1e-9)
        throw DomainError("corruption probabilities do not sum to 1: " + std::to_string(a + b + g));
    if (a < -1e-12 || b < -1e-12 || g < -1e-12) throw DomainError("negative corruption probability");
}

}  // namespace

NoisyGraph corrupt_hard(const NoisyGraph& clean, const CorruptionProbs& nodes, const CorruptionProbs& pairs,
                        Rng& rng) {
    NoisyGraph out = clean;
    for (int i = 0; i < clean.n; ++i) {
        double a = nodes.alpha_bar[static_cast<std::size_t>(i)];
        double b = nodes.beta_bar[static_cast<std::size_t>(i)];
        double g = nodes.gamma_bar[static_cast<std::size_t>(i)];
        check_triple(a, b, g);
        double u = rng.uniform();
        if (u < a) continue;
        if (u < a + b)
            out.atom_types[static_cast<std::size_t>(i)] = clean.node_mask();
        else
            out.atom_types[static_cast<std::size_t>(i)] =
                draw_replacement(clean.atom_types[static_cast<std::size_t>(i)], clean.node_classes, rng);
    }
    std::size_t p = 0;
    for (int u = 0; u < clean.n; ++u)
        for (int v = u + 1; v < clean.n; ++v, ++p) {
            double a = pairs.alpha_bar[p];
            double b = pairs.beta_bar[p];
            double g = pairs.gamma_bar[p];
            check_triple(a, b, g);
            double x = rng.uniform();
            if (x < a) continue;
            if (x < a + b)
                out.set_bond(u, v, clean.edge_mask());
            else
                out.set_bond(u, v, draw_replacement(clean.bond(u, v), clean.edge_classes, rng));
        }
    return out;
}

namespace {

struct RelaxedSide {
    std::vector<int> hard;
    Tensor onehots;
};

RelaxedSide relax_side(const std::vector<int>& clean_cats, int classes, const ScheduleTensors& sched,
                       double tau, Rng& rng, bool with_replace) {
    long m = static_cast<long>(clean_cats.size());
    RelaxedSide out;
    out.hard.resize(clean_cats.size());
    if (m == 0) {
        out.onehots = Tensor::constant(Array(0, classes + 1));
        return out;
    }
    // Replacement categories are drawn up front so the stream order is fixed.
    std::vector<int> replacement(clean_cats.size(), 0);
    if (with_replace)
        for (std::size_t i = 0; i < clean_cats.size(); ++i)
            replacement[i] = draw_replacement(clean_cats[i], classes, rng);
    std::vector<Tensor> cols{sched.alpha_bar, sched.beta_bar};
    if (with_replace) cols.push_back(sched.gamma_bar);
    Tensor logits = ad::log(add_scalar(concat_cols(cols), 1e-12));
    Tensor decisions = gumbel_softmax(logits, tau, rng, /*hard=*/true);
    Array keep = onehot_rows(clean_cats, classes + 1);
    Array mask_rows(m, classes + 1);
    for (long r = 0; r < m; ++r) mask_rows.at(r, classes) = 1.0;
    Tensor mixed = add(mul(Tensor::constant(std::move(keep)), slice_cols(decisions, 0, 1)),
                       mul(Tensor::constant(std::move(mask_rows)), slice_cols(decisions, 1, 2)));
    if (with_replace)
        mixed = add(mixed, mul(Tensor::constant(onehot_rows(replacement, classes + 1)),
                               slice_cols(decisions, 2, 3)));
    const Array& dec = decisions.value();
    for (long r = 0; r < m; ++r) {
        if (dec.at(r, 0) > 0.5)
            out.hard[static_cast<std::size_t>(r)] = clean_cats[static_cast<std::size_t>(r)];
        else if (dec.at(r, 1) > 0.5)
            out.hard[static_cast<std::size_t>(r)] = classes;
        else
            out.hard[static_cast<std::size_t>(r)] = replacement[static_cast<std::size_t>(r)];
    }
    out.onehots = mixed;
    return out;
}

}  // namespace

RelaxedCorruption corrupt_relaxed(const GraphBatch& clean_batch, int node_classes, int edge_classes,
                                  const ScheduleTensors& nodes, const ScheduleTensors& pairs, double tau,
                                  Rng& rng, bool with_replace) {
    RelaxedSide n_side = relax_side(clean_batch.node_cat, node_classes, nodes, tau, rng, with_replace);
    RelaxedSide e_side = relax_side(clean_batch.pair_cat, edge_classes, pairs, tau, rng, with_replace);
    RelaxedCorruption out;
    out.node_onehots = n_side.onehots;
    out.pair_onehots = e_side.onehots;
    for (int gi = 0; gi < clean_batch.num_graphs; ++gi) {
        int n0 = clean_batch.node_offset[static_cast<std::size_t>(gi)];
        int n = clean_batch.node_offset[static_cast<std::size_t>(gi) + 1] - n0;
        NoisyGraph g(n, node_classes, edge_classes, 0, 0);
        for (int i = 0; i < n; ++i) g.atom_types[static_cast<std::size_t>(i)] = n_side.hard[static_cast<std::size_t>(n0 + i)];
        int p = clean_batch.pair_offset[static_cast<std::size_t>(gi)];
        for (int u = 0; u < n; ++u)
            for (int v = u + 1; v < n; ++v, ++p) g.set_bond(u, v, e_side.hard[static_cast<std::size_t>(p)]);
        out.noisy.push_back(std::move(g));
    }
    return out;
}

// ---- loss ---------------------------------------------------------------------------

Tensor nelbo_loss(const NelboInputs& in) {
    if (in.num_graphs < 1) throw DomainError("nelbo_loss: num_graphs must be >= 1");
    Tensor total = Tensor::scalar(0.0);
    if (!in.node_targets.empty()) {
        Tensor w = clamp_abs(div(in.node_alpha_dot, add_scalar(neg(in.node_alpha_bar), 1.0)),
                             in.weight_clamp);
        Tensor lp = pick_cols(in.node_logprobs, in.node_targets);
        total = add(total, sum_all(mul(w, lp)));
    }
    if (!in.edge_targets.empty()) {
        Tensor w = clamp_abs(div(in.edge_alpha_dot, add_scalar(neg(in.edge_alpha_bar), 1.0)),
                             in.weight_clamp);
        Tensor lp = pick_cols(in.edge_logprobs, in.edge_targets);
        total = add(total, scale(sum_all(mul(w, lp)), in.lambda_edge));
    }
    return scale(neg(total), 1.0 / in.num_graphs);
}

// ---- training ------------------------------------------------------------------------

namespace {

Tensor uniform_weights(long rows, int k_poly) {
    return Tensor::constant(Array::full(rows, k_poly, 1.0 / k_poly));
}

CorruptionProbs slice_probs(const ScheduleTensors& s, int begin, int end) {
    CorruptionProbs p;
    for (int r = begin; r < end; ++r) {
        p.alpha_bar.push_back(s.alpha_bar.value().at(r, 0));
        p.beta_bar.push_back(s.beta_bar.value().at(r, 0));
        p.gamma_bar.push_back(s.gamma_bar.value().at(r, 0));
    }
    return p;
}

}  // namespace

TrainRecord train_diffusion(DiffusionModel& model, const std::vector<NoisyGraph>& clean,
                            const std::vector<std::optional<double>>& properties,
                            const BondPredicate& is_bond, const std::string& loss_csv,
                            const std::string& checkpoint_dir) {
    const TrainConfig& cfg = model.cfg;
    if (clean.empty()) throw DomainError("train_diffusion: empty dataset");
    if (!properties.empty() && properties.size() != clean.size())
        throw DomainError("train_diffusion: property count mismatch");

    model.size_histogram.clear();
    for (const auto& g : clean) model.size_histogram.push_back(g.n);
    if (cfg.conditional) {
        double sum = 0.0, sum2 = 0.0;
        int cnt = 0;
        for (const auto& p : properties)
            if (p) {
                sum += *p;
                sum2 += *p * *p;
                ++cnt;
            }
        if (cnt > 0) {
            model.prop_mean = sum / cnt;
            double var = sum2 / cnt - model.prop_mean * model.prop_mean;
            model.prop_std = var > 1e-12 ? std::sqrt(var) : 1.0;
        }
    }

    // Output-head biases start at the log training marginals, so conditionals
    // in heavily masked states begin near the data distribution instead of
    // uniform.
    {
        std::vector<double> nfreq(static_cast<std::size_t>(model.node_classes) + 1, 1e-3);
        std::vector<double> efreq(static_cast<std::size_t>(model.edge_classes) + 1, 1e-3);
        for (const auto& g : clean) {
            for (int i = 0; i < g.n; ++i) nfreq[static_cast<std::size_t>(g.atom_types[static_cast<std::size_t>(i)])] += 1.0;
            for (int u = 0; u < g.n; ++u)
                for (int v = u + 1; v < g.n; ++v) efreq[static_cast<std::size_t>(g.bond(u, v))] += 1.0;
        }
        double ns = 0.0, es = 0.0;
        for (double x : nfreq) ns += x;
        for (double x : efreq) es += x;
        Array& nb = model.store.at("den.node_head.b2").node()->value;
        for (long c = 0; c < nb.size(); ++c) nb[c] = std::log(nfreq[static_cast<std::size_t>(c)] / ns);
        Array& eb = model.store.at("den.edge_head.b2").node()->value;
        for (long c = 0; c < eb.size(); ++c) eb[c] = std::log(efreq[static_cast<std::size_t>(c)] / es);
    }

    TrainRecord rec;
    std::ofstream csv;
    if (!loss_csv.empty()) {
        csv.open(loss_csv);
        csv << "step,loss,masked_fraction_mean\n";
    }
    Rng rng(derive_seed(cfg.seed, "train"));
    AdamConfig adam;
    adam.lr = cfg.lr;
    const int T = cfg.steps_T;
    const bool with_replace = cfg.mode == DiffusionMode::vqsad;

    for (int step = 1; step <= cfg.train_steps; ++step) {
        std::vector<int> idx;
        std::vector<const NoisyGraph*> gptrs;
        std::vector<double> times;
        for (int b = 0; b < cfg.batch; ++b) {
            int id = rng.uniform_int(static_cast<int>(clean.size()));
            idx.push_back(id);
            gptrs.push_back(&clean[static_cast<std::size_t>(id)]);
            times.push_back(static_cast<double>(1 + rng.uniform_int(T)) / T);
        }
        std::vector<RrwpTensor> encs;
        encs.reserve(gptrs.size());
        for (const NoisyGraph* g : gptrs) encs.push_back(diffusion_rrwp(*g, cfg.den.rrwp_k, is_bond));
        GraphBatch cb = make_batch(gptrs, times, encs, is_bond);

        std::vector<Tensor> cond_rows;
        for (int b = 0; b < cfg.batch; ++b) {
            std::optional<double> z;
            if (cfg.conditional) {
                const auto& p = properties[static_cast<std::size_t>(idx[static_cast<std::size_t>(b)])];
                bool drop = rng.bernoulli(cfg.cond_dropout);
                if (p && !drop) z = (*p - model.prop_mean) / model.prop_std;
            }
            cond_rows.push_back(model.denoiser.condition_embed(z));
        }
        Tensor cond = concat_rows(cond_rows);
        const Tensor* sched_cond = cfg.conditional ? &cond : nullptr;

        ScheduleTensors ns, es;
        if (cfg.fixed_schedule) {
            ns = model.scheduler.schedules_at(uniform_weights(cb.total_nodes, cfg.sched.k_poly), nullptr,
                                              cb.node_t);
            es = model.scheduler.schedules_at(uniform_weights(cb.total_pairs, cfg.sched.k_poly), nullptr,
                                              cb.pair_t);
        } else {
            ns = model.scheduler.node_schedules(cb, sched_cond);
            es = model.scheduler.edge_schedules(cb, sched_cond);
        }

        std::vector<NoisyGraph> noisy;
        Tensor node_oh, pair_oh;
        if (cfg.relaxed) {
            RelaxedCorruption rc = corrupt_relaxed(cb, model.node_classes, model.edge_classes, ns, es,
                                                   cfg.gumbel_tau, rng, with_replace);
            noisy = std::move(rc.noisy);
            node_oh = rc.node_onehots;
            pair_oh = rc.pair_onehots;
        } else {
            std::vector<int> node_hard, pair_hard;
            for (int b = 0; b < cfg.batch; ++b) {
                CorruptionProbs np = slice_probs(ns, cb.node_offset[static_cast<std::size_t>(b)],
                                                 cb.node_offset[static_cast<std::size_t>(b) + 1]);
                CorruptionProbs ep = slice_probs(es, cb.pair_offset[static_cast<std::size_t>(b)],
                                                 cb.pair_offset[static_cast<std::size_t>(b) + 1]);
                NoisyGraph ng = corrupt_hard(*gptrs[static_cast<std::size_t>(b)], np, ep, rng);
                for (int i = 0; i < ng.n; ++i) node_hard.push_back(ng.atom_types[static_cast<std::size_t>(i)]);
                for (int u = 0; u < ng.n; ++u)
                    for (int v = u + 1; v < ng.n; ++v) pair_hard.push_back(ng.bond(u, v));
                noisy.push_back(std::move(ng));
            }
            node_oh = Tensor::constant(onehot_rows(node_hard, model.node_classes + 1));
            pair_oh = Tensor::constant(onehot_rows(pair_hard, model.edge_classes + 1));
        }

        std::vector<const NoisyGraph*> nptrs;
        std::vector<RrwpTensor> nencs;
        for (const auto& g : noisy) {
            nptrs.push_back(&g);
            nencs.push_back(diffusion_rrwp(g, cfg.den.rrwp_k, is_bond));
        }
        GraphBatch nb = make_batch(nptrs, times, nencs, is_bond);
        Denoiser::Output pred = model.denoiser.predict(nb, node_oh, pair_oh, &cond);

        NelboInputs in;
        in.node_alpha_bar = ns.alpha_bar;
        in.node_alpha_dot = ns.alpha_dot;
        in.edge_alpha_bar = es.alpha_bar;
        in.edge_alpha_dot = es.alpha_dot;
        in.node_logprobs = log_softmax_rows(pred.node_logits);
        in.edge_logprobs = log_softmax_rows(pred.edge_logits);
        in.node_targets = cb.node_cat;
        in.edge_targets = cb.pair_cat;
        in.lambda_edge = cfg.lambda_edge;
        in.weight_clamp = cfg.weight_clamp;
        in.num_graphs = cfg.batch;
        Tensor printed = nelbo_loss(in);
        Tensor objective = cfg.paper_sign ? printed : neg(printed);
        double value = objective.value().scalar_value();
        if (!std::isfinite(value))
            throw DivergenceError("diffusion training produced non-finite loss at step " + std::to_string(step));
        ad::backward(objective);
        model.store.adam_step(adam);

        long masked = 0, total = 0;
        for (const auto& g : noisy) {
            for (int i = 0; i < g.n; ++i) masked += g.node_masked(i) ? 1 : 0;
            for (int u = 0; u < g.n; ++u)
                for (int v = u + 1; v < g.n; ++v) masked += g.edge_masked(u, v) ? 1 : 0;
            total += g.n + g.n * (g.n - 1) / 2;
        }
        double frac = total > 0 ? static_cast<double>(masked) / total : 0.0;
        rec.loss.push_back(value);
        rec.masked_frac.push_back(frac);
        if (csv.is_open()) csv << step << "," << value << "," << frac << "\n";
        if (!checkpoint_dir.empty() && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
            model.save(checkpoint_dir);
    }
    if (!checkpoint_dir.empty()) model.save(checkpoint_dir);
    return rec;
}

// ---- sampling --------------------------------------------------------------------------

namespace {

// The written objective weights every element's log-likelihood by
// w_c = |alpha_dot_c| / (1 - alpha_bar_c), so the trained conditional fits
// P(x0 = c | state) * w_c up to normalization. Dividing the softmax by the
// weight recovers the unskewed posterior for sampling.
std::vector<double> deskewed_posterior(const Array& logits, long row, int classes,
                                       const std::vector<ScheduleTensors>& sched, double temperature,
                                       double floor_frac) {
    std::vector<double> p(static_cast<std::size_t>(classes));
    double mx = -1e300;
    for (int c = 0; c < classes; ++c) mx = std::max(mx, logits.at(row, c));
    double wmax = 0.0;
    std::vector<double> w(static_cast<std::size_t>(classes));
    for (int c = 0; c < classes; ++c) {
        double abar = sched[static_cast<std::size_t>(c)].alpha_bar.value().at(row, 0);
        double adot = sched[static_cast<std::size_t>(c)].alpha_dot.value().at(row, 0);
        w[static_cast<std::size_t>(c)] = std::fabs(adot) / std::max(1.0 - abar, 1e-9);
        wmax = std::max(wmax, w[static_cast<std::size_t>(c)]);
    }
    double floor = std::max(floor_frac * wmax, 1e-12);
    double z = 0.0;
    for (int c = 0; c < classes; ++c) {
        double raw = (logits.at(row, c) - mx) - std::log(std::max(w[static_cast<std::size_t>(c)], floor));
        p[static_cast<std::size_t>(c)] = std::exp(raw / temperature);
        z += p[static_cast<std::size_t>(c)];
    }
    for (double& x : p) x /= z;
    return p;
}

int sample_from(const std::vector<double>& p, Rng& rng) {
    double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
        acc += p[c];
        if (u < acc) return static_cast<int>(c);
    }
    return static_cast<int>(p.size()) - 1;
}

int argmax_of(const std::vector<double>& p) {
    int best = 0;
    for (std::size_t c = 1; c < p.size(); ++c)
        if (p[c] > p[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
    return best;
}

Array combine_guidance(const Array& cond, const Array& uncond, double w) {
    Array out(cond.rows(), cond.cols());
    for (long i = 0; i < cond.size(); ++i) out[i] = (1.0 + w) * cond[i] - w * uncond[i];
    return out;
}

double reveal_probability(double abar_prev, double abar_t) {
    double denom = 1.0 - abar_t;
    if (denom <= 1e-12) return 1.0;
    double p = (abar_prev - abar_t) / denom;
    return p < 0.0 ? 0.0 : (p > 1.0 ? 1.0 : p);
}

}  // namespace

SampleOutput sample(const DiffusionModel& model, const BondPredicate& is_bond, const SampleConfig& scfg) {
    const TrainConfig& cfg = model.cfg;
    if (model.size_histogram.empty())
        throw ContractError("sample: model carries no size histogram; train it first");
    if (scfg.count < 1) throw DomainError("sample: count must be >= 1");
    SampleOutput out;
    const int T = cfg.steps_T;
    ad::NoGradGuard ng;
    std::optional<double> z;
    if (scfg.target_property) z = (*scfg.target_property - model.prop_mean) / model.prop_std;

    for (int start = 0; start < scfg.count; start += scfg.chain_group) {
        int gcount = std::min(scfg.chain_group, scfg.count - start);
        std::vector<NoisyGraph> graphs;
        std::vector<Rng> rngs;
        std::vector<EmbeddingTrace> traces(static_cast<std::size_t>(gcount));
        for (int c = 0; c < gcount; ++c) {
            Rng r(derive_seed(scfg.seed, "chain-" + std::to_string(start + c)));
            int n = model.size_histogram[static_cast<std::size_t>(
                r.uniform_int(static_cast<int>(model.size_histogram.size())))];
            graphs.push_back(NoisyGraph::fully_masked(n, model.node_classes, model.edge_classes));
            rngs.push_back(r);
        }
        Array last_node_logits, last_edge_logits;
        GraphBatch last_batch;
        std::vector<ScheduleTensors> last_sn, last_se;
        for (int ts = T; ts >= 1; --ts) {
            double t = static_cast<double>(ts) / T;
            double tp = static_cast<double>(ts - 1) / T;
            std::vector<const NoisyGraph*> ptrs;
            std::vector<double> times(static_cast<std::size_t>(gcount), t);
            std::vector<RrwpTensor> encs;
            for (const auto& g : graphs) {
                ptrs.push_back(&g);
                encs.push_back(diffusion_rrwp(g, cfg.den.rrwp_k, is_bond));
            }
            GraphBatch b = make_batch(ptrs, times, encs, is_bond);

            std::vector<Tensor> null_rows_v, cond_rows_v;
            for (int c = 0; c < gcount; ++c) {
                null_rows_v.push_back(model.denoiser.condition_embed(std::nullopt));
                if (z) cond_rows_v.push_back(model.denoiser.condition_embed(z));
            }
            Tensor null_rows = concat_rows(null_rows_v);
            Tensor cond_rows = z ? concat_rows(cond_rows_v) : Tensor();
            const Tensor* sched_cond = nullptr;
            if (cfg.conditional) sched_cond = z ? &cond_rows : &null_rows;

            // Schedules are category-conditioned, so a masked element's reveal
            // hazard is evaluated under its candidate category: this keeps the
            // reverse mask pattern aligned with the forward marginals.
            std::vector<double> node_t_now(static_cast<std::size_t>(b.total_nodes), t);
            std::vector<double> node_t_prev(static_cast<std::size_t>(b.total_nodes), tp);
            std::vector<double> pair_t_now(static_cast<std::size_t>(b.total_pairs), t);
            std::vector<double> pair_t_prev(static_cast<std::size_t>(b.total_pairs), tp);
            std::vector<ScheduleTensors> sn_now(static_cast<std::size_t>(model.node_classes));
            std::vector<ScheduleTensors> sn_prev(static_cast<std::size_t>(model.node_classes));
            std::vector<ScheduleTensors> se_now(static_cast<std::size_t>(model.edge_classes));
            std::vector<ScheduleTensors> se_prev(static_cast<std::size_t>(model.edge_classes));
            for (int c = 0; c < model.node_classes; ++c) {
                Tensor w;
                Tensor g_logit;
                const Tensor* gl = nullptr;
                std::vector<int> cats(static_cast<std::size_t>(b.total_nodes), c);
                if (cfg.fixed_schedule) {
                    w = uniform_weights(b.total_nodes, cfg.sched.k_poly);
                } else {
                    w = model.scheduler.node_weights_for(b, cats, sched_cond);
                    if (cfg.mode == DiffusionMode::vqsad) {
                        g_logit = model.scheduler.node_gamma_logit_for(b, cats, sched_cond);
                        gl = &g_logit;
                    }
                }
                sn_now[static_cast<std::size_t>(c)] = model.scheduler.schedules_at(w, gl, node_t_now);
                sn_prev[static_cast<std::size_t>(c)] = model.scheduler.schedules_at(w, gl, node_t_prev);
            }
            for (int c = 0; c < model.edge_classes; ++c) {
                Tensor w;
                Tensor g_logit;
                const Tensor* gl = nullptr;
                std::vector<int> cats(static_cast<std::size_t>(b.total_pairs), c);
                if (cfg.fixed_schedule) {
                    w = uniform_weights(b.total_pairs, cfg.sched.k_poly);
                } else {
                    w = model.scheduler.edge_weights_for(b, cats, sched_cond);
                    if (cfg.mode == DiffusionMode::vqsad) {
                        g_logit = model.scheduler.edge_gamma_logit_for(b, cats, sched_cond);
                        gl = &g_logit;
                    }
                }
                se_now[static_cast<std::size_t>(c)] = model.scheduler.schedules_at(w, gl, pair_t_now);
                se_prev[static_cast<std::size_t>(c)] = model.scheduler.schedules_at(w, gl, pair_t_prev);
            }

            Array node_logits, edge_logits, states;
            if (z) {
                Denoiser::Output oc = model.denoiser.predict_hard(b, &cond_rows);
                Denoiser::Output ou = model.denoiser.predict_hard(b, &null_rows);
                node_logits = combine_guidance(oc.node_logits.value(), ou.node_logits.value(), scfg.guidance);
                edge_logits = combine_guidance(oc.edge_logits.value(), ou.edge_logits.value(), scfg.guidance);
                states = oc.node_states.value();
            } else {
                Denoiser::Output o = model.denoiser.predict_hard(b, &null_rows);
                node_logits = o.node_logits.value();
                edge_logits = o.edge_logits.value();
                states = o.node_states.value();
            }

            for (int c = 0; c < gcount; ++c) {
                NoisyGraph& g = graphs[static_cast<std::size_t>(c)];
                Rng& r = rngs[static_cast<std::size_t>(c)];
                int n0 = b.node_offset[static_cast<std::size_t>(c)];
                int p0 = b.pair_offset[static_cast<std::size_t>(c)];
                // VQ-SAD: re-perturb already revealed elements with the per-step
                // replacement mass of their current category before revealing
                // anything new.
                if (cfg.mode == DiffusionMode::vqsad) {
                    for (int i = 0; i < g.n; ++i) {
                        if (g.node_masked(i)) continue;
                        long row = n0 + i;
                        auto c = static_cast<std::size_t>(g.atom_types[static_cast<std::size_t>(i)]);
                        StepParams sp = per_step_params(
                            sn_prev[c].alpha_bar.value().at(row, 0), sn_prev[c].beta_bar.value().at(row, 0),
                            sn_prev[c].gamma_bar.value().at(row, 0), sn_now[c].alpha_bar.value().at(row, 0),
                            sn_now[c].beta_bar.value().at(row, 0), model.node_classes);
                        double pr = sp.valid ? std::max(0.0, 1.0 - sp.alpha - sp.beta) : 0.0;
                        if (pr > 0.0 && r.bernoulli(pr))
                            g.atom_types[static_cast<std::size_t>(i)] =
                                sample_from(deskewed_posterior(node_logits, row, model.node_classes, sn_now, scfg.temperature, 0.02), r);
                    }
                    int p = p0;
                    for (int u = 0; u < g.n; ++u)
                        for (int v = u + 1; v < g.n; ++v, ++p) {
                            if (g.edge_masked(u, v)) continue;
                            auto c = static_cast<std::size_t>(g.bond(u, v));
                            StepParams sp = per_step_params(
                                se_prev[c].alpha_bar.value().at(p, 0), se_prev[c].beta_bar.value().at(p, 0),
                                se_prev[c].gamma_bar.value().at(p, 0), se_now[c].alpha_bar.value().at(p, 0),
                                se_now[c].beta_bar.value().at(p, 0), model.edge_classes);
                            double pr = sp.valid ? std::max(0.0, 1.0 - sp.alpha - sp.beta) : 0.0;
                            if (pr > 0.0 && r.bernoulli(pr))
                                g.set_bond(u, v,
                                           sample_from(deskewed_posterior(edge_logits, p, model.edge_classes, se_now, scfg.temperature, 1e-4), r));
                        }
                }
                for (int i = 0; i < g.n; ++i) {
                    if (!g.node_masked(i)) continue;
                    long row = n0 + i;
                    int cand = sample_from(deskewed_posterior(node_logits, row, model.node_classes, sn_now, scfg.temperature, 0.02), r);
                    auto c = static_cast<std::size_t>(cand);
                    double pr = reveal_probability(sn_prev[c].alpha_bar.value().at(row, 0),
                                                   sn_now[c].alpha_bar.value().at(row, 0));
                    if (r.bernoulli(pr)) g.atom_types[static_cast<std::size_t>(i)] = cand;
                }
                int p = p0;
                for (int u = 0; u < g.n; ++u)
                    for (int v = u + 1; v < g.n; ++v, ++p) {
                        if (!g.edge_masked(u, v)) continue;
                        int cand = sample_from(deskewed_posterior(edge_logits, p, model.edge_classes, se_now, scfg.temperature, 1e-4), r);
                        auto c = static_cast<std::size_t>(cand);
                        double pr = reveal_probability(se_prev[c].alpha_bar.value().at(p, 0),
                                                       se_now[c].alpha_bar.value().at(p, 0));
                        if (r.bernoulli(pr)) g.set_bond(u, v, cand);
                    }
                if (start + c < scfg.trace_chains) {
                    EmbeddingTrace& tr = traces[static_cast<std::size_t>(c)];
                    tr.n = g.n;
                    tr.dim = cfg.den.hidden;
                    Array snap(g.n, cfg.den.hidden);
                    for (int i = 0; i < g.n; ++i)
                        for (int d = 0; d < cfg.den.hidden; ++d) snap.at(i, d) = states.at(n0 + i, d);
                    tr.states.push_back(std::move(snap));
                }
            }
            last_node_logits = node_logits;
            last_edge_logits = edge_logits;
            last_batch = b;
            last_sn = sn_now;
            last_se = se_now;
        }
        for (int c = 0; c < gcount; ++c) {
            NoisyGraph& g = graphs[static_cast<std::size_t>(c)];
            int n0 = last_batch.node_offset[static_cast<std::size_t>(c)];
            int p0 = last_batch.pair_offset[static_cast<std::size_t>(c)];
            for (int i = 0; i < g.n; ++i)
                if (g.node_masked(i)) {
                    g.atom_types[static_cast<std::size_t>(i)] = argmax_of(
                        deskewed_posterior(last_node_logits, n0 + i, model.node_classes, last_sn, scfg.temperature, 0.02));
                    ++out.forced_reveals;
                }
            int p = p0;
            for (int u = 0; u < g.n; ++u)
                for (int v = u + 1; v < g.n; ++v, ++p)
                    if (g.edge_masked(u, v)) {
                        g.set_bond(u, v,
                                   argmax_of(deskewed_posterior(last_edge_logits, p, model.edge_classes, last_se, scfg.temperature, 1e-4)));
                        ++out.forced_reveals;
                    }
            out.graphs.push_back(std::move(g));
            if (start + c < scfg.trace_chains) out.traces.push_back(std::move(traces[static_cast<std::size_t>(c)]));
        }
    }
    return out;
}

std::vector<MolecularGraph> samples_to_molecules(const std::vector<NoisyGraph>& samples, DiffusionMode mode,
                                                 const VqVae* tokenizer) {
    std::vector<MolecularGraph> out;
    for (const auto& s : samples) {
        if (mode == DiffusionMode::sad) {
            MolecularGraph g(s.n);
            g.atom_types = s.atom_types;
            g.bond_types = s.bond_types;
            out.push_back(std::move(g));
        } else {
            if (!tokenizer) throw ContractError("samples_to_molecules: tokenizer required in latent mode");
            TokenizedGraph t;
            t.n = s.n;
            t.atom_codes = s.atom_types;
            t.bond_codes = s.bond_types;
            out.push_back(tokenizer->detokenize(t));
        }
    }
    return out;
}

}  // namespace vqsad
