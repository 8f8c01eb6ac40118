#include <algorithm>
#include "vqsad/scheduler.hpp"

#include <cmath>

namespace vqsad {

using ad::Tensor;

AlphaBar alpha_bar(std::span<const double> weights, double t, double zeta_min, double zeta_max) {
    if (t < 0.0 || t > 1.0) throw DomainError("alpha_bar: t outside [0,1]");
    if (zeta_min >= zeta_max) throw DomainError("alpha_bar: zeta_min must be below zeta_max");
    double wsum = 0.0, poly = 0.0, dpoly = 0.0;
    double tk = t;  // t^k, starting at k=1
    for (std::size_t k = 0; k < weights.size(); ++k) {
        double f = weights[k];
        if (f < 0.0) throw DomainError("alpha_bar: negative weight");
        wsum += f;
        poly += f * tk;
        dpoly += f * static_cast<double>(k + 1) * (k == 0 ? 1.0 : std::pow(t, static_cast<double>(k)));
        tk *= t;
    }
    if (wsum <= 0.0) throw DomainError("alpha_bar: weights sum to zero");
    double zeta_hat = poly / wsum;
    double zeta = zeta_hat * (zeta_max - zeta_min) + zeta_min;
    double a = 1.0 / (1.0 + std::exp(zeta));  // sigma(-zeta)
    double deriv = -a * (1.0 - a) * (zeta_max - zeta_min) * (dpoly / wsum);
    return {a, deriv};
}

std::vector<double> TransitionMatrix::apply(std::span<const double> p) const {
    long dim = q.rows();
    if (static_cast<long>(p.size()) != dim) throw DomainError("TransitionMatrix::apply: size mismatch");
    std::vector<double> out(static_cast<std::size_t>(dim), 0.0);
    for (long i = 0; i < dim; ++i)
        for (long j = 0; j < dim; ++j) out[static_cast<std::size_t>(j)] += p[static_cast<std::size_t>(i)] * q.at(i, j);
    return out;
}

TransitionMatrix build_transition(double alpha, double beta, double gamma, int k_classes) {
    if (k_classes < 1) throw DomainError("build_transition: k_classes must be >= 1");
    double row_sum = alpha + (k_classes - 1) * gamma + beta;
    if (std::fabs(row_sum - 1.0) > 1e-9)
        throw DomainError("build_transition: row sum deficit " + std::to_string(row_sum - 1.0));
    for (double v : {alpha, beta, gamma})
        if (v < -1e-12 || v > 1.0 + 1e-12) throw DomainError("build_transition: probability outside [0,1]");
    TransitionMatrix t;
    t.k_classes = k_classes;
    t.q = Array(k_classes + 1, k_classes + 1);
    for (int i = 0; i < k_classes; ++i) {
        for (int j = 0; j < k_classes; ++j) t.q.at(i, j) = i == j ? alpha : gamma;
        t.q.at(i, k_classes) = beta;
    }
    t.q.at(k_classes, k_classes) = 1.0;  // absorbing mask
    return t;
}

Cumulative cumulate(std::span<const double> alpha_steps, std::span<const double> beta_steps) {
    if (alpha_steps.size() != beta_steps.size()) throw DomainError("cumulate: step count mismatch");
    Cumulative c;
    double ap = 1.0, keep = 1.0;
    for (std::size_t i = 0; i < alpha_steps.size(); ++i) {
        double a = alpha_steps[i], b = beta_steps[i];
        if (a < 0.0 || a > 1.0 || b < 0.0 || b > 1.0) throw DomainError("cumulate: step outside [0,1]");
        ap *= a;
        keep *= 1.0 - b;
        double bbar = 1.0 - keep;
        double gbar = 1.0 - ap - bbar;
        if (gbar < -1e-12)
            throw DomainError("cumulate: inconsistent per-step schedule, gamma_bar = " + std::to_string(gbar));
        c.alpha_bar.push_back(ap);
        c.beta_bar.push_back(bbar);
        c.gamma_bar.push_back(gbar < 0.0 ? 0.0 : gbar);
    }
    return c;
}

StepParams per_step_params(double abar_prev, double bbar_prev, double gbar_prev, double abar_t,
                           double bbar_t, int k_classes) {
    StepParams s;
    double keep_prev = 1.0 - bbar_prev;
    if (keep_prev <= 0.0) {
        s.valid = false;
        return s;
    }
    s.beta = 1.0 - (1.0 - bbar_t) / keep_prev;
    double denom = abar_prev - gbar_prev / (k_classes - 1 > 0 ? k_classes - 1 : 1);
    if (k_classes < 2 || std::fabs(denom) < 1e-300) {
        // Single non-mask class: no replacement is possible.
        s.alpha = abar_prev > 0.0 ? abar_t / abar_prev : 1.0;
        s.gamma = 0.0;
    } else {
        s.alpha = (abar_t - gbar_prev * (1.0 - s.beta) / (k_classes - 1)) / denom;
        s.gamma = (1.0 - s.beta - s.alpha) / (k_classes - 1);
    }
    double eps = 1e-12;
    if (s.alpha < -eps || s.alpha > 1.0 + eps || s.beta < -eps || s.beta > 1.0 + eps || s.gamma < -eps ||
        s.gamma > 1.0 + eps)
        s.valid = false;
    auto clamp01 = [](double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); };
    s.alpha = clamp01(s.alpha);
    s.beta = clamp01(s.beta);
    s.gamma = clamp01(s.gamma);
    return s;
}

std::vector<double> cumulative_marginal(double abar, double bbar, double gbar, int x0, int k_classes) {
    std::vector<double> p(static_cast<std::size_t>(k_classes) + 1, 0.0);
    for (int j = 0; j < k_classes; ++j)
        p[static_cast<std::size_t>(j)] = j == x0 ? abar : gbar / (k_classes - 1);
    p[static_cast<std::size_t>(k_classes)] = bbar;
    return p;
}

// ---- learnable nets ------------------------------------------------------------

namespace {

std::string pname(const std::string& prefix, const char* leaf) { return "sched." + prefix + "." + leaf; }

}  // namespace

SchedulerNet::SchedulerNet(ParamStore& store, const SchedulerConfig& cfg, int node_classes,
                           int edge_classes, int rrwp_k, Rng& rng,
                           const std::vector<std::uint8_t>& edge_bondlike) {
    cfg_ = cfg;
    store_ = &store;
    node_classes_ = node_classes;
    edge_classes_ = edge_classes;
    // Initial masking order (forward time): atom types last, bond-like edges
    // next, "no bond" fills first. In reverse that settles atom types, then
    // grows bonds conditioned on them, and fills the trivial non-bonds last.
    long k_late = cfg.k_poly - 1;              // transition near t ~ 0.89
    long k_mid = std::min<long>(2, k_late);    // transition near t ~ 0.79
    long k_early = 0;                          // transition near t ~ 0.5
    for (const std::string side : {std::string("node"), std::string("edge")}) {
        int cats = (side == "node" ? node_classes : edge_classes) + 1;  // mask row included
        store.add_linear(pname(side, "cat_embed"), cats, cfg.embed_dim, rng);
        store.add_linear(pname(side, "struct_embed"), rrwp_k, cfg.embed_dim, rng);
        int in_dim = 2 * cfg.embed_dim + cfg.cond_dim;
        store.add_linear(pname(side, "w1"), in_dim, cfg.hidden, rng);
        store.add(pname(side, "b1"), Array::zeros(1, cfg.hidden));
        store.add_linear(pname(side, "w2"), cfg.hidden, cfg.k_poly, rng);
        store.add(pname(side, "b2"), Array::zeros(1, cfg.k_poly));
        Array bias(cats, cfg.k_poly);
        for (int cat = 0; cat < cats; ++cat) {
            long k = k_late;
            if (side == "edge") {
                bool bondlike = cat < edge_classes &&
                                (edge_bondlike.empty() ? cat != kBondNone
                                                       : edge_bondlike[static_cast<std::size_t>(cat)] != 0);
                k = bondlike || cat == edge_classes ? k_mid : k_early;
            }
            bias.at(cat, k) = 5.0;
        }
        store.add(pname(side, "cat_bias"), std::move(bias));
        if (cfg.learn_gamma) {
            store.add_linear(pname(side, "wg"), cfg.hidden, 1, rng);
            store.add(pname(side, "bg"), Array::zeros(1, 1));
        }
    }
    // Replacement mass starts small; training grows it where corrections pay.
    if (cfg.learn_gamma) store.add(pname("global", "gamma_bias"), Array::full(1, 1, -3.0));
}

void SchedulerNet::bind(ParamStore& store, const SchedulerConfig& cfg, int node_classes, int edge_classes,
                        int rrwp_k) {
    (void)rrwp_k;
    cfg_ = cfg;
    store_ = &store;
    node_classes_ = node_classes;
    edge_classes_ = edge_classes;
}

Tensor SchedulerNet::trunk(const std::string& prefix, const Tensor& onehots, const Array& struct_rows,
                           const Tensor* cond, const std::vector<int>& graph_of_row) const {
    Tensor cat = matmul(onehots, store_->at(pname(prefix, "cat_embed")));
    Tensor str = matmul(Tensor::constant(struct_rows), store_->at(pname(prefix, "struct_embed")));
    Tensor c;
    if (cond && cond->defined()) {
        c = gather_rows(*cond, graph_of_row);
    } else {
        c = Tensor::constant(Array::zeros(onehots.value().rows(), cfg_.cond_dim));
    }
    Tensor x = ad::concat_cols({cat, str, c});
    Tensor h = relu(add(matmul(x, store_->at(pname(prefix, "w1"))), store_->at(pname(prefix, "b1"))));
    return h;
}

Tensor SchedulerNet::node_weights(const GraphBatch& b, const Tensor* cond) const {
    return node_weights_for(b, b.node_cat, cond);
}

Tensor SchedulerNet::edge_weights(const GraphBatch& b, const Tensor* cond) const {
    return edge_weights_for(b, b.pair_cat, cond);
}

Tensor SchedulerNet::node_weights_for(const GraphBatch& b, const std::vector<int>& cats,
                                      const Tensor* cond) const {
    Tensor h = trunk("node", Tensor::constant(onehot_rows(cats, node_classes_ + 1)), b.node_struct, cond,
                     b.graph_of_node);
    Tensor logits = add(add(matmul(h, store_->at(pname("node", "w2"))), store_->at(pname("node", "b2"))),
                        gather_rows(store_->at(pname("node", "cat_bias")), cats));
    return softmax_rows(logits);
}

Tensor SchedulerNet::edge_weights_for(const GraphBatch& b, const std::vector<int>& cats,
                                      const Tensor* cond) const {
    Tensor h = trunk("edge", Tensor::constant(onehot_rows(cats, edge_classes_ + 1)), b.pair_struct, cond,
                     b.graph_of_pair);
    Tensor logits = add(add(matmul(h, store_->at(pname("edge", "w2"))), store_->at(pname("edge", "b2"))),
                        gather_rows(store_->at(pname("edge", "cat_bias")), cats));
    return softmax_rows(logits);
}

Tensor SchedulerNet::node_gamma_logit(const GraphBatch& b, const Tensor* cond) const {
    return node_gamma_logit_for(b, b.node_cat, cond);
}

Tensor SchedulerNet::edge_gamma_logit(const GraphBatch& b, const Tensor* cond) const {
    return edge_gamma_logit_for(b, b.pair_cat, cond);
}

Tensor SchedulerNet::node_gamma_logit_for(const GraphBatch& b, const std::vector<int>& cats,
                                          const Tensor* cond) const {
    Tensor h = trunk("node", Tensor::constant(onehot_rows(cats, node_classes_ + 1)), b.node_struct, cond,
                     b.graph_of_node);
    Tensor logit = add(matmul(h, store_->at(pname("node", "wg"))), store_->at(pname("node", "bg")));
    return add(logit, store_->at(pname("global", "gamma_bias")));
}

Tensor SchedulerNet::edge_gamma_logit_for(const GraphBatch& b, const std::vector<int>& cats,
                                          const Tensor* cond) const {
    Tensor h = trunk("edge", Tensor::constant(onehot_rows(cats, edge_classes_ + 1)), b.pair_struct, cond,
                     b.graph_of_pair);
    Tensor logit = add(matmul(h, store_->at(pname("edge", "wg"))), store_->at(pname("edge", "bg")));
    return add(logit, store_->at(pname("global", "gamma_bias")));
}

std::pair<Tensor, Tensor> alpha_bar_rows(const Tensor& weights, const std::vector<double>& t,
                                         double zeta_min, double zeta_max) {
    long rows = weights.value().rows();
    long k_poly = weights.value().cols();
    if (rows != static_cast<long>(t.size())) throw DomainError("alpha_bar_rows: time count mismatch");
    Array tpow(rows, k_poly), dtpow(rows, k_poly);
    for (long r = 0; r < rows; ++r) {
        double tr = t[static_cast<std::size_t>(r)];
        if (tr < 0.0 || tr > 1.0) throw DomainError("alpha_bar_rows: t outside [0,1]");
        double tk = tr;
        for (long k = 0; k < k_poly; ++k) {
            tpow.at(r, k) = tk;
            dtpow.at(r, k) = static_cast<double>(k + 1) * (k == 0 ? 1.0 : std::pow(tr, static_cast<double>(k)));
            tk *= tr;
        }
    }
    Tensor wsum = sum_rows(weights);
    Tensor zeta_hat = div(sum_rows(mul(weights, Tensor::constant(tpow))), wsum);
    Tensor zeta = add_scalar(scale(zeta_hat, zeta_max - zeta_min), zeta_min);
    Tensor a = sigmoid(neg(zeta));
    Tensor dzh = div(sum_rows(mul(weights, Tensor::constant(dtpow))), wsum);
    Tensor adot = neg(mul(mul(a, add_scalar(neg(a), 1.0)), scale(dzh, zeta_max - zeta_min)));
    return {a, adot};
}

ScheduleTensors SchedulerNet::schedules(const Tensor& weights, const Tensor* gamma_logit,
                                        const std::vector<double>& times) const {
    auto [a, adot] = alpha_bar_rows(weights, times, cfg_.zeta_min, cfg_.zeta_max);
    ScheduleTensors s;
    s.alpha_bar = a;
    s.alpha_dot = adot;
    Tensor leak = add_scalar(neg(a), 1.0);
    if (cfg_.learn_gamma && gamma_logit) {
        Array one_minus_t(a.value().rows(), 1);
        for (long r = 0; r < one_minus_t.rows(); ++r) one_minus_t.at(r, 0) = 1.0 - times[static_cast<std::size_t>(r)];
        Tensor frac = mul(sigmoid(*gamma_logit), Tensor::constant(std::move(one_minus_t)));
        s.gamma_bar = mul(frac, leak);
        s.beta_bar = sub(leak, s.gamma_bar);
    } else {
        s.gamma_bar = Tensor::constant(Array::zeros(a.value().rows(), 1));
        s.beta_bar = leak;
    }
    return s;
}

ScheduleTensors SchedulerNet::node_schedules(const GraphBatch& b, const Tensor* cond) const {
    Tensor w = node_weights(b, cond);
    if (cfg_.learn_gamma) {
        Tensor g = node_gamma_logit(b, cond);
        return schedules(w, &g, b.node_t);
    }
    return schedules(w, nullptr, b.node_t);
}

ScheduleTensors SchedulerNet::edge_schedules(const GraphBatch& b, const Tensor* cond) const {
    Tensor w = edge_weights(b, cond);
    if (cfg_.learn_gamma) {
        Tensor g = edge_gamma_logit(b, cond);
        return schedules(w, &g, b.pair_t);
    }
    return schedules(w, nullptr, b.pair_t);
}

}  // namespace vqsad
