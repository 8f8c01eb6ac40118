#pragma once

#include <span>
#include <vector>

#include "vqsad/autodiff.hpp"
#include "vqsad/graph_batch.hpp"
#include "vqsad/param_store.hpp"

namespace vqsad {

// ---- closed-form schedule algebra -------------------------------------------

struct AlphaBar {
    double value;  // cumulative stay probability, sigma(-zeta(t))
    double deriv;  // d/dt, analytic
};

// weights are the polynomial coefficients f_1..f_K; the ratio form normalizes
// them, so any nonnegative weights are accepted.
AlphaBar alpha_bar(std::span<const double> weights, double t, double zeta_min, double zeta_max);

// Square (K_classes+1)-state matrix; last state is the absorbing mask.
struct TransitionMatrix {
    int k_classes = 0;
    Array q;  // [(k+1), (k+1)], rows sum to 1

    // Row-vector distribution update: out_j = sum_i p_i * q[i][j].
    std::vector<double> apply(std::span<const double> p) const;
};

// Requires alpha + (K-1)*gamma + beta = 1 within 1e-9 and entries in [0,1].
TransitionMatrix build_transition(double alpha, double beta, double gamma, int k_classes);

struct Cumulative {
    std::vector<double> alpha_bar;  // prod alpha_i
    std::vector<double> beta_bar;   // 1 - prod(1 - beta_i)
    std::vector<double> gamma_bar;  // 1 - alpha_bar - beta_bar
};

// Throws DomainError when any gamma_bar would go negative.
Cumulative cumulate(std::span<const double> alpha_steps, std::span<const double> beta_steps);

// Per-step matrix parameters that make the product Q_1..Q_t reproduce the
// cumulative expansion exactly (reduces to alpha_t = abar_t / abar_{t-1} when
// gamma_bar = 0). valid is false when no row-stochastic solution exists.
struct StepParams {
    double alpha = 1.0, beta = 0.0, gamma = 0.0;
    bool valid = true;
};
StepParams per_step_params(double abar_prev, double bbar_prev, double gbar_prev, double abar_t,
                           double bbar_t, int k_classes);

// Marginal of the cumulative expansion applied to a one-hot at x0:
// abar on x0, gbar spread uniformly over the other K-1 classes, bbar on mask.
std::vector<double> cumulative_marginal(double abar, double bbar, double gbar, int x0, int k_classes);

// ---- learnable structure-aware scheduler -------------------------------------

struct SchedulerConfig {
    int k_poly = 6;
    double zeta_min = -10.0;
    double zeta_max = 10.0;
    int embed_dim = 8;
    int hidden = 16;
    int cond_dim = 8;
    bool learn_gamma = false;  // VQ-SAD mode adds the replacement head
};

// Per-element cumulative schedule tensors, shaped [rows, 1].
struct ScheduleTensors {
    ad::Tensor alpha_bar;
    ad::Tensor alpha_dot;
    ad::Tensor beta_bar;
    ad::Tensor gamma_bar;
};

class SchedulerNet {
public:
    SchedulerNet() = default;
    // edge_bondlike marks edge categories that carry topology (size
    // edge_classes; empty means every nonzero category). Bond-like categories
    // start on a late-masking curve, so the reverse process settles structure
    // before atom types and lets "no bond" fills come last; training reshapes
    // the curves from there.
    SchedulerNet(ParamStore& store, const SchedulerConfig& cfg, int node_classes, int edge_classes,
                 int rrwp_k, Rng& rng, const std::vector<std::uint8_t>& edge_bondlike = {});
    void bind(ParamStore& store, const SchedulerConfig& cfg, int node_classes, int edge_classes, int rrwp_k);

    const SchedulerConfig& config() const { return cfg_; }

    // Simplex-normalized polynomial weights, [rows, k_poly].
    ad::Tensor node_weights(const GraphBatch& b, const ad::Tensor* cond) const;
    ad::Tensor edge_weights(const GraphBatch& b, const ad::Tensor* cond) const;

    // Same nets with the batch categories overridden; samplers evaluate the
    // schedule a masked element would have under a candidate category.
    ad::Tensor node_weights_for(const GraphBatch& b, const std::vector<int>& cats,
                                const ad::Tensor* cond) const;
    ad::Tensor edge_weights_for(const GraphBatch& b, const std::vector<int>& cats,
                                const ad::Tensor* cond) const;

    // Replacement-fraction logits, [rows, 1]; only with learn_gamma.
    ad::Tensor node_gamma_logit(const GraphBatch& b, const ad::Tensor* cond) const;
    ad::Tensor edge_gamma_logit(const GraphBatch& b, const ad::Tensor* cond) const;
    ad::Tensor node_gamma_logit_for(const GraphBatch& b, const std::vector<int>& cats,
                                    const ad::Tensor* cond) const;
    ad::Tensor edge_gamma_logit_for(const GraphBatch& b, const std::vector<int>& cats,
                                    const ad::Tensor* cond) const;

    // Full cumulative schedules at per-element times. SAD mode: beta = 1-alpha,
    // gamma = 0. VQ-SAD mode: gamma = sigmoid(head)*(1-t)*(1-alpha).
    ScheduleTensors node_schedules(const GraphBatch& b, const ad::Tensor* cond) const;
    ScheduleTensors edge_schedules(const GraphBatch& b, const ad::Tensor* cond) const;

    // Re-evaluate the cumulative schedules at other times from cached weights
    // and gamma logits (samplers evaluate at both t and t-1).
    ScheduleTensors schedules_at(const ad::Tensor& weights, const ad::Tensor* gamma_logit,
                                 const std::vector<double>& times) const {
        return schedules(weights, gamma_logit, times);
    }

private:
    ScheduleTensors schedules(const ad::Tensor& weights, const ad::Tensor* gamma_logit,
                              const std::vector<double>& times) const;
    ad::Tensor trunk(const std::string& prefix, const ad::Tensor& onehots, const Array& struct_rows,
                     const ad::Tensor* cond, const std::vector<int>& graph_of_row) const;

    ParamStore* store_ = nullptr;
    SchedulerConfig cfg_;
    int node_classes_ = 0;
    int edge_classes_ = 0;
};

// Tape version of alpha_bar for per-row times; weights [m, k_poly] rows on the
// simplex, returns ([m,1] alpha_bar, [m,1] alpha_dot).
std::pair<ad::Tensor, ad::Tensor> alpha_bar_rows(const ad::Tensor& weights, const std::vector<double>& t,
                                                 double zeta_min, double zeta_max);

}  // namespace vqsad
