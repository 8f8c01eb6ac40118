#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vqsad/denoiser.hpp"
#include "vqsad/graph_batch.hpp"
#include "vqsad/metrics.hpp"
#include "vqsad/param_store.hpp"
#include "vqsad/scheduler.hpp"
#include "vqsad/vqvae.hpp"

namespace vqsad {

enum class DiffusionMode { sad, vqsad };

struct TrainConfig {
    DiffusionMode mode = DiffusionMode::sad;
    int steps_T = 100;
    double lambda_edge = 5.0;
    int train_steps = 2000;
    int batch = 4;
    double lr = 1e-3;
    double cond_dropout = 0.1;
    double gumbel_tau = 1.0;
    std::uint64_t seed = 0;
    bool relaxed = true;       // straight-through corruption (scheduler gets corruption gradients)
    bool paper_sign = false;   // minimize the printed objective instead of its negation
    bool conditional = false;
    bool fixed_schedule = false;  // bypass the scheduler nets (uniform weights); baseline mode
    double weight_clamp = 1e4;
    int checkpoint_every = 500;
    SchedulerConfig sched;
    DenoiserConfig den;

    void validate() const;
};

// Scheduler nets, denoiser and bookkeeping needed to train and sample.
// Members hold pointers into the owned store, so the model is pinned in place.
class DiffusionModel {
public:
    // edge_bondlike: per edge-category topology flags for the scheduler's
    // initial masking order; empty means every nonzero category is a bond.
    DiffusionModel(const TrainConfig& cfg, int node_classes, int edge_classes,
                   const std::vector<std::uint8_t>& edge_bondlike = {});

    TrainConfig cfg;
    int node_classes = 0;
    int edge_classes = 0;
    ParamStore store;
    SchedulerNet scheduler;
    Denoiser denoiser;
    std::vector<int> size_histogram;  // node counts seen at training time
    double prop_mean = 0.0;
    double prop_std = 1.0;

    void save(const std::string& dir) const;
    static std::unique_ptr<DiffusionModel> load(const std::string& dir);

    DiffusionModel(const DiffusionModel&) = delete;
    DiffusionModel& operator=(const DiffusionModel&) = delete;
    DiffusionModel(DiffusionModel&&) = delete;
};

using BondPredicate = std::function<bool(int)>;

// Edge categories that carry topology: SAD mode checks the "no bond" class,
// VQ-SAD mode asks the frozen tokenizer what a bond code decodes to. Mask
// never counts.
BondPredicate sad_bond_predicate(int edge_classes);
BondPredicate vqsad_bond_predicate(const VqVae& tokenizer, int edge_classes);

RrwpTensor diffusion_rrwp(const NoisyGraph& g, int K, const BondPredicate& is_bond);

// ---- forward corruption ---------------------------------------------------------

// Per-element cumulative probabilities; spans index batch rows.
struct CorruptionProbs {
    std::vector<double> alpha_bar, beta_bar, gamma_bar;
};

// Keep / mask / replace draw per element. Replacement picks uniformly among
// the K-1 other categories. Pairs are corrupted once and mirrored.
NoisyGraph corrupt_hard(const NoisyGraph& clean, const CorruptionProbs& nodes,
                        const CorruptionProbs& pairs, Rng& rng);

struct RelaxedCorruption {
    std::vector<NoisyGraph> noisy;  // hard categories (straight-through forward values)
    ad::Tensor node_onehots;        // [N, node_classes+1]
    ad::Tensor pair_onehots;        // [P, edge_classes+1]
};

// Straight-through Gumbel corruption over a whole batch; gradients reach the
// schedule tensors. Elements are ordered nodes-then-pairs per make_batch.
RelaxedCorruption corrupt_relaxed(const GraphBatch& clean_batch, int node_classes, int edge_classes,
                                  const ScheduleTensors& nodes, const ScheduleTensors& pairs, double tau,
                                  Rng& rng, bool with_replace);

// ---- loss ------------------------------------------------------------------------

struct NelboInputs {
    ad::Tensor node_alpha_bar, node_alpha_dot;  // [N,1]
    ad::Tensor edge_alpha_bar, edge_alpha_dot;  // [P,1]
    ad::Tensor node_logprobs;  // [N, node_classes+1], log-softmax rows
    ad::Tensor edge_logprobs;  // [P, edge_classes+1]
    std::vector<int> node_targets, edge_targets;  // clean categories
    double lambda_edge = 5.0;
    double weight_clamp = 1e4;
    int num_graphs = 1;
};

// Noise-conditioned objective, exactly as written: the weighted log-likelihood
// sums carry a leading minus, so values are negative for decreasing schedules.
// Training minimizes the negation by default (TrainConfig::paper_sign flips).
ad::Tensor nelbo_loss(const NelboInputs& in);

// ---- training ----------------------------------------------------------------------

struct TrainRecord {
    std::vector<double> loss;         // optimized objective per step
    std::vector<double> masked_frac;  // mean masked fraction of corrupted batch
    int clamped_weights = 0;          // elements that hit the weight clamp
};

// clean graphs live in class space already (SAD: categories, VQ-SAD: codes).
TrainRecord train_diffusion(DiffusionModel& model, const std::vector<NoisyGraph>& clean,
                            const std::vector<std::optional<double>>& properties,
                            const BondPredicate& is_bond, const std::string& loss_csv,
                            const std::string& checkpoint_dir);

// ---- sampling ----------------------------------------------------------------------

struct SampleConfig {
    int count = 1;
    std::uint64_t seed = 0;
    double guidance = 0.0;                    // classifier-free scale w
    std::optional<double> target_property;    // raw units; z-scored internally
    double temperature = 1.0;                 // category-draw sharpening (<1 sharpens)
    int chain_group = 32;                     // chains advanced in lockstep
    int trace_chains = 0;                     // record embedding traces for the first k chains
};

struct SampleOutput {
    std::vector<NoisyGraph> graphs;       // class space, no mask tokens
    std::vector<EmbeddingTrace> traces;
    int forced_reveals = 0;
};

SampleOutput sample(const DiffusionModel& model, const BondPredicate& is_bond, const SampleConfig& cfg);

// Decode class-space samples back to molecules (identity for SAD).
std::vector<MolecularGraph> samples_to_molecules(const std::vector<NoisyGraph>& samples,
                                                 DiffusionMode mode, const VqVae* tokenizer);

}  // namespace vqsad
