#pragma once

#include "chorus/model.hpp"
#include "chorus/prompt.hpp"

#include <random>
#include <vector>

namespace chorus {

struct ScoringConfig {
    double temperature = 0.02;
};

struct LossWeights {
    double alpha_r = 1.0;
    double alpha_g = 0.5;
};

struct GateConfig {
    double p = 0.5; // probability of compressed conditioning (z = 1)
    uint64_t seed = 0;
};

// Serialized Bernoulli gate owned by the training loop.
class GateSampler {
public:
    explicit GateSampler(const GateConfig & cfg);
    int sample(); // 1 with probability p

private:
    double p_;
    std::mt19937_64 rng_;
};

enum class PoolingMethod { Mean, MLP, AttnQuery };

PoolingMethod pooling_from_string(const std::string & s);
const char * pooling_name(PoolingMethod m);

// ---- plain (inference-side) ----

// Reduces the k chorus rows of hidden into one d_model vector.
Mat pool_chorus(const Mat & hidden, const PromptLayout & layout, PoolingMethod method,
                const Parameters & params);

// phi = exp(cos(hq, ht) / tau); losses must consume it in log domain.
double score_phi(const Mat & h_q, const Mat & h_t, double tau);
double log_score_phi(const Mat & h_q, const Mat & h_t, double tau);

// Mean over i of -log softmax_i(cos-sim row / tau); row i of targets is the
// positive for query i.
double info_nce(const std::vector<Mat> & queries, const std::vector<Mat> & targets, double tau);

// Mean next-token cross-entropy over the answer span; z selects the
// compressed (z=1) or plain causal (z=0) conditioning mask.
double lm_loss(const Parameters & params, const PromptLayout & joint_layout, int z);

// ---- tape (training-side) ----

Var tape_pool_chorus(Tape & tape, const BoundParams & bp, Var hidden, const PromptLayout & layout,
                     PoolingMethod method);
Var tape_encode(Tape & tape, const BoundParams & bp, const PromptLayout & layout,
                PoolingMethod method);
Var tape_info_nce(Tape & tape, const std::vector<Var> & queries, const std::vector<Var> & targets,
                  double tau);
Var tape_lm_loss(Tape & tape, const BoundParams & bp, const PromptLayout & joint_layout, int z);

// ---- batched losses with gradients ----

struct GenSample {
    PromptLayout layout; // joint mode
    int z = 0;
};

// Returns L_r and accumulates weight * dL_r/dparams. Queries/targets are
// embed-mode layouts; embeddings are pooled then cosine-scored.
double retrieval_loss_and_grad(const Parameters & params, const std::vector<PromptLayout> & queries,
                               const std::vector<PromptLayout> & targets, double tau,
                               PoolingMethod pooling, double weight, Parameters * grads,
                               int n_threads);

// Returns L_g (sample-mean of per-sample token-mean cross-entropies) and
// accumulates weight * dL_g/dparams.
double generation_loss_and_grad(const Parameters & params, const std::vector<GenSample> & samples,
                                double weight, Parameters * grads, int n_threads);

struct TotalLossParts {
    double retrieval = 0.0;  // L_r
    double generation = 0.0; // L_g
    double total = 0.0;      // alpha_r * L_r + alpha_g * L_g
};

// alpha_r * L_r + alpha_g * L_g over explicit batches; either side may be
// empty (contributes 0), not both. grads may be null for value-only use.
TotalLossParts total_loss(const Parameters & params, const std::vector<PromptLayout> & queries,
                          const std::vector<PromptLayout> & targets,
                          const std::vector<GenSample> & gen_samples, const LossWeights & weights,
                          const ScoringConfig & scoring, PoolingMethod pooling, Parameters * grads,
                          int n_threads);

} // namespace chorus
