#pragma once

#include "chorus/mask.hpp"
#include "chorus/mat.hpp"
#include "chorus/tape.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace chorus {

struct ModelConfig {
    int num_layers = 2;
    int num_heads = 4;
    int d_model = 64;
    int d_ff = 128;
    int vocab_size = 0;
    int k_chorus = 16;
    int max_seq = 512;
    double rope_base = 10000.0;
    // Divergence flag: keep [eInst] in native-mode prompts (dropped by default).
    bool native_keep_einst = false;

    void check() const; // throws on invalid dimensions
};

// Trainable weights, fixed tensor order. Norm gains init to 1, everything
// else scaled-normal. Embedding and output head are tied.
struct Parameters {
    ModelConfig config;
    std::vector<std::pair<std::string, Mat>> tensors;

    Mat & tensor(const std::string & name);
    const Mat & tensor(const std::string & name) const;
    size_t n_scalars() const;
};

Parameters init_params(const ModelConfig & config, uint64_t seed);
Parameters zeros_like(const Parameters & p);

struct ForwardOutput {
    Mat hidden; // [seq x d_model] final-layer states
    Mat logits; // [seq x vocab_size]
};

// Optional capture of head-averaged attention weights at one layer.
struct AttnCapture {
    int layer = 0;
    Mat probs; // [seq x seq], filled by forward
};

ForwardOutput forward(const Parameters & params, const std::vector<int> & tokens,
                      const std::vector<int> & positions, const AttentionMask & mask,
                      AttnCapture * capture = nullptr);

// ---- training-side (autodiff) forward ----

struct BoundParams {
    const Parameters * params = nullptr;
    std::vector<Var> vars; // aligned with params->tensors

    Var var(const std::string & name) const;
};

BoundParams bind(Tape & tape, const Parameters & params);

// Final-layer hidden states [seq x d_model] on the tape.
Var tape_hidden(Tape & tape, const BoundParams & bp, const std::vector<int> & tokens,
                const std::vector<int> & positions, const AttentionMask & mask);
// logits = hidden @ tok_emb^T (tied head)
Var tape_logits(Tape & tape, const BoundParams & bp, Var hidden);

// Accumulates tape gradients of the bound parameter leaves into grads.
void read_grads(Tape & tape, const BoundParams & bp, Parameters & grads);

// ---- gradient checking ----

// loss(params) must be deterministic. analytic holds dloss/dparams. Returns
// max over sampled entries of |analytic - central_diff| / max(|a|,|cd|,1e-8).
double check_gradients(const Parameters & params, const std::function<double(const Parameters &)> & loss,
                       const Parameters & analytic, double epsilon, int samples_per_tensor,
                       uint64_t seed);

// ---- checkpoint io (flat binary, float32 tensors) ----

void save_checkpoint(const Parameters & params, const std::string & path);
Parameters load_checkpoint(const std::string & path);

} // namespace chorus
