#pragma once

#include "chorus/data.hpp"
#include "chorus/model.hpp"
#include "chorus/objectives.hpp"

#include <map>
#include <string>
#include <vector>

namespace chorus {

struct TrainConfig {
    ModelConfig model;

    int steps = 2000;
    int warmup_steps = 100;
    double lr_max = 3e-3;
    double lr_min = 0.0;
    int retrieval_batch = 64;
    int gen_batch = 8; // per mixing source: homogeneous and heterogeneous
    int n_subbatches = 1;

    LossWeights weights;
    GateConfig gate;
    ScoringConfig scoring;
    PoolingMethod pooling = PoolingMethod::Mean;

    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    uint64_t seed = 0;
    int checkpoint_every = 500; // 0 disables periodic checkpoints
    int n_threads = 0;          // 0 = default_threads()

    void check() const;
};

struct OptimizerState {
    Parameters m;
    Parameters v;
    int64_t step = 0;
};

OptimizerState init_optimizer(const Parameters & params);

// One batch as (dataset_index, item_index) pairs; each batch is a
// concatenation of n single-source sub-batches of size batch_size / n.
using IndexBatch = std::vector<std::pair<int, int>>;

std::vector<IndexBatch> interleaved_batches(const std::vector<int> & dataset_sizes, int batch_size,
                                            int n, uint64_t seed);

// Linear 0 -> lr_max over warmup, then cosine lr_max -> lr_min.
double lr_schedule(int step, const TrainConfig & cfg);

// Bias-corrected Adam with decoupled weight decay applied before the delta.
void optimizer_step(Parameters & params, const Parameters & grads, OptimizerState & state,
                    double lr, const TrainConfig & cfg);

struct StepBatch {
    std::vector<PromptLayout> queries;
    std::vector<PromptLayout> targets;
    std::vector<GenSample> gen;
};

struct StepMetrics {
    int step = 0;
    double lr = 0.0;
    double l_r = 0.0;
    double l_g = 0.0;
    double total = 0.0;
    double z_rate = 0.0; // fraction of generation samples conditioned compressed
};

StepMetrics train_step(Parameters & params, OptimizerState & state, const StepBatch & batch,
                       const TrainConfig & cfg, int step);

struct TrainResult {
    Parameters params;
    std::vector<StepMetrics> metrics;
};

// Deterministic end-to-end loop. out_dir may be empty (no files written);
// otherwise writes metrics.jsonl, periodic ckpt-<step>.bin and final.bin.
TrainResult train(const TrainConfig & cfg, const Dataset & ds, const std::string & out_dir);

// ---- key-value config files: "key = value", '#' comments ----

std::map<std::string, std::string> parse_kv_file(const std::string & path);
void apply_train_config(const std::map<std::string, std::string> & kv, TrainConfig & cfg);
void apply_dataset_spec(const std::map<std::string, std::string> & kv, DatasetSpec & spec);

} // namespace chorus
