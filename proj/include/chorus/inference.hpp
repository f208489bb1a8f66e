#pragma once

#include "chorus/decoder.hpp"
#include "chorus/objectives.hpp"

#include <optional>
#include <string>
#include <vector>

namespace chorus {

struct GenerationConfig {
    int max_new_tokens = 32;
    bool greedy = true;       // temperature sampling when false
    double temperature = 1.0; // sampling only
    uint64_t sample_seed = 0;
    int stop_token = -1; // -1 = vocab EOS

    void check() const;
};

// Embed-mode forward under the compressed mask, pooled chorus states.
Mat encode(const Parameters & params, const Sample & sample, PoolingMethod method,
           const Vocab & vocab);

struct GenerationResult {
    std::vector<int> tokens; // generated answer ids, stop token excluded
    int prefill_entries = 0; // cache entries after the prompt
    int retained_entries = 0; // entries surviving pruning (== prefill for native)
    double cache_percent = 100.0;
};

// Plain causal decoding over the chorus-free prompt, full KV cache.
GenerationResult generate_native(const Parameters & params, const Sample & sample,
                                 const GenerationConfig & gen_cfg, const Vocab & vocab);

// Prefill SYS+V+T+U under the compressed mask, prune V/T cache entries, then
// append the question and decode against the surviving entries only. Cache
// positions keep their pre-pruning indices.
GenerationResult generate_compressed(const Parameters & params, const Sample & sample,
                                     const GenerationConfig & gen_cfg, const Vocab & vocab);

// 100 * k_kept / n_full
double cache_ratio(int k_kept, int n_full);

// ---- embedding export ----

// Binary: uint32 count, uint32 dim, then count*dim little-endian float32.
void save_embeddings(const std::vector<Mat> & embs, const std::string & path);
void save_embeddings_csv(const std::vector<Mat> & embs, const std::string & path);

} // namespace chorus
