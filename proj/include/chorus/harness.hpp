#pragma once

#include "chorus/data.hpp"
#include "chorus/inference.hpp"

#include <map>
#include <string>
#include <vector>

namespace chorus {

struct TaskStats {
    int n = 0;
    int correct = 0;

    double fraction() const { return n ? static_cast<double>(correct) / n : 0.0; }
};

struct EvalReport {
    double precision_at_1 = 0.0;
    double native_accuracy = 0.0;
    double compressed_accuracy = 0.0;
    double retention = 0.0; // compressed/native; valid only if native_accuracy > 0
    std::map<std::string, TaskStats> per_task; // keyed by question template

    std::string to_json() const;
};

// Fraction of queries whose cosine-nearest pool candidate is the positive;
// ties broken toward the lowest candidate index.
double precision_at_1(const std::vector<Mat> & query_embs,
                      const std::vector<std::vector<Mat>> & pools,
                      const std::vector<int> & positive_index);

// Exact match after whitespace normalization.
double answer_accuracy(const std::vector<std::string> & model_outputs,
                       const std::vector<std::string> & gold_answers);

// Head-averaged attention from each chorus query to each vision key at one
// layer, rows renormalized over the vision keys. [k x |V|]
Mat attention_heatmap(const Parameters & params, const Sample & sample, int layer,
                      const Vocab & vocab);

void save_csv(const Mat & m, const std::string & path);
void save_heatmap_svg(const Mat & m, const std::string & path);

struct EvalConfig {
    GenerationConfig gen;
    PoolingMethod pooling = PoolingMethod::Mean;
    int n_threads = 0; // 0 = default_threads()
};

EvalReport evaluate(const Parameters & params, const Dataset & ds, const EvalConfig & cfg);

} // namespace chorus
