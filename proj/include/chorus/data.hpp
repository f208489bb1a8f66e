#pragma once

#include "chorus/prompt.hpp"
#include "chorus/vocab.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace chorus {

struct DatasetSpec {
    int n_train = 2048;
    int n_eval = 200;
    int n_heterogeneous = 256;
    int grid_rows = 4;
    int grid_cols = 4;
    int n_shapes = 4;
    int n_colors = 4;
    int candidate_pool_size = 100;
    uint64_t seed = 0;

    void check() const;
    Vocab make_vocab() const { return Vocab(n_shapes, n_colors, grid_rows, grid_cols); }
};

struct QaPair {
    std::string g_inst;
    std::string answer;
};

struct TrainPair {
    VisionGrid grid;
    std::string caption;
    QaPair qa; // homogeneous generation label, rule-derived from the grid
};

struct HetSample {
    VisionGrid grid;
    QaPair qa;
};

struct EvalItem {
    VisionGrid grid;
    std::string caption;
    QaPair qa;
    std::vector<int> pool;  // indices into Dataset::eval_candidates
    int positive_index = 0; // position of the gold caption inside pool
};

struct Dataset {
    DatasetSpec spec;
    std::vector<TrainPair> train;
    std::vector<HetSample> het;
    std::vector<EvalItem> eval;
    std::vector<std::string> eval_candidates; // caption pool, eval captions first
};

VisionGrid gen_image(int rows, int cols, int n_shapes, int n_colors, uint64_t seed);
// "<color> <shape> at r<i>c<j> ;" per cell in row-major order; injective.
std::string gen_caption(const VisionGrid & grid, const Vocab & vocab);
QaPair gen_qa(const VisionGrid & grid, uint64_t seed, const Vocab & vocab);
QaPair gen_text_reconstruction(const std::string & caption);

// Independent rule evaluator: answers a generated question from the grid.
std::string answer_by_rule(const VisionGrid & grid, const std::string & g_inst, const Vocab & vocab);

Dataset build_dataset(const DatasetSpec & spec);

void save_dataset(const Dataset & ds, const std::string & path);
Dataset load_dataset(const std::string & path);

// ---- sample adapters ----

const std::string & represent_instruction(); // "represent the given image ."
const std::string & reconstruct_instruction();

Sample query_sample(const VisionGrid & grid);
Sample target_sample(const std::string & caption);
// joint-mode generation sample: image, represent-instruction, QA
Sample generation_sample(const VisionGrid & grid, const QaPair & qa);

} // namespace chorus
