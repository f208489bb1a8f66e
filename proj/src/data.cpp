#include "chorus/data.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace chorus {

using json = nlohmann::json;

namespace {

constexpr int k_dataset_version = 1;

} // namespace

void DatasetSpec::check() const {
    if (n_train < 2 || n_eval < 1 || n_heterogeneous < 0 || grid_rows < 1 || grid_cols < 1 ||
        n_shapes < 1 || n_colors < 1 || candidate_pool_size < 2) {
        throw std::invalid_argument("DatasetSpec: invalid field");
    }
    // each caption must be recoverable without collisions; tiny grids over a
    // tiny vocabulary cannot produce enough distinct captions
    const double distinct = std::pow(static_cast<double>(n_shapes) * n_colors,
                                     static_cast<double>(grid_rows) * grid_cols);
    if (distinct < 4.0 * (n_train + n_eval + n_heterogeneous + candidate_pool_size)) {
        throw std::invalid_argument("DatasetSpec: vocab too small to avoid caption collisions");
    }
}

VisionGrid gen_image(int rows, int cols, int n_shapes, int n_colors, uint64_t seed) {
    std::mt19937_64 rng(seed);
    VisionGrid g;
    g.rows = rows;
    g.cols = cols;
    g.cells.reserve(static_cast<size_t>(rows) * cols);
    for (int i = 0; i < rows * cols; ++i) {
        const int shape = static_cast<int>(rng() % n_shapes);
        const int color = static_cast<int>(rng() % n_colors);
        g.cells.emplace_back(shape, color);
    }
    return g;
}

std::string gen_caption(const VisionGrid & grid, const Vocab & vocab) {
    std::string out;
    for (int r = 0; r < grid.rows; ++r) {
        for (int c = 0; c < grid.cols; ++c) {
            const auto & [shape, color] = grid.cells[static_cast<size_t>(r) * grid.cols + c];
            if (!out.empty()) {
                out += ' ';
            }
            out += vocab.color_name(color) + " " + vocab.shape_name(shape) + " at " +
                   Vocab::cell_name(r, c) + " ;";
        }
    }
    return out;
}

QaPair gen_qa(const VisionGrid & grid, uint64_t seed, const Vocab & vocab) {
    std::mt19937_64 rng(seed);
    QaPair qa;
    if (rng() % 2 == 0) {
        const int cell = static_cast<int>(rng() % (grid.rows * grid.cols));
        const int r = cell / grid.cols;
        const int c = cell % grid.cols;
        qa.g_inst = "what color is the shape at " + Vocab::cell_name(r, c) + " ?";
    } else {
        const int shape = static_cast<int>(rng() % vocab.n_shapes());
        qa.g_inst = "how many " + vocab.shape_name(shape) + " ?";
    }
    qa.answer = answer_by_rule(grid, qa.g_inst, vocab);
    return qa;
}

std::string answer_by_rule(const VisionGrid & grid, const std::string & g_inst,
                           const Vocab & vocab) {
    std::istringstream in(g_inst);
    std::vector<std::string> words;
    std::string w;
    while (in >> w) {
        words.push_back(w);
    }
    if (words.size() == 8 && words[0] == "what" && words[1] == "color") {
        const std::string & cell = words[6];
        for (int r = 0; r < grid.rows; ++r) {
            for (int c = 0; c < grid.cols; ++c) {
                if (Vocab::cell_name(r, c) == cell) {
                    return vocab.color_name(grid.cells[static_cast<size_t>(r) * grid.cols + c].second);
                }
            }
        }
        throw std::invalid_argument("answer_by_rule: unknown cell " + cell);
    }
    if (words.size() == 4 && words[0] == "how" && words[1] == "many") {
        int shape = -1;
        for (int s = 0; s < vocab.n_shapes(); ++s) {
            if (vocab.shape_name(s) == words[2]) {
                shape = s;
            }
        }
        if (shape < 0) {
            throw std::invalid_argument("answer_by_rule: unknown shape " + words[2]);
        }
        int count = 0;
        for (const auto & [s, _] : grid.cells) {
            count += s == shape;
        }
        return std::to_string(count);
    }
    throw std::invalid_argument("answer_by_rule: unrecognized question: " + g_inst);
}

QaPair gen_text_reconstruction(const std::string & caption) {
    if (caption.empty()) {
        throw std::invalid_argument("gen_text_reconstruction: empty caption");
    }
    return {reconstruct_instruction(), caption};
}

Dataset build_dataset(const DatasetSpec & spec) {
    spec.check();
    const Vocab vocab = spec.make_vocab();
    Dataset ds;
    ds.spec = spec;
    std::mt19937_64 rng(spec.seed);

    std::unordered_set<std::string> seen;
    auto fresh_grid = [&](std::string * caption_out) {
        // reject caption collisions so every caption is unique corpus-wide
        for (int attempt = 0; attempt < 1000; ++attempt) {
            VisionGrid g = gen_image(spec.grid_rows, spec.grid_cols, spec.n_shapes, spec.n_colors,
                                     rng());
            std::string cap = gen_caption(g, vocab);
            if (seen.insert(cap).second) {
                *caption_out = std::move(cap);
                return g;
            }
        }
        throw std::runtime_error("build_dataset: cannot generate distinct captions");
    };

    for (int i = 0; i < spec.n_train; ++i) {
        TrainPair p;
        p.grid = fresh_grid(&p.caption);
        p.qa = gen_qa(p.grid, rng(), vocab);
        ds.train.push_back(std::move(p));
    }
    for (int i = 0; i < spec.n_heterogeneous; ++i) {
        HetSample h;
        std::string cap;
        h.grid = fresh_grid(&cap);
        h.qa = gen_qa(h.grid, rng(), vocab);
        ds.het.push_back(std::move(h));
    }
    for (int i = 0; i < spec.n_eval; ++i) {
        EvalItem e;
        e.grid = fresh_grid(&e.caption);
        e.qa = gen_qa(e.grid, rng(), vocab);
        ds.eval_candidates.push_back(e.caption);
        ds.eval.push_back(std::move(e));
    }
    // extra distractor captions when the eval set alone cannot fill a pool
    while (static_cast<int>(ds.eval_candidates.size()) < spec.candidate_pool_size) {
        std::string cap;
        fresh_grid(&cap);
        ds.eval_candidates.push_back(std::move(cap));
    }

    const int n_cand = static_cast<int>(ds.eval_candidates.size());
    for (int i = 0; i < spec.n_eval; ++i) {
        EvalItem & e = ds.eval[i];
        std::set<int> picked = {i};
        while (static_cast<int>(picked.size()) < spec.candidate_pool_size) {
            picked.insert(static_cast<int>(rng() % n_cand));
        }
        e.pool.assign(picked.begin(), picked.end());
        for (size_t j = 0; j < e.pool.size(); ++j) {
            if (e.pool[j] == i) {
                e.positive_index = static_cast<int>(j);
            }
        }
    }
    return ds;
}

// ---- jsonl io ----

namespace {

json grid_to_json(const VisionGrid & g) {
    json cells = json::array();
    for (const auto & [s, c] : g.cells) {
        cells.push_back({s, c});
    }
    return {{"rows", g.rows}, {"cols", g.cols}, {"cells", cells}};
}

VisionGrid grid_from_json(const json & j) {
    VisionGrid g;
    g.rows = j.at("rows");
    g.cols = j.at("cols");
    for (const auto & cell : j.at("cells")) {
        g.cells.emplace_back(cell[0].get<int>(), cell[1].get<int>());
    }
    return g;
}

json qa_to_json(const QaPair & qa) {
    return {{"g_inst", qa.g_inst}, {"answer", qa.answer}};
}

QaPair qa_from_json(const json & j) {
    return {j.at("g_inst"), j.at("answer")};
}

} // namespace

void save_dataset(const Dataset & ds, const std::string & path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open dataset for writing: " + path);
    }
    json header = {
        {"version", k_dataset_version},
        {"spec",
         {{"n_train", ds.spec.n_train},
          {"n_eval", ds.spec.n_eval},
          {"n_heterogeneous", ds.spec.n_heterogeneous},
          {"grid_rows", ds.spec.grid_rows},
          {"grid_cols", ds.spec.grid_cols},
          {"n_shapes", ds.spec.n_shapes},
          {"n_colors", ds.spec.n_colors},
          {"candidate_pool_size", ds.spec.candidate_pool_size},
          {"seed", ds.spec.seed}}},
    };
    out << header.dump() << "\n";
    for (const TrainPair & p : ds.train) {
        json rec = {{"split", "train"},
                    {"grid", grid_to_json(p.grid)},
                    {"caption", p.caption},
                    {"qa", qa_to_json(p.qa)}};
        out << rec.dump() << "\n";
    }
    for (const HetSample & h : ds.het) {
        json rec = {{"split", "het"}, {"grid", grid_to_json(h.grid)}, {"qa", qa_to_json(h.qa)}};
        out << rec.dump() << "\n";
    }
    for (const EvalItem & e : ds.eval) {
        json rec = {{"split", "eval"},
                    {"grid", grid_to_json(e.grid)},
                    {"caption", e.caption},
                    {"qa", qa_to_json(e.qa)},
                    {"pool", e.pool},
                    {"positive_index", e.positive_index}};
        out << rec.dump() << "\n";
    }
    json tail = {{"split", "candidates"}, {"captions", ds.eval_candidates}};
    out << tail.dump() << "\n";
    if (!out) {
        throw std::runtime_error("dataset write failed: " + path);
    }
}

Dataset load_dataset(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open dataset: " + path);
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error("empty dataset file: " + path);
    }
    json header = json::parse(line);
    if (header.at("version") != k_dataset_version) {
        throw std::runtime_error("unsupported dataset version");
    }
    Dataset ds;
    const json & s = header.at("spec");
    ds.spec.n_train = s.at("n_train");
    ds.spec.n_eval = s.at("n_eval");
    ds.spec.n_heterogeneous = s.at("n_heterogeneous");
    ds.spec.grid_rows = s.at("grid_rows");
    ds.spec.grid_cols = s.at("grid_cols");
    ds.spec.n_shapes = s.at("n_shapes");
    ds.spec.n_colors = s.at("n_colors");
    ds.spec.candidate_pool_size = s.at("candidate_pool_size");
    ds.spec.seed = s.at("seed");
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        json rec = json::parse(line);
        const std::string split = rec.at("split");
        if (split == "train") {
            ds.train.push_back({grid_from_json(rec.at("grid")), rec.at("caption"),
                                qa_from_json(rec.at("qa"))});
        } else if (split == "het") {
            ds.het.push_back({grid_from_json(rec.at("grid")), qa_from_json(rec.at("qa"))});
        } else if (split == "eval") {
            EvalItem e;
            e.grid = grid_from_json(rec.at("grid"));
            e.caption = rec.at("caption");
            e.qa = qa_from_json(rec.at("qa"));
            e.pool = rec.at("pool").get<std::vector<int>>();
            e.positive_index = rec.at("positive_index");
            ds.eval.push_back(std::move(e));
        } else if (split == "candidates") {
            ds.eval_candidates = rec.at("captions").get<std::vector<std::string>>();
        } else {
            throw std::runtime_error("unknown dataset record split: " + split);
        }
    }
    return ds;
}

// ---- sample adapters ----

const std::string & represent_instruction() {
    static const std::string s = "represent the given image .";
    return s;
}

const std::string & reconstruct_instruction() {
    static const std::string s = "reconstruct the represented text .";
    return s;
}

Sample query_sample(const VisionGrid & grid) {
    Sample s;
    s.image = grid;
    s.e_inst = represent_instruction();
    s.task = TaskKind::retrieval_query;
    return s;
}

Sample target_sample(const std::string & caption) {
    Sample s;
    s.e_inst = caption;
    s.task = TaskKind::retrieval_target;
    return s;
}

Sample generation_sample(const VisionGrid & grid, const QaPair & qa) {
    Sample s;
    s.image = grid;
    s.e_inst = represent_instruction();
    s.g_inst = qa.g_inst;
    s.answer = qa.answer;
    s.task = TaskKind::generation;
    return s;
}

} // namespace chorus
