#include "chorus/harness.hpp"

#include "chorus/mask.hpp"
#include "chorus/util.hpp"
#include "chorus/vocab.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace chorus {

namespace {

double cosine(const Mat & a, const Mat & b) {
    if (a.a.size() != b.a.size()) {
        throw std::invalid_argument("cosine: dimension mismatch");
    }
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.a.size(); ++i) {
        dot += a.a[i] * b.a[i];
        na += a.a[i] * a.a[i];
        nb += b.a[i] * b.a[i];
    }
    if (na == 0 || nb == 0) {
        throw std::domain_error("cosine: zero-norm embedding");
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::string normalize_ws(const std::string & s) {
    std::istringstream in(s);
    std::string w, out;
    while (in >> w) {
        if (!out.empty()) {
            out += ' ';
        }
        out += w;
    }
    return out;
}

} // namespace

std::string EvalReport::to_json() const {
    nlohmann::json per;
    for (const auto & [task, st] : per_task) {
        per[task] = {{"n", st.n}, {"correct", st.correct}, {"accuracy", st.fraction()}};
    }
    nlohmann::json j = {{"precision_at_1", precision_at_1},
                        {"native_accuracy", native_accuracy},
                        {"compressed_accuracy", compressed_accuracy},
                        {"retention", retention},
                        {"per_task", per}};
    return j.dump(2);
}

double precision_at_1(const std::vector<Mat> & query_embs,
                      const std::vector<std::vector<Mat>> & pools,
                      const std::vector<int> & positive_index) {
    if (query_embs.size() != pools.size() || pools.size() != positive_index.size()) {
        throw std::invalid_argument("precision_at_1: misaligned inputs");
    }
    if (query_embs.empty()) {
        throw std::invalid_argument("precision_at_1: no queries");
    }
    int hits = 0;
    for (size_t q = 0; q < query_embs.size(); ++q) {
        const auto & pool = pools[q];
        if (pool.empty()) {
            throw std::invalid_argument("precision_at_1: empty pool");
        }
        int best = 0;
        double best_cos = cosine(query_embs[q], pool[0]);
        for (int c = 1; c < static_cast<int>(pool.size()); ++c) {
            const double s = cosine(query_embs[q], pool[c]);
            if (s > best_cos) {
                best_cos = s;
                best = c;
            }
        }
        hits += best == positive_index[q];
    }
    return static_cast<double>(hits) / query_embs.size();
}

double answer_accuracy(const std::vector<std::string> & model_outputs,
                       const std::vector<std::string> & gold_answers) {
    if (model_outputs.size() != gold_answers.size()) {
        throw std::invalid_argument("answer_accuracy: length mismatch");
    }
    if (model_outputs.empty()) {
        throw std::invalid_argument("answer_accuracy: empty lists");
    }
    int hits = 0;
    for (size_t i = 0; i < model_outputs.size(); ++i) {
        hits += normalize_ws(model_outputs[i]) == normalize_ws(gold_answers[i]);
    }
    return static_cast<double>(hits) / model_outputs.size();
}

Mat attention_heatmap(const Parameters & params, const Sample & sample, int layer,
                      const Vocab & vocab) {
    if (layer < 0 || layer >= params.config.num_layers) {
        throw std::out_of_range("attention_heatmap: layer out of range");
    }
    const PromptLayout layout = assemble(sample, AssembleMode::embed, params.config, vocab);
    const Span * v = layout.find(SegmentKind::V);
    const Span * u = layout.find(SegmentKind::U);
    if (!v || v->len() == 0) {
        throw std::invalid_argument("attention_heatmap: empty vision span");
    }
    if (!u || u->len() == 0) {
        throw std::invalid_argument("attention_heatmap: no chorus span");
    }
    std::vector<int> positions(layout.size());
    for (int i = 0; i < layout.size(); ++i) {
        positions[i] = i;
    }
    AttnCapture cap;
    cap.layer = layer;
    forward(params, layout.tokens, positions, build_mask(layout, true), &cap);
    Mat hm(u->len(), v->len());
    for (int r = 0; r < u->len(); ++r) {
        double z = 0;
        for (int c = 0; c < v->len(); ++c) {
            z += cap.probs.at(u->start + r, v->start + c);
        }
        if (z <= 0) {
            throw std::domain_error("attention_heatmap: chorus row has no vision mass");
        }
        for (int c = 0; c < v->len(); ++c) {
            hm.at(r, c) = cap.probs.at(u->start + r, v->start + c) / z;
        }
    }
    return hm;
}

void save_csv(const Mat & m, const std::string & path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open csv: " + path);
    }
    for (int i = 0; i < m.rows; ++i) {
        for (int j = 0; j < m.cols; ++j) {
            out << (j ? "," : "") << m.at(i, j);
        }
        out << "\n";
    }
    if (!out) {
        throw std::runtime_error("csv write failed: " + path);
    }
}

void save_heatmap_svg(const Mat & m, const std::string & path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open svg: " + path);
    }
    double mx = 0;
    for (double v : m.a) {
        mx = std::max(mx, v);
    }
    const int cell = 16;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << m.cols * cell << "\" height=\""
        << m.rows * cell << "\">\n";
    for (int i = 0; i < m.rows; ++i) {
        for (int j = 0; j < m.cols; ++j) {
            const double t = mx > 0 ? m.at(i, j) / mx : 0.0;
            const int shade = static_cast<int>(255.0 * (1.0 - t));
            out << "<rect x=\"" << j * cell << "\" y=\"" << i * cell << "\" width=\"" << cell
                << "\" height=\"" << cell << "\" fill=\"rgb(255," << shade << "," << shade
                << ")\"/>\n";
        }
    }
    out << "</svg>\n";
    if (!out) {
        throw std::runtime_error("svg write failed: " + path);
    }
}

EvalReport evaluate(const Parameters & params, const Dataset & ds, const EvalConfig & cfg) {
    if (ds.eval.empty()) {
        throw std::invalid_argument("evaluate: empty eval split");
    }
    const Vocab vocab = ds.spec.make_vocab();
    const int n_threads = cfg.n_threads > 0 ? cfg.n_threads : default_threads();
    const int n = static_cast<int>(ds.eval.size());

    // retrieval: queries in parallel, candidates embedded once
    std::vector<Mat> cand_embs(ds.eval_candidates.size());
    parallel_for(ds.eval_candidates.size(), n_threads, [&](size_t i) {
        cand_embs[i] = encode(params, target_sample(ds.eval_candidates[i]), cfg.pooling, vocab);
    });
    std::vector<Mat> query_embs(n);
    std::vector<std::string> native_out(n), compressed_out(n), gold(n);
    parallel_for(static_cast<size_t>(n), n_threads, [&](size_t i) {
        const EvalItem & e = ds.eval[i];
        query_embs[i] = encode(params, query_sample(e.grid), cfg.pooling, vocab);
        Sample s = generation_sample(e.grid, e.qa);
        native_out[i] = vocab.decode(generate_native(params, s, cfg.gen, vocab).tokens);
        compressed_out[i] = vocab.decode(generate_compressed(params, s, cfg.gen, vocab).tokens);
    });

    std::vector<std::vector<Mat>> pools(n);
    std::vector<int> pos(n);
    for (int i = 0; i < n; ++i) {
        for (int c : ds.eval[i].pool) {
            pools[i].push_back(cand_embs[c]);
        }
        pos[i] = ds.eval[i].positive_index;
        gold[i] = ds.eval[i].qa.answer;
    }

    EvalReport rep;
    rep.precision_at_1 = precision_at_1(query_embs, pools, pos);
    rep.native_accuracy = answer_accuracy(native_out, gold);
    rep.compressed_accuracy = answer_accuracy(compressed_out, gold);
    rep.retention = rep.native_accuracy > 0 ? rep.compressed_accuracy / rep.native_accuracy : 0.0;
    for (int i = 0; i < n; ++i) {
        const std::string task =
            ds.eval[i].qa.g_inst.rfind("how many", 0) == 0 ? "count" : "color";
        TaskStats & native_st = rep.per_task["native/" + task];
        native_st.n += 1;
        native_st.correct += normalize_ws(native_out[i]) == normalize_ws(gold[i]);
        TaskStats & comp_st = rep.per_task["compressed/" + task];
        comp_st.n += 1;
        comp_st.correct += normalize_ws(compressed_out[i]) == normalize_ws(gold[i]);
    }
    return rep;
}

} // namespace chorus
