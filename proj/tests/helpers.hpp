#pragma once

#include "chorus/data.hpp"
#include "chorus/mask.hpp"
#include "chorus/model.hpp"
#include "chorus/tape.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace chorus::testutil {

inline Mat random_mat(int rows, int cols, std::mt19937_64 & rng, double scale = 1.0) {
    Mat m(rows, cols);
    std::normal_distribution<double> nd(0.0, scale);
    for (double & v : m.a) {
        v = nd(rng);
    }
    return m;
}

// Finite-difference check of one tape op. build must re-derive the output
// from the leaf list; the scalar objective is sum(out * w) for a fixed
// random weighting w.
inline double op_grad_check(const std::function<Var(Tape &, const std::vector<Var> &)> & build,
                            const std::vector<Mat> & inputs, uint64_t seed, double eps = 1e-5) {
    std::mt19937_64 rng(seed);
    auto objective = [&](const std::vector<Mat> & xs, Mat * w_io) {
        Tape t;
        std::vector<Var> leaves;
        for (const Mat & x : xs) {
            leaves.push_back(t.leaf(x));
        }
        const Var out = build(t, leaves);
        if (w_io->rows == 0) {
            std::mt19937_64 wrng(seed ^ 0xabcdef);
            *w_io = random_mat(t.val(out).rows, t.val(out).cols, wrng);
        }
        double s = 0;
        for (size_t i = 0; i < t.val(out).a.size(); ++i) {
            s += t.val(out).a[i] * w_io->a[i];
        }
        return std::pair<double, Var>(s, out);
    };

    Mat w; // fixed after first evaluation
    Tape t;
    std::vector<Var> leaves;
    for (const Mat & x : inputs) {
        leaves.push_back(t.leaf(x));
    }
    const Var out = build(t, leaves);
    {
        std::mt19937_64 wrng(seed ^ 0xabcdef);
        w = random_mat(t.val(out).rows, t.val(out).cols, wrng);
    }
    t.backward_from(out, w);

    double max_rel = 0.0;
    for (size_t li = 0; li < inputs.size(); ++li) {
        for (size_t e = 0; e < inputs[li].a.size(); ++e) {
            std::vector<Mat> xs = inputs;
            xs[li].a[e] += eps;
            Mat wcopy = w;
            const double up = objective(xs, &wcopy).first;
            xs[li].a[e] -= 2 * eps;
            const double dn = objective(xs, &wcopy).first;
            const double cd = (up - dn) / (2 * eps);
            const double an = t.grad(leaves[li]).a[e];
            const double rel = std::abs(an - cd) / std::max({std::abs(an), std::abs(cd), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

// Random segment layout for mask tests; tokens are placeholders. embed_mode
// drops Q/A entirely.
inline PromptLayout random_layout(std::mt19937_64 & rng, bool embed_mode) {
    auto len = [&](int lo, int hi) { return lo + static_cast<int>(rng() % (hi - lo + 1)); };
    std::vector<std::pair<SegmentKind, int>> parts = {
        {SegmentKind::SYS, len(1, 4)}, {SegmentKind::V, len(0, 6)}, {SegmentKind::T, len(0, 5)},
        {SegmentKind::U, len(1, 5)},
    };
    if (!embed_mode) {
        parts.push_back({SegmentKind::SYS, 1});
        parts.push_back({SegmentKind::Q, len(0, 4)});
        parts.push_back({SegmentKind::A, len(0, 4)});
    }
    PromptLayout layout;
    int pos = 0;
    for (const auto & [kind, n] : parts) {
        if (n == 0) {
            if (kind != SegmentKind::SYS) {
                layout.spans.push_back({kind, pos, pos});
            }
            continue;
        }
        layout.spans.push_back({kind, pos, pos + n});
        for (int i = 0; i < n; ++i) {
            layout.tokens.push_back(0);
        }
        pos += n;
    }
    return layout;
}

// Literal transcription of the compressed-mask rule, kept independent of
// the production implementation.
inline bool bruteforce_allowed(const PromptLayout & layout, int i, int j, bool compressed) {
    if (j > i) {
        return false;
    }
    if (!compressed) {
        return true;
    }
    const bool i_qa = layout.in_segment(i, SegmentKind::Q) || layout.in_segment(i, SegmentKind::A);
    const bool j_vt = layout.in_segment(j, SegmentKind::V) || layout.in_segment(j, SegmentKind::T);
    return !(i_qa && j_vt);
}

inline bool mask_equals_bruteforce(const PromptLayout & layout, bool compressed) {
    const AttentionMask m = build_mask(layout, compressed);
    const int n = layout.size();
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (m.allowed(i, j) != bruteforce_allowed(layout, i, j, compressed)) {
                return false;
            }
        }
    }
    return true;
}

// Parses "<color> <shape> at r<i>c<j> ;" clauses back into a grid.
inline VisionGrid parse_caption(const std::string & caption, const Vocab & vocab, int rows,
                                int cols) {
    VisionGrid g;
    g.rows = rows;
    g.cols = cols;
    g.cells.assign(static_cast<size_t>(rows) * cols, {-1, -1});
    std::istringstream in(caption);
    std::string color, shape, at, cell, semi;
    while (in >> color >> shape >> at >> cell >> semi) {
        if (at != "at" || semi != ";") {
            throw std::runtime_error("parse_caption: malformed clause");
        }
        int ci = -1, si = -1;
        for (int c = 0; c < vocab.n_colors(); ++c) {
            if (vocab.color_name(c) == color) {
                ci = c;
            }
        }
        for (int s = 0; s < vocab.n_shapes(); ++s) {
            if (vocab.shape_name(s) == shape) {
                si = s;
            }
        }
        int r = -1, cc = -1;
        if (sscanf(cell.c_str(), "r%dc%d", &r, &cc) != 2 || ci < 0 || si < 0) {
            throw std::runtime_error("parse_caption: bad cell " + cell);
        }
        g.cells[static_cast<size_t>(r) * cols + cc] = {si, ci};
    }
    return g;
}

inline ModelConfig tiny_config(int vocab_size, int k_chorus = 4) {
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.d_model = 16;
    cfg.d_ff = 24;
    cfg.vocab_size = vocab_size;
    cfg.k_chorus = k_chorus;
    cfg.max_seq = 256;
    return cfg;
}

inline DatasetSpec tiny_dataspec() {
    DatasetSpec spec;
    spec.n_train = 32;
    spec.n_eval = 8;
    spec.n_heterogeneous = 8;
    spec.grid_rows = 2;
    spec.grid_cols = 2;
    spec.n_shapes = 3;
    spec.n_colors = 3;
    spec.candidate_pool_size = 6;
    spec.seed = 11;
    return spec;
}

} // namespace chorus::testutil
