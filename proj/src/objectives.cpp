#include "chorus/objectives.hpp"

#include "chorus/util.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace chorus {

GateSampler::GateSampler(const GateConfig & cfg) : p_(cfg.p), rng_(cfg.seed) {
    if (p_ < 0.0 || p_ > 1.0) {
        throw std::invalid_argument("GateSampler: p must lie in [0, 1]");
    }
}

int GateSampler::sample() {
    const double u = (static_cast<double>(rng_() >> 11)) * 0x1.0p-53; // [0, 1)
    return u < p_ ? 1 : 0;
}

PoolingMethod pooling_from_string(const std::string & s) {
    if (s == "mean") {
        return PoolingMethod::Mean;
    }
    if (s == "mlp") {
        return PoolingMethod::MLP;
    }
    if (s == "attn_query") {
        return PoolingMethod::AttnQuery;
    }
    throw std::invalid_argument("unknown pooling method: " + s);
}

const char * pooling_name(PoolingMethod m) {
    switch (m) {
        case PoolingMethod::Mean:      return "mean";
        case PoolingMethod::MLP:       return "mlp";
        case PoolingMethod::AttnQuery: return "attn_query";
    }
    return "?";
}

namespace {

const Span & chorus_span(const PromptLayout & layout) {
    const Span * u = layout.find(SegmentKind::U);
    if (!u || u->len() == 0) {
        throw std::invalid_argument("layout has no chorus span");
    }
    return *u;
}

double dot(const Mat & a, const Mat & b) {
    double s = 0.0;
    for (size_t i = 0; i < a.a.size(); ++i) {
        s += a.a[i] * b.a[i];
    }
    return s;
}

double cosine(const Mat & a, const Mat & b) {
    const double na = std::sqrt(dot(a, a));
    const double nb = std::sqrt(dot(b, b));
    if (na < 1e-30 || nb < 1e-30) {
        throw std::domain_error("cosine: zero-norm vector");
    }
    return dot(a, b) / (na * nb);
}

} // namespace

Mat pool_chorus(const Mat & hidden, const PromptLayout & layout, PoolingMethod method,
                const Parameters & params) {
    const Span & u = chorus_span(layout);
    const int d = hidden.cols;
    const int k = u.len();
    Mat out(1, d);
    switch (method) {
        case PoolingMethod::Mean: {
            for (int i = u.start; i < u.end; ++i) {
                for (int j = 0; j < d; ++j) {
                    out.at(0, j) += hidden.at(i, j) / k;
                }
            }
            break;
        }
        case PoolingMethod::MLP: {
            const Mat & w1 = params.tensor("pool.mlp_w1");
            const Mat & w2 = params.tensor("pool.mlp_w2");
            for (int i = u.start; i < u.end; ++i) {
                std::vector<double> h(d, 0.0);
                for (int c = 0; c < d; ++c) {
                    const double x = hidden.at(i, c);
                    for (int j = 0; j < d; ++j) {
                        h[j] += x * w1.at(c, j);
                    }
                }
                for (double & v : h) {
                    v = v / (1.0 + std::exp(-v));
                }
                for (int c = 0; c < d; ++c) {
                    for (int j = 0; j < d; ++j) {
                        out.at(0, j) += h[c] * w2.at(c, j) / k;
                    }
                }
            }
            break;
        }
        case PoolingMethod::AttnQuery: {
            const Mat & q = params.tensor("pool.attn_q");
            const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));
            std::vector<double> alpha(k);
            double mx = -1e300;
            for (int i = 0; i < k; ++i) {
                double s = 0.0;
                for (int j = 0; j < d; ++j) {
                    s += hidden.at(u.start + i, j) * q.at(0, j);
                }
                alpha[i] = s * inv_sqrt;
                mx = std::max(mx, alpha[i]);
            }
            double z = 0.0;
            for (double & a : alpha) {
                a = std::exp(a - mx);
                z += a;
            }
            for (int i = 0; i < k; ++i) {
                for (int j = 0; j < d; ++j) {
                    out.at(0, j) += alpha[i] / z * hidden.at(u.start + i, j);
                }
            }
            break;
        }
    }
    return out;
}

double log_score_phi(const Mat & h_q, const Mat & h_t, double tau) {
    if (tau <= 0.0) {
        throw std::invalid_argument("score: temperature must be positive");
    }
    return cosine(h_q, h_t) / tau;
}

double score_phi(const Mat & h_q, const Mat & h_t, double tau) {
    return std::exp(log_score_phi(h_q, h_t, tau));
}

double info_nce(const std::vector<Mat> & queries, const std::vector<Mat> & targets, double tau) {
    const int n = static_cast<int>(queries.size());
    if (n < 2 || targets.size() != queries.size()) {
        throw std::invalid_argument("info_nce: need N >= 2 aligned pairs");
    }
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        std::vector<double> row(n);
        double mx = -1e300;
        for (int j = 0; j < n; ++j) {
            row[j] = cosine(queries[i], targets[j]) / tau;
            mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (double s : row) {
            z += std::exp(s - mx);
        }
        loss += std::log(z) + mx - row[i];
    }
    return loss / n;
}

double lm_loss(const Parameters & params, const PromptLayout & joint_layout, int z) {
    const std::vector<int> pos = answer_positions(joint_layout);
    AttentionMask mask = build_mask(joint_layout, z == 1);
    std::vector<int> positions(joint_layout.size());
    for (int i = 0; i < joint_layout.size(); ++i) {
        positions[i] = i;
    }
    ForwardOutput out = forward(params, joint_layout.tokens, positions, mask);
    double loss = 0.0;
    for (int p : pos) {
        const int target = joint_layout.tokens[p + 1];
        double mx = out.logits.at(p, 0);
        for (int j = 1; j < out.logits.cols; ++j) {
            mx = std::max(mx, out.logits.at(p, j));
        }
        double zsum = 0.0;
        for (int j = 0; j < out.logits.cols; ++j) {
            zsum += std::exp(out.logits.at(p, j) - mx);
        }
        loss += std::log(zsum) + mx - out.logits.at(p, target);
    }
    return loss / static_cast<double>(pos.size());
}

// ---- tape side ----

Var tape_pool_chorus(Tape & tape, const BoundParams & bp, Var hidden, const PromptLayout & layout,
                     PoolingMethod method) {
    const Span & u = chorus_span(layout);
    Var rows = slice_rows(tape, hidden, u.start, u.end);
    switch (method) {
        case PoolingMethod::Mean:
            return mean_rows(tape, rows);
        case PoolingMethod::MLP: {
            Var h = silu(tape, matmul(tape, rows, bp.var("pool.mlp_w1")));
            return mean_rows(tape, matmul(tape, h, bp.var("pool.mlp_w2")));
        }
        case PoolingMethod::AttnQuery:
            return attn_pool(tape, rows, bp.var("pool.attn_q"));
    }
    throw std::logic_error("unreachable");
}

Var tape_encode(Tape & tape, const BoundParams & bp, const PromptLayout & layout,
                PoolingMethod method) {
    std::vector<int> positions(layout.size());
    for (int i = 0; i < layout.size(); ++i) {
        positions[i] = i;
    }
    AttentionMask mask = build_mask(layout, /*compressed=*/true);
    Var hidden = tape_hidden(tape, bp, layout.tokens, positions, mask);
    return tape_pool_chorus(tape, bp, hidden, layout, method);
}

Var tape_info_nce(Tape & tape, const std::vector<Var> & queries, const std::vector<Var> & targets,
                  double tau) {
    const int n = static_cast<int>(queries.size());
    if (n < 2 || targets.size() != queries.size()) {
        throw std::invalid_argument("info_nce: need N >= 2 aligned pairs");
    }
    if (tau <= 0.0) {
        throw std::invalid_argument("info_nce: temperature must be positive");
    }
    Var qn = l2norm_rows(tape, concat_rows(tape, queries));
    Var tn = l2norm_rows(tape, concat_rows(tape, targets));
    Var sim = scale(tape, matmul(tape, qn, tn, /*trans_b=*/true), 1.0 / tau);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        labels[i] = i;
    }
    return softmax_cross_entropy(tape, sim, labels);
}

Var tape_lm_loss(Tape & tape, const BoundParams & bp, const PromptLayout & joint_layout, int z) {
    const std::vector<int> pos = answer_positions(joint_layout);
    AttentionMask mask = build_mask(joint_layout, z == 1);
    std::vector<int> positions(joint_layout.size());
    for (int i = 0; i < joint_layout.size(); ++i) {
        positions[i] = i;
    }
    Var hidden = tape_hidden(tape, bp, joint_layout.tokens, positions, mask);
    Var rows = gather_rows(tape, hidden, pos);
    Var logits = tape_logits(tape, bp, rows);
    std::vector<int> targets(pos.size());
    for (size_t i = 0; i < pos.size(); ++i) {
        targets[i] = joint_layout.tokens[pos[i] + 1];
    }
    return softmax_cross_entropy(tape, logits, targets);
}

// ---- batched losses ----

namespace {

// Per-sample forward tapes are retained so the contrastive backward can be
// pushed through each of them independently (and in parallel).
struct SampleTape {
    std::unique_ptr<Tape> tape;
    BoundParams bp;
    Var out = -1;
};

} // namespace

double retrieval_loss_and_grad(const Parameters & params, const std::vector<PromptLayout> & queries,
                               const std::vector<PromptLayout> & targets, double tau,
                               PoolingMethod pooling, double weight, Parameters * grads,
                               int n_threads) {
    const int n = static_cast<int>(queries.size());
    if (n < 2 || targets.size() != queries.size()) {
        throw std::invalid_argument("retrieval batch needs N >= 2 aligned pairs");
    }
    std::vector<SampleTape> tapes(2 * n);
    parallel_for(2 * n, n_threads, [&](int i) {
        const PromptLayout & layout = i < n ? queries[i] : targets[i - n];
        SampleTape & st = tapes[i];
        st.tape = std::make_unique<Tape>();
        st.bp = bind(*st.tape, params);
        st.out = tape_encode(*st.tape, st.bp, layout, pooling);
    });

    Tape master;
    std::vector<Var> q_vars(n), t_vars(n);
    for (int i = 0; i < n; ++i) {
        q_vars[i] = master.leaf(tapes[i].tape->val(tapes[i].out));
        t_vars[i] = master.leaf(tapes[n + i].tape->val(tapes[n + i].out));
    }
    Var loss = tape_info_nce(master, q_vars, t_vars, tau);
    const double value = master.val(loss).at(0, 0);
    if (!std::isfinite(value)) {
        throw std::domain_error("retrieval loss is not finite");
    }
    if (grads) {
        Mat seed(1, 1);
        seed.at(0, 0) = weight;
        master.backward_from(loss, seed);
        parallel_for(2 * n, n_threads, [&](int i) {
            const Var ext = i < n ? q_vars[i] : t_vars[i - n];
            tapes[i].tape->backward_from(tapes[i].out, master.grad(ext));
        });
        for (int i = 0; i < 2 * n; ++i) {
            read_grads(*tapes[i].tape, tapes[i].bp, *grads);
        }
    }
    return value;
}

double generation_loss_and_grad(const Parameters & params, const std::vector<GenSample> & samples,
                                double weight, Parameters * grads, int n_threads) {
    const int n = static_cast<int>(samples.size());
    if (n == 0) {
        throw std::invalid_argument("generation batch is empty");
    }
    std::vector<SampleTape> tapes(n);
    parallel_for(n, n_threads, [&](int i) {
        SampleTape & st = tapes[i];
        st.tape = std::make_unique<Tape>();
        st.bp = bind(*st.tape, params);
        st.out = tape_lm_loss(*st.tape, st.bp, samples[i].layout, samples[i].z);
        if (grads) {
            Mat seed(1, 1);
            seed.at(0, 0) = weight / n; // sample-mean reduction
            st.tape->backward_from(st.out, seed);
        }
    });
    double value = 0.0;
    for (int i = 0; i < n; ++i) {
        const double li = tapes[i].tape->val(tapes[i].out).at(0, 0);
        if (!std::isfinite(li)) {
            throw std::domain_error("generation loss is not finite");
        }
        value += li / n;
        if (grads) {
            read_grads(*tapes[i].tape, tapes[i].bp, *grads);
        }
    }
    return value;
}

TotalLossParts total_loss(const Parameters & params, const std::vector<PromptLayout> & queries,
                          const std::vector<PromptLayout> & targets,
                          const std::vector<GenSample> & gen_samples, const LossWeights & weights,
                          const ScoringConfig & scoring, PoolingMethod pooling, Parameters * grads,
                          int n_threads) {
    if (weights.alpha_r < 0.0 || weights.alpha_g < 0.0 ||
        (weights.alpha_r == 0.0 && weights.alpha_g == 0.0)) {
        throw std::invalid_argument("loss weights must be nonnegative and not both zero");
    }
    if (queries.empty() && gen_samples.empty()) {
        throw std::invalid_argument("total_loss: both components empty");
    }
    TotalLossParts parts;
    if (!queries.empty() && weights.alpha_r > 0.0) {
        parts.retrieval = retrieval_loss_and_grad(params, queries, targets, scoring.temperature,
                                                  pooling, weights.alpha_r, grads, n_threads);
    }
    if (!gen_samples.empty() && weights.alpha_g > 0.0) {
        parts.generation = generation_loss_and_grad(params, gen_samples, weights.alpha_g, grads,
                                                    n_threads);
    }
    parts.total = weights.alpha_r * parts.retrieval + weights.alpha_g * parts.generation;
    return parts;
}

} // namespace chorus
