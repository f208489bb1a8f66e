#pragma once

#include "chorus/model.hpp"
#include "chorus/prompt.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace chorus {

// Inference path templated on the scalar type so the same code can run in
// single or double precision. All reductions use a fixed ascending order, so
// incremental decoding reproduces the full forward bit-for-bit per precision.

template <typename T>
struct TenT {
    int rows = 0;
    int cols = 0;
    std::vector<T> a;

    TenT() = default;
    TenT(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, T(0)) {}
    T & at(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    T at(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }
    const T * row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }
    T * row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
};

template <typename T>
struct WeightsT {
    ModelConfig config;
    std::vector<std::pair<std::string, TenT<T>>> tensors;

    const TenT<T> & tensor(const std::string & name) const {
        for (const auto & [n, t] : tensors) {
            if (n == name) {
                return t;
            }
        }
        throw std::out_of_range("no tensor " + name);
    }
};

template <typename T>
WeightsT<T> convert_weights(const Parameters & p) {
    WeightsT<T> w;
    w.config = p.config;
    w.tensors.reserve(p.tensors.size());
    for (const auto & [name, m] : p.tensors) {
        TenT<T> t(m.rows, m.cols);
        for (size_t i = 0; i < m.a.size(); ++i) {
            t.a[i] = static_cast<T>(m.a[i]);
        }
        w.tensors.emplace_back(name, std::move(t));
    }
    return w;
}

namespace detail {

// out[r] = x[r] * W (x: [n x k], W: [k x m])
template <typename T>
void matmul_rows(const TenT<T> & x, const TenT<T> & w, TenT<T> & out) {
    out = TenT<T>(x.rows, w.cols);
    for (int i = 0; i < x.rows; ++i) {
        for (int k = 0; k < x.cols; ++k) {
            const T xv = x.at(i, k);
            const T * wr = w.row(k);
            T * orow = out.row(i);
            for (int j = 0; j < w.cols; ++j) {
                orow[j] += xv * wr[j];
            }
        }
    }
}

template <typename T>
void rmsnorm_row(const T * x, const T * gain, T * out, int d) {
    T ss = 0;
    for (int j = 0; j < d; ++j) {
        ss += x[j] * x[j];
    }
    const T r = std::sqrt(ss / d + T(1e-6));
    for (int j = 0; j < d; ++j) {
        out[j] = x[j] / r * gain[j];
    }
}

template <typename T>
void rotary_row(T * x, int position, int num_heads, int d_model, double base) {
    const int d_head = d_model / num_heads;
    for (int h = 0; h < num_heads; ++h) {
        T * v = x + h * d_head;
        for (int p = 0; p < d_head / 2; ++p) {
            const T theta = static_cast<T>(position * std::pow(base, -2.0 * p / d_head));
            const T c = std::cos(theta);
            const T s = std::sin(theta);
            const T x0 = v[2 * p];
            const T x1 = v[2 * p + 1];
            v[2 * p]     = x0 * c - x1 * s;
            v[2 * p + 1] = x0 * s + x1 * c;
        }
    }
}

// Attention of one query row over keys/values [0, n_keys) of one head.
// visible(j) gates the keys; throws if nothing is visible.
template <typename T, typename Vis>
void attend_row(const T * q, const TenT<T> & keys, const TenT<T> & vals, int n_keys, int head_off,
                int d_head, Vis visible, T * out, T * probs_out = nullptr) {
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(d_head));
    std::vector<T> score(n_keys, T(0));
    T mx = T(0);
    bool any = false;
    for (int j = 0; j < n_keys; ++j) {
        if (!visible(j)) {
            continue;
        }
        T s = 0;
        const T * kr = keys.row(j) + head_off;
        for (int c = 0; c < d_head; ++c) {
            s += q[c] * kr[c];
        }
        s *= inv_sqrt;
        score[j] = s;
        mx = any ? std::max(mx, s) : s;
        any = true;
    }
    if (!any) {
        throw std::domain_error("attention: fully masked row");
    }
    T z = 0;
    for (int j = 0; j < n_keys; ++j) {
        if (visible(j)) {
            score[j] = std::exp(score[j] - mx);
            z += score[j];
        } else {
            score[j] = 0;
        }
    }
    for (int c = 0; c < d_head; ++c) {
        out[c] = 0;
    }
    for (int j = 0; j < n_keys; ++j) {
        const T w = score[j] / z;
        if (probs_out) {
            probs_out[j] += w;
        }
        if (w == T(0)) {
            continue;
        }
        const T * vr = vals.row(j) + head_off;
        for (int c = 0; c < d_head; ++c) {
            out[c] += w * vr[c];
        }
    }
}

} // namespace detail

// Per-layer key/value entries tagged by segment kind and original position.
template <typename T>
struct SegmentedKVCache {
    std::vector<TenT<T>> keys; // per layer, [entries x d_model]
    std::vector<TenT<T>> vals;
    std::vector<SegmentKind> kinds;
    std::vector<int> positions;

    int entries() const { return static_cast<int>(kinds.size()); }

    // Drops every V/T-tagged entry; survivors keep their original positions.
    void prune_vision_text() {
        std::vector<int> keep;
        for (int i = 0; i < entries(); ++i) {
            if (kinds[i] != SegmentKind::V && kinds[i] != SegmentKind::T) {
                keep.push_back(i);
            }
        }
        const int d = keys.empty() ? 0 : keys[0].cols;
        for (size_t l = 0; l < keys.size(); ++l) {
            TenT<T> nk(static_cast<int>(keep.size()), d);
            TenT<T> nv(static_cast<int>(keep.size()), d);
            for (size_t i = 0; i < keep.size(); ++i) {
                for (int j = 0; j < d; ++j) {
                    nk.at(static_cast<int>(i), j) = keys[l].at(keep[i], j);
                    nv.at(static_cast<int>(i), j) = vals[l].at(keep[i], j);
                }
            }
            keys[l] = std::move(nk);
            vals[l] = std::move(nv);
        }
        std::vector<SegmentKind> nk2;
        std::vector<int> np;
        for (int i : keep) {
            nk2.push_back(kinds[i]);
            np.push_back(positions[i]);
        }
        kinds = std::move(nk2);
        positions = std::move(np);
    }
};

template <typename T>
struct ForwardOutT {
    TenT<T> hidden;
    TenT<T> logits; // empty unless requested
};

// Incremental decoder owning a segmented KV cache.
template <typename T>
class Decoder {
public:
    explicit Decoder(WeightsT<T> weights) : w_(std::move(weights)) {
        const int L = w_.config.num_layers;
        cache_.keys.assign(L, {});
        cache_.vals.assign(L, {});
    }

    const SegmentedKVCache<T> & cache() const { return cache_; }
    SegmentedKVCache<T> & cache() { return cache_; }

    // Processes the prompt under an explicit mask, populating the cache.
    // Returns final-layer hidden states.
    TenT<T> prefill(const std::vector<int> & tokens, const std::vector<int> & positions,
                    const std::vector<SegmentKind> & kinds, const AttentionMask & mask) {
        const auto & cfg = w_.config;
        const int n = static_cast<int>(tokens.size());
        if (n > cfg.max_seq || cache_.entries() + n > cfg.max_seq) {
            throw std::length_error("prefill: sequence exceeds max_seq");
        }
        const int base = cache_.entries();
        TenT<T> x = embed(tokens);
        for (int l = 0; l < cfg.num_layers; ++l) {
            run_layer(x, positions, l, [&](int i, int j) {
                return j < base || mask.allowed(i, j - base);
            });
        }
        for (int i = 0; i < n; ++i) {
            cache_.kinds.push_back(kinds[i]);
            cache_.positions.push_back(positions[i]);
        }
        return x;
    }

    void prune_vision_text() { cache_.prune_vision_text(); }

    // Appends one token attending to every surviving cache entry plus itself.
    // Returns the logits row.
    std::vector<T> step(int token, int position, SegmentKind kind) {
        if (cache_.entries() + 1 > w_.config.max_seq) {
            throw std::length_error("step: context overflow");
        }
        std::vector<int> toks = {token};
        std::vector<int> pos = {position};
        TenT<T> x = embed(toks);
        for (int l = 0; l < w_.config.num_layers; ++l) {
            run_layer(x, pos, l, [](int, int) { return true; });
        }
        cache_.kinds.push_back(kind);
        cache_.positions.push_back(position);
        TenT<T> lg = logits_rows(x, {0});
        return std::vector<T>(lg.a.begin(), lg.a.end());
    }

    TenT<T> logits_rows(const TenT<T> & hidden, const std::vector<int> & rows) const {
        const auto & emb = w_.tensor("tok_emb");
        TenT<T> out(static_cast<int>(rows.size()), emb.rows);
        for (size_t r = 0; r < rows.size(); ++r) {
            const T * h = hidden.row(rows[r]);
            for (int vtok = 0; vtok < emb.rows; ++vtok) {
                T s = 0;
                const T * e = emb.row(vtok);
                for (int c = 0; c < emb.cols; ++c) {
                    s += h[c] * e[c];
                }
                out.at(static_cast<int>(r), vtok) = s;
            }
        }
        return out;
    }

    WeightsT<T> w_;
    SegmentedKVCache<T> cache_;

    TenT<T> embed(const std::vector<int> & tokens) const {
        const auto & emb = w_.tensor("tok_emb");
        TenT<T> x(static_cast<int>(tokens.size()), emb.cols);
        for (size_t i = 0; i < tokens.size(); ++i) {
            if (tokens[i] < 0 || tokens[i] >= emb.rows) {
                throw std::out_of_range("embed: token id out of vocabulary");
            }
            for (int j = 0; j < emb.cols; ++j) {
                x.at(static_cast<int>(i), j) = emb.at(tokens[i], j);
            }
        }
        return x;
    }

    // One transformer layer over new rows x, extending the layer cache.
    // visible(i, global_j) gates attention; global index spans cache + new rows.
    template <typename Vis>
    void run_layer(TenT<T> & x, const std::vector<int> & positions, int l, Vis visible,
                   TenT<T> * probs_out = nullptr) {
        const auto & cfg = w_.config;
        const int n = x.rows;
        const int d = cfg.d_model;
        const int d_head = d / cfg.num_heads;
        const std::string pre = "layer" + std::to_string(l) + ".";
        const auto & g_attn = w_.tensor(pre + "attn_norm");
        const auto & wq = w_.tensor(pre + "wq");
        const auto & wk = w_.tensor(pre + "wk");
        const auto & wv = w_.tensor(pre + "wv");
        const auto & wo = w_.tensor(pre + "wo");
        const auto & g_mlp = w_.tensor(pre + "mlp_norm");
        const auto & w1 = w_.tensor(pre + "w1");
        const auto & w2 = w_.tensor(pre + "w2");

        TenT<T> h(n, d);
        for (int i = 0; i < n; ++i) {
            detail::rmsnorm_row(x.row(i), g_attn.row(0), h.row(i), d);
        }
        TenT<T> q, k, v;
        detail::matmul_rows(h, wq, q);
        detail::matmul_rows(h, wk, k);
        detail::matmul_rows(h, wv, v);
        for (int i = 0; i < n; ++i) {
            detail::rotary_row(q.row(i), positions[i], cfg.num_heads, d, cfg.rope_base);
            detail::rotary_row(k.row(i), positions[i], cfg.num_heads, d, cfg.rope_base);
        }
        // extend cache for this layer
        TenT<T> & ck = cache_.keys[l];
        TenT<T> & cv = cache_.vals[l];
        const int base = ck.rows;
        {
            TenT<T> nk(base + n, d), nv(base + n, d);
            std::copy(ck.a.begin(), ck.a.end(), nk.a.begin());
            std::copy(cv.a.begin(), cv.a.end(), nv.a.begin());
            std::copy(k.a.begin(), k.a.end(), nk.a.begin() + static_cast<size_t>(base) * d);
            std::copy(v.a.begin(), v.a.end(), nv.a.begin() + static_cast<size_t>(base) * d);
            ck = std::move(nk);
            cv = std::move(nv);
        }
        TenT<T> attn(n, d);
        for (int i = 0; i < n; ++i) {
            const int n_keys = base + i + 1; // causal: later new rows invisible
            for (int hd = 0; hd < cfg.num_heads; ++hd) {
                const int off = hd * d_head;
                detail::attend_row(
                    q.row(i) + off, ck, cv, n_keys, off, d_head,
                    [&](int j) { return visible(i, j); }, attn.row(i) + off,
                    probs_out ? probs_out->row(i) : nullptr);
            }
        }
        if (probs_out) {
            for (T & p : probs_out->a) {
                p /= cfg.num_heads;
            }
        }
        TenT<T> o;
        detail::matmul_rows(attn, wo, o);
        for (size_t i = 0; i < x.a.size(); ++i) {
            x.a[i] += o.a[i];
        }
        TenT<T> h2(n, d);
        for (int i = 0; i < n; ++i) {
            detail::rmsnorm_row(x.row(i), g_mlp.row(0), h2.row(i), d);
        }
        TenT<T> u;
        detail::matmul_rows(h2, w1, u);
        for (T & uv : u.a) {
            uv = uv / (T(1) + std::exp(-uv));
        }
        TenT<T> m;
        detail::matmul_rows(u, w2, m);
        for (size_t i = 0; i < x.a.size(); ++i) {
            x.a[i] += m.a[i];
        }
    }
};

// Whole-sequence forward under an explicit mask.
template <typename T>
ForwardOutT<T> full_forward(const WeightsT<T> & w, const std::vector<int> & tokens,
                            const std::vector<int> & positions, const AttentionMask & mask,
                            bool want_logits = true, AttnCapture * capture = nullptr) {
    const int n = static_cast<int>(tokens.size());
    if (n == 0 || static_cast<int>(positions.size()) != n || mask.side != n) {
        throw std::invalid_argument("full_forward: tokens/positions/mask size mismatch");
    }
    if (n > w.config.max_seq) {
        throw std::length_error("full_forward: sequence exceeds max_seq");
    }
    Decoder<T> dec(w);
    TenT<T> x = dec.embed(tokens);
    TenT<T> probs;
    for (int l = 0; l < w.config.num_layers; ++l) {
        const bool cap = capture && capture->layer == l;
        if (cap) {
            probs = TenT<T>(n, n);
        }
        dec.run_layer(x, positions, l, [&](int i, int j) { return mask.allowed(i, j); },
                      cap ? &probs : nullptr);
        if (cap) {
            capture->probs = Mat(n, n);
            for (size_t i = 0; i < probs.a.size(); ++i) {
                capture->probs.a[i] = static_cast<double>(probs.a[i]);
            }
        }
    }
    ForwardOutT<T> out;
    if (want_logits) {
        std::vector<int> rows(n);
        for (int i = 0; i < n; ++i) {
            rows[i] = i;
        }
        out.logits = dec.logits_rows(x, rows);
    }
    out.hidden = std::move(x);
    return out;
}

} // namespace chorus
