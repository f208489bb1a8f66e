#include "chorus/inference.hpp"

#include "chorus/mask.hpp"
#include "chorus/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>

namespace chorus {

void GenerationConfig::check() const {
    if (max_new_tokens < 1) {
        throw std::invalid_argument("GenerationConfig: max_new_tokens must be >= 1");
    }
    if (!greedy && temperature <= 0) {
        throw std::invalid_argument("GenerationConfig: sampling temperature must be > 0");
    }
}

Mat encode(const Parameters & params, const Sample & sample, PoolingMethod method,
           const Vocab & vocab) {
    const PromptLayout layout = assemble(sample, AssembleMode::embed, params.config, vocab);
    if (!layout.find(SegmentKind::U)) {
        throw std::invalid_argument("encode: layout has no chorus span");
    }
    std::vector<int> positions(layout.size());
    for (int i = 0; i < layout.size(); ++i) {
        positions[i] = i;
    }
    const AttentionMask mask = build_mask(layout, /*compressed=*/true);
    const ForwardOutput out = forward(params, layout.tokens, positions, mask);
    return pool_chorus(out.hidden, layout, method, params);
}

namespace {

int pick_token(const std::vector<double> & logits, const GenerationConfig & cfg,
               std::mt19937_64 & rng) {
    if (cfg.greedy) {
        int best = 0;
        for (int i = 1; i < static_cast<int>(logits.size()); ++i) {
            if (logits[i] > logits[best]) {
                best = i;
            }
        }
        return best;
    }
    double mx = logits[0];
    for (double l : logits) {
        mx = std::max(mx, l);
    }
    std::vector<double> p(logits.size());
    double z = 0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((logits[i] - mx) / cfg.temperature);
        z += p[i];
    }
    const double u = (rng() >> 11) * 0x1.0p-53 * z;
    double acc = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) {
            return static_cast<int>(i);
        }
    }
    return static_cast<int>(p.size()) - 1;
}

// Truncates a joint/native layout at the answer span, keeping the
// role-assistant delimiter as the last prompt token.
void drop_answer(PromptLayout & layout) {
    const Span * a = layout.find(SegmentKind::A);
    if (!a) {
        throw std::logic_error("drop_answer: layout has no answer span");
    }
    layout.tokens.resize(a->start);
    while (!layout.spans.empty() && layout.spans.back().kind == SegmentKind::A) {
        layout.spans.pop_back();
    }
}

std::vector<SegmentKind> span_kinds(const PromptLayout & layout) {
    std::vector<SegmentKind> kinds(layout.size());
    for (const Span & s : layout.spans) {
        for (int i = s.start; i < s.end; ++i) {
            kinds[i] = s.kind;
        }
    }
    return kinds;
}

GenerationResult decode_answer(Decoder<double> & dec, int first_logit_source_token,
                               int next_position, const GenerationConfig & cfg, int stop) {
    GenerationResult res;
    std::mt19937_64 rng(cfg.sample_seed);
    std::vector<double> logits =
        dec.step(first_logit_source_token, next_position - 1, SegmentKind::Q);
    for (int t = 0; t < cfg.max_new_tokens; ++t) {
        const int tok = pick_token(logits, cfg, rng);
        if (tok == stop) {
            break;
        }
        res.tokens.push_back(tok);
        if (t + 1 < cfg.max_new_tokens) {
            logits = dec.step(tok, next_position + t, SegmentKind::A);
        }
    }
    return res;
}

} // namespace

GenerationResult generate_native(const Parameters & params, const Sample & sample,
                                 const GenerationConfig & gen_cfg, const Vocab & vocab) {
    gen_cfg.check();
    Sample s = sample;
    if (!s.answer) {
        s.answer = std::string(); // assemble demands one; dropped below
    }
    PromptLayout layout = assemble(s, AssembleMode::native, params.config, vocab,
                                   params.config.native_keep_einst);
    drop_answer(layout);
    const int n = layout.size();
    std::vector<int> positions(n);
    for (int i = 0; i < n; ++i) {
        positions[i] = i;
    }
    Decoder<double> dec(convert_weights<double>(params));
    // prompt minus the assistant marker; the marker token seeds decoding
    std::vector<int> prompt(layout.tokens.begin(), layout.tokens.end() - 1);
    std::vector<int> prompt_pos(positions.begin(), positions.end() - 1);
    std::vector<SegmentKind> kinds = span_kinds(layout);
    kinds.pop_back();
    if (!prompt.empty()) {
        dec.prefill(prompt, prompt_pos, kinds, causal_mask(static_cast<int>(prompt.size())));
    }
    const int stop = gen_cfg.stop_token >= 0 ? gen_cfg.stop_token : Vocab::EOS;
    GenerationResult res = decode_answer(dec, layout.tokens.back(), n, gen_cfg, stop);
    res.prefill_entries = n;
    res.retained_entries = n;
    res.cache_percent = 100.0;
    return res;
}

GenerationResult generate_compressed(const Parameters & params, const Sample & sample,
                                     const GenerationConfig & gen_cfg, const Vocab & vocab) {
    gen_cfg.check();
    if (!sample.g_inst) {
        throw std::invalid_argument("generate_compressed: sample has no question");
    }
    const PromptLayout prefix = assemble(sample, AssembleMode::embed, params.config, vocab);
    if (!prefix.find(SegmentKind::U)) {
        throw std::invalid_argument("generate_compressed: layout has no chorus span");
    }
    const int n_prefix = prefix.size();
    std::vector<int> positions(n_prefix);
    for (int i = 0; i < n_prefix; ++i) {
        positions[i] = i;
    }
    Decoder<double> dec(convert_weights<double>(params));
    dec.prefill(prefix.tokens, positions, span_kinds(prefix), build_mask(prefix, true));
    const int n_chorus = prefix.find(SegmentKind::U)->len();
    dec.prune_vision_text();
    const int retained = dec.cache().entries();

    // question tokens keep the positions they would occupy un-pruned
    const std::vector<int> q_tokens = vocab.encode(*sample.g_inst);
    int pos = n_prefix;
    for (int tok : q_tokens) {
        dec.step(tok, pos++, SegmentKind::Q);
    }
    const int stop = gen_cfg.stop_token >= 0 ? gen_cfg.stop_token : Vocab::EOS;
    GenerationResult res = decode_answer(dec, Vocab::ROLE_ASSISTANT, pos + 1, gen_cfg, stop);
    res.prefill_entries = n_prefix;
    res.retained_entries = retained;
    res.cache_percent = cache_ratio(n_chorus, n_prefix);
    return res;
}

double cache_ratio(int k_kept, int n_full) {
    if (n_full <= 0) {
        throw std::invalid_argument("cache_ratio: n_full must be positive");
    }
    if (k_kept <= 0 || k_kept > n_full) {
        throw std::invalid_argument("cache_ratio: need 0 < k_kept <= n_full");
    }
    return 100.0 * k_kept / n_full;
}

void save_embeddings(const std::vector<Mat> & embs, const std::string & path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open embedding file: " + path);
    }
    const uint32_t count = static_cast<uint32_t>(embs.size());
    const uint32_t dim = embs.empty() ? 0 : static_cast<uint32_t>(embs[0].a.size());
    out.write(reinterpret_cast<const char *>(&count), 4);
    out.write(reinterpret_cast<const char *>(&dim), 4);
    for (const Mat & e : embs) {
        if (e.a.size() != dim) {
            throw std::invalid_argument("save_embeddings: inconsistent dimensions");
        }
        for (double v : e.a) {
            const float f = static_cast<float>(v);
            out.write(reinterpret_cast<const char *>(&f), 4);
        }
    }
    if (!out) {
        throw std::runtime_error("embedding write failed: " + path);
    }
}

void save_embeddings_csv(const std::vector<Mat> & embs, const std::string & path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open embedding file: " + path);
    }
    for (const Mat & e : embs) {
        for (size_t i = 0; i < e.a.size(); ++i) {
            out << (i ? "," : "") << e.a[i];
        }
        out << "\n";
    }
    if (!out) {
        throw std::runtime_error("embedding write failed: " + path);
    }
}

} // namespace chorus
