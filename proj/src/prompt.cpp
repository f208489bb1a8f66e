#include "chorus/prompt.hpp"

#include "chorus/model.hpp"
#include "chorus/vocab.hpp"

#include <algorithm>
#include <stdexcept>

namespace chorus {

const char * segment_name(SegmentKind k) {
    switch (k) {
        case SegmentKind::SYS: return "SYS";
        case SegmentKind::V:   return "V";
        case SegmentKind::T:   return "T";
        case SegmentKind::U:   return "U";
        case SegmentKind::Q:   return "Q";
        case SegmentKind::A:   return "A";
    }
    return "?";
}

const Span * PromptLayout::find(SegmentKind k) const {
    for (const Span & s : spans) {
        if (s.kind == k) {
            return &s;
        }
    }
    return nullptr;
}

bool PromptLayout::in_segment(int pos, SegmentKind k) const {
    for (const Span & s : spans) {
        if (s.kind == k && pos >= s.start && pos < s.end) {
            return true;
        }
    }
    return false;
}

PromptLayout assemble(const Sample & sample, AssembleMode mode, const ModelConfig & config,
                      const Vocab & vocab, bool native_keep_einst) {
    PromptLayout out;
    auto push_span = [&out](SegmentKind kind, const std::vector<int> & toks) {
        const int start = out.size();
        out.tokens.insert(out.tokens.end(), toks.begin(), toks.end());
        out.spans.push_back({kind, start, out.size()});
    };

    std::vector<int> sys = {Vocab::BOS, Vocab::ROLE_SYSTEM};
    for (int t : vocab.encode(Vocab::system_prompt())) {
        sys.push_back(t);
    }
    sys.push_back(Vocab::ROLE_USER);
    push_span(SegmentKind::SYS, sys);

    std::vector<int> vis;
    if (sample.image) {
        const VisionGrid & g = *sample.image;
        if (static_cast<int>(g.cells.size()) != g.n_tokens()) {
            throw std::invalid_argument("assemble: grid cell count mismatch");
        }
        vis.reserve(g.cells.size());
        for (const auto & [shape, color] : g.cells) {
            vis.push_back(vocab.vision_token(shape, color));
        }
    }
    push_span(SegmentKind::V, vis);

    const bool keep_einst = mode != AssembleMode::native || native_keep_einst || config.native_keep_einst;
    push_span(SegmentKind::T, keep_einst ? vocab.encode(sample.e_inst) : std::vector<int>{});

    if (mode != AssembleMode::native) {
        std::vector<int> chorus(config.k_chorus);
        for (int i = 0; i < config.k_chorus; ++i) {
            chorus[i] = Vocab::CHORUS_BASE + i;
        }
        push_span(SegmentKind::U, chorus);
    }

    if (mode != AssembleMode::embed) {
        if (!sample.g_inst) {
            throw std::invalid_argument("assemble: generation instruction required but absent");
        }
        if (!sample.answer) {
            throw std::invalid_argument("assemble: answer required but absent");
        }
        // the assistant marker is part of Q: everything issued after the
        // chorus must be blocked from V/T or pruned decoding would diverge
        // from the masked full forward
        std::vector<int> q = vocab.encode(*sample.g_inst);
        q.push_back(Vocab::ROLE_ASSISTANT);
        push_span(SegmentKind::Q, q);
        std::vector<int> ans = vocab.encode(*sample.answer);
        ans.push_back(Vocab::EOS);
        push_span(SegmentKind::A, ans);
    }

    if (out.size() > config.max_seq) {
        throw std::length_error("assemble: sequence exceeds max_seq");
    }
    return out;
}

std::vector<int> answer_positions(const PromptLayout & layout) {
    const Span * a = layout.find(SegmentKind::A);
    if (!a || a->len() == 0) {
        throw std::invalid_argument("answer_positions: layout has no answer span");
    }
    std::vector<int> pos;
    for (int i = a->start - 1; i < a->end - 1; ++i) {
        pos.push_back(i);
    }
    return pos;
}

std::vector<std::string> validate(const PromptLayout & layout, int k_chorus, int chorus_base) {
    std::vector<std::string> violations;
    int cursor = 0;
    for (const Span & s : layout.spans) {
        if (s.start != cursor || s.end < s.start || s.end > layout.size()) {
            violations.push_back("partition: spans must tile [0, len) in order");
            break;
        }
        cursor = s.end;
    }
    if (violations.empty() && cursor != layout.size()) {
        violations.push_back("partition: spans do not cover the token sequence");
    }

    // Non-SYS kinds must appear at most once, in V, T, U, Q, A order. SYS
    // delimiter spans may appear anywhere.
    static const SegmentKind order[] = {SegmentKind::V, SegmentKind::T, SegmentKind::U,
                                        SegmentKind::Q, SegmentKind::A};
    int last_rank = -1;
    for (const Span & s : layout.spans) {
        if (s.kind == SegmentKind::SYS) {
            continue;
        }
        const int rank = static_cast<int>(std::find(std::begin(order), std::end(order), s.kind) -
                                          std::begin(order));
        if (rank <= last_rank) {
            violations.push_back("order: segments must follow SYS, V, T, U, Q, A");
        }
        last_rank = rank;
    }

    if (const Span * u = layout.find(SegmentKind::U)) {
        if (u->len() != k_chorus) {
            violations.push_back("chorus length: U span must hold exactly k tokens");
        } else {
            for (int i = 0; i < k_chorus; ++i) {
                if (layout.tokens[u->start + i] != chorus_base + i) {
                    violations.push_back("chorus ids: U span must hold the reserved ids in order");
                    break;
                }
            }
        }
    }
    return violations;
}

} // namespace chorus
