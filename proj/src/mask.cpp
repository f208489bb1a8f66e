#include "chorus/mask.hpp"

#include <stdexcept>

namespace chorus {

AttentionMask causal_mask(int n) {
    AttentionMask m(n);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            m.block(i, j);
        }
    }
    return m;
}

AttentionMask build_mask(const PromptLayout & layout, bool compressed) {
    const int n = layout.size();
    std::vector<uint8_t> qa(n, 0), vt(n, 0);
    for (const Span & s : layout.spans) {
        const bool is_qa = s.kind == SegmentKind::Q || s.kind == SegmentKind::A;
        const bool is_vt = s.kind == SegmentKind::V || s.kind == SegmentKind::T;
        for (int i = s.start; i < s.end; ++i) {
            qa[i] = is_qa;
            vt[i] = is_vt;
        }
    }
    AttentionMask m = causal_mask(n);
    if (compressed) {
        for (int i = 0; i < n; ++i) {
            if (!qa[i]) {
                continue;
            }
            for (int j = 0; j < i; ++j) {
                if (vt[j]) {
                    m.block(i, j);
                }
            }
        }
    }
    return m;
}

std::vector<int> visible_keys(const AttentionMask & mask, int i) {
    if (i < 0 || i >= mask.side) {
        throw std::out_of_range("visible_keys: row out of range");
    }
    std::vector<int> out;
    for (int j = 0; j < mask.side; ++j) {
        if (mask.allowed(i, j)) {
            out.push_back(j);
        }
    }
    return out;
}

std::string dump_mask(const AttentionMask & mask) {
    std::string out;
    out.reserve(static_cast<size_t>(mask.side) * (mask.side + 1));
    for (int i = 0; i < mask.side; ++i) {
        for (int j = 0; j < mask.side; ++j) {
            out += mask.allowed(i, j) ? '+' : '-';
        }
        out += '\n';
    }
    return out;
}

} // namespace chorus
