#pragma once

#include "chorus/prompt.hpp"

#include <string>
#include <vector>

namespace chorus {

// Per-(query, key) visibility. blocked[i*side + j] == true means key j is
// invisible to query i.
struct AttentionMask {
    int side = 0;
    std::vector<uint8_t> blocked;

    explicit AttentionMask(int n = 0) : side(n), blocked(static_cast<size_t>(n) * n, 0) {}

    bool allowed(int i, int j) const { return !blocked[static_cast<size_t>(i) * side + j]; }
    void block(int i, int j) { blocked[static_cast<size_t>(i) * side + j] = 1; }
};

// Compression-aware mask over a layout:
//   compressed: allowed(i,j) = (j <= i) and not (i in Q|A and j in V|T)
//   plain:      allowed(i,j) = (j <= i)
AttentionMask build_mask(const PromptLayout & layout, bool compressed);

AttentionMask causal_mask(int n);

std::vector<int> visible_keys(const AttentionMask & mask, int i);

// Text grid of '+'/'-' rows, one line per query.
std::string dump_mask(const AttentionMask & mask);

} // namespace chorus
