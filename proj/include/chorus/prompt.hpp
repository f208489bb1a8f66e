#pragma once

#include <optional>
#include <string>
#include <vector>

namespace chorus {

struct ModelConfig;
class Vocab;

// Segment kinds of the prompt template:
//   System: ... User: <image> [eInst] <chorus> [gInst] Assistant: <answer>
// Role markers and other structural delimiters are classified SYS.
enum class SegmentKind { SYS, V, T, U, Q, A };

const char * segment_name(SegmentKind k);

struct Span {
    SegmentKind kind;
    int start = 0; // half-open [start, end)
    int end   = 0;

    int len() const { return end - start; }
    bool operator==(const Span &) const = default;
};

struct PromptLayout {
    std::vector<int> tokens;
    std::vector<Span> spans;

    int size() const { return static_cast<int>(tokens.size()); }
    // First span of the given kind, or nullptr.
    const Span * find(SegmentKind k) const;
    bool in_segment(int pos, SegmentKind k) const;
};

struct VisionGrid {
    int rows = 0;
    int cols = 0;
    std::vector<std::pair<int, int>> cells; // (shape_idx, color_idx), row-major

    int n_tokens() const { return rows * cols; }
};

enum class TaskKind { retrieval_query, retrieval_target, generation };

struct Sample {
    std::optional<VisionGrid> image;
    std::string e_inst;                // embedding instruction / target text
    std::optional<std::string> g_inst; // generation instruction
    std::optional<std::string> answer;
    TaskKind task = TaskKind::retrieval_query;
};

enum class AssembleMode { embed, joint, native };

// Builds the token sequence and exact segment spans for a sample.
//   embed:  SYS V T U                      (ends at the chorus span)
//   joint:  SYS V T U Q SYS[assistant] A   (A includes a trailing EOS)
//   native: SYS V [T] Q SYS[assistant] A   (no chorus; eInst dropped unless
//           native_keep_einst)
PromptLayout assemble(const Sample & sample, AssembleMode mode, const ModelConfig & config,
                      const Vocab & vocab, bool native_keep_einst = false);

// Positions whose next-token predictions are supervised: [A.start-1, A.end-1).
std::vector<int> answer_positions(const PromptLayout & layout);

// Empty result means the layout is well formed.
std::vector<std::string> validate(const PromptLayout & layout, int k_chorus, int chorus_base);

} // namespace chorus
