#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace chorus {

// Closed word-level vocabulary over the synthetic corpus. Layout:
//   [specials][chorus ids][vision ids][words]
// Vision token id = vision_base + shape_idx * n_colors + color_idx.
class Vocab {
public:
    static constexpr int PAD = 0;
    static constexpr int BOS = 1;
    static constexpr int EOS = 2;
    static constexpr int ROLE_SYSTEM = 3;
    static constexpr int ROLE_USER = 4;
    static constexpr int ROLE_ASSISTANT = 5;
    static constexpr int CHORUS_BASE = 6;
    static constexpr int MAX_CHORUS = 64;

    Vocab(int n_shapes, int n_colors, int grid_rows, int grid_cols);

    int vision_base() const { return CHORUS_BASE + MAX_CHORUS; }
    int vision_token(int shape_idx, int color_idx) const;
    bool is_vision(int id) const { return id >= vision_base() && id < vision_base() + n_shapes_ * n_colors_; }
    bool is_chorus(int id) const { return id >= CHORUS_BASE && id < CHORUS_BASE + MAX_CHORUS; }

    int size() const { return static_cast<int>(id_to_word_.size()) + word_base_; }
    int n_shapes() const { return n_shapes_; }
    int n_colors() const { return n_colors_; }

    const std::string & shape_name(int idx) const;
    const std::string & color_name(int idx) const;
    static std::string cell_name(int r, int c);

    int word_id(const std::string & w) const; // throws on unknown word
    std::vector<int> encode(const std::string & text) const;
    std::string decode(const std::vector<int> & ids) const;

    static const std::string & system_prompt();

private:
    int n_shapes_ = 0;
    int n_colors_ = 0;
    int word_base_ = 0;
    std::vector<std::string> id_to_word_;
    std::unordered_map<std::string, int> word_to_id_;

    void add_word(const std::string & w);
    void add_words(const std::string & text);
};

} // namespace chorus
