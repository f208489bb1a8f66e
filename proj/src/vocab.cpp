#include "chorus/vocab.hpp"

#include <sstream>
#include <stdexcept>

namespace chorus {

namespace {

const std::vector<std::string> k_shape_names = {
    "circle", "square", "triangle", "star", "diamond", "cross", "ring", "arrow",
};
const std::vector<std::string> k_color_names = {
    "red", "green", "blue", "yellow", "purple", "orange", "cyan", "pink",
};

} // namespace

const std::string & Vocab::system_prompt() {
    static const std::string p = "you are a helpful assistant .";
    return p;
}

Vocab::Vocab(int n_shapes, int n_colors, int grid_rows, int grid_cols)
    : n_shapes_(n_shapes), n_colors_(n_colors) {
    if (n_shapes < 1 || n_shapes > static_cast<int>(k_shape_names.size()) ||
        n_colors < 1 || n_colors > static_cast<int>(k_color_names.size())) {
        throw std::invalid_argument("Vocab: shape/color count out of range");
    }
    word_base_ = vision_base() + n_shapes * n_colors;

    add_words(system_prompt());
    add_words("represent the given image .");
    add_words("reconstruct the represented text .");
    add_words("what color is the shape at ?");
    add_words("how many");
    add_word(";");
    for (int i = 0; i < n_colors; ++i) {
        add_word(k_color_names[i]);
    }
    for (int i = 0; i < n_shapes; ++i) {
        add_word(k_shape_names[i]);
    }
    for (int r = 0; r < grid_rows; ++r) {
        for (int c = 0; c < grid_cols; ++c) {
            add_word(cell_name(r, c));
        }
    }
    for (int n = 0; n <= grid_rows * grid_cols; ++n) {
        add_word(std::to_string(n));
    }
}

void Vocab::add_word(const std::string & w) {
    if (word_to_id_.count(w)) {
        return;
    }
    word_to_id_[w] = word_base_ + static_cast<int>(id_to_word_.size());
    id_to_word_.push_back(w);
}

void Vocab::add_words(const std::string & text) {
    std::istringstream in(text);
    std::string w;
    while (in >> w) {
        add_word(w);
    }
}

int Vocab::vision_token(int shape_idx, int color_idx) const {
    if (shape_idx < 0 || shape_idx >= n_shapes_ || color_idx < 0 || color_idx >= n_colors_) {
        throw std::out_of_range("vision_token: cell value out of range");
    }
    return vision_base() + shape_idx * n_colors_ + color_idx;
}

const std::string & Vocab::shape_name(int idx) const {
    if (idx < 0 || idx >= n_shapes_) {
        throw std::out_of_range("shape_name");
    }
    return k_shape_names[idx];
}

const std::string & Vocab::color_name(int idx) const {
    if (idx < 0 || idx >= n_colors_) {
        throw std::out_of_range("color_name");
    }
    return k_color_names[idx];
}

std::string Vocab::cell_name(int r, int c) {
    return "r" + std::to_string(r) + "c" + std::to_string(c);
}

int Vocab::word_id(const std::string & w) const {
    auto it = word_to_id_.find(w);
    if (it == word_to_id_.end()) {
        throw std::out_of_range("word not in vocabulary: " + w);
    }
    return it->second;
}

std::vector<int> Vocab::encode(const std::string & text) const {
    std::vector<int> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) {
        out.push_back(word_id(w));
    }
    return out;
}

std::string Vocab::decode(const std::vector<int> & ids) const {
    std::string out;
    for (int id : ids) {
        if (!out.empty()) {
            out += ' ';
        }
        if (id >= word_base_ && id < size()) {
            out += id_to_word_[id - word_base_];
        } else if (id == EOS) {
            out += "<eos>";
        } else {
            out += "<tok_" + std::to_string(id) + ">";
        }
    }
    return out;
}

} // namespace chorus
