#pragma once

#include "chorus/mask.hpp"
#include "chorus/mat.hpp"

#include <functional>
#include <vector>

namespace chorus {

// Reverse-mode autodiff over matrix-valued nodes. One tape per forward pass;
// backward() walks the recorded ops in reverse.
using Var = int;

class Tape {
public:
    struct Node {
        Mat val;
        Mat grad;
        std::function<void(Tape &)> back; // null for leaves
    };

    Var leaf(Mat v) {
        nodes.push_back({std::move(v), Mat(), nullptr});
        Var id = static_cast<Var>(nodes.size()) - 1;
        nodes.back().grad = Mat(nodes[id].val.rows, nodes[id].val.cols);
        return id;
    }
    Var record(Mat v, std::function<void(Tape &)> back) {
        nodes.push_back({std::move(v), Mat(), std::move(back)});
        Var id = static_cast<Var>(nodes.size()) - 1;
        nodes.back().grad = Mat(nodes[id].val.rows, nodes[id].val.cols);
        return id;
    }

    Mat & val(Var v) { return nodes[v].val; }
    const Mat & val(Var v) const { return nodes[v].val; }
    Mat & grad(Var v) { return nodes[v].grad; }

    // Seeds d(root)/d(root) = 1 (root must be 1x1) and accumulates gradients
    // into every node recorded before it.
    void backward(Var root);
    // Backward from an interior node with an externally supplied gradient.
    void backward_from(Var node, const Mat & seed);

    size_t size() const { return nodes.size(); }

private:
    std::vector<Node> nodes;

    void run_backward(Var from);
};

// ---- ops ----

Var add(Tape & t, Var a, Var b);
Var scale(Tape & t, Var a, double s);
// C = A B, or A B^T when trans_b
Var matmul(Tape & t, Var a, Var b, bool trans_b = false);
// rows of E indexed by ids
Var gather_rows(Tape & t, Var e, std::vector<int> ids);
Var slice_rows(Tape & t, Var x, int start, int end);
Var concat_rows(Tape & t, const std::vector<Var> & parts);
Var mean_rows(Tape & t, Var x);
Var silu(Tape & t, Var x);
// y_i = x_i * gain / rms(x_i), rowwise
Var rmsnorm(Tape & t, Var x, Var gain, double eps = 1e-6);
Var l2norm_rows(Tape & t, Var x);
// rotary applied per head to [seq x d_model] at explicit position indices
Var rotary(Tape & t, Var x, const std::vector<int> & positions, int num_heads, double base);
// fused multi-head attention; blocked keys get exactly zero weight.
// probs_out, when given, receives head-averaged attention weights [seq x seq].
Var attention(Tape & t, Var q, Var k, Var v, const AttentionMask & mask, int num_heads,
              Mat * probs_out = nullptr);
// mean over rows of -log softmax(logits)[target]; log-sum-exp stabilized
Var softmax_cross_entropy(Tape & t, Var logits, std::vector<int> targets);
// one learnable query attends over the rows of h -> 1 x d
Var attn_pool(Tape & t, Var h, Var query);

} // namespace chorus
