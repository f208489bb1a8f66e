#include "chorus/tape.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace chorus {

void Tape::backward(Var root) {
    if (val(root).rows != 1 || val(root).cols != 1) {
        throw std::invalid_argument("backward: root must be a scalar");
    }
    grad(root).at(0, 0) = 1.0;
    run_backward(root);
}

void Tape::backward_from(Var node, const Mat & seed) {
    if (!seed.same_shape(val(node))) {
        throw std::invalid_argument("backward_from: seed shape mismatch");
    }
    axpy(1.0, seed, grad(node));
    run_backward(node);
}

void Tape::run_backward(Var from) {
    for (Var v = from; v >= 0; --v) {
        if (nodes[v].back) {
            nodes[v].back(*this);
        }
    }
}

Var add(Tape & t, Var a, Var b) {
    Mat out = t.val(a);
    axpy(1.0, t.val(b), out);
    const Var id = static_cast<Var>(t.size());
    t.record(std::move(out), [a, b, id](Tape & tp) {
        axpy(1.0, tp.grad(id), tp.grad(a));
        axpy(1.0, tp.grad(id), tp.grad(b));
    });
    return id;
}

Var scale(Tape & t, Var a, double s) {
    Mat out = t.val(a);
    for (double & v : out.a) {
        v *= s;
    }
    const Var id = static_cast<Var>(t.size());
    t.record(std::move(out), [a, s, id](Tape & tp) {
        axpy(s, tp.grad(id), tp.grad(a));
    });
    return id;
}

Var matmul(Tape & t, Var a, Var b, bool trans_b) {
    Mat out;
    gemm(t.val(a), t.val(b), out, trans_b, false);
    const Var id = static_cast<Var>(t.size());
    t.record(std::move(out), [a, b, trans_b, id](Tape & tp) {
        const Mat & g = tp.grad(id);
        if (trans_b) {
            // C = A B^T : dA += G B ; dB += G^T A
            gemm(g, tp.val(b), tp.grad(a), false, true);
            Mat gt(g.cols, g.rows);
            for (int i = 0; i < g.rows; ++i) {
                for (int j = 0; j < g.cols; ++j) {
                    gt.at(j, i) = g.at(i, j);
                }
            }
            gemm(gt, tp.val(a), tp.grad(b), false, true);
        } else {
            // C = A B : dA += G B^T ; dB += A^T G
            gemm(g, tp.val(b), tp.grad(a), true, true);
            const Mat & av = tp.val(a);
            Mat at(av.cols, av.rows);
            for (int i = 0; i < av.rows; ++i) {
                for (int j = 0; j < av.cols; ++j) {
                    at.at(j, i) = av.at(i, j);
                }
            }
            gemm(at, g, tp.grad(b), false, true);
        }
    });
    return id;
}

Var gather_rows(Tape & t, Var e, std::vector<int> ids) {
    const Mat & ev = t.val(e);
    Mat out(static_cast<int>(ids.size()), ev.cols);
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= ev.rows) {
            throw std::out_of_range("gather_rows: id out of range");
        }
        for (int j = 0; j < ev.cols; ++j) {
            out.at(static_cast<int>(i), j) = ev.at(ids[i], j);
        }
    }
    const Var id = static_cast<Var>(t.size());
    t.record(std::move(out), [e, ids = std::move(ids), id](Tape & tp) {
        Mat & ge = tp.grad(e);
        const Mat & g = tp.grad(id);
        for (size_t i = 0; i < ids.size(); ++i) {
            for (int j = 0; j < g.cols; ++j) {
                ge.at(ids[i], j) += g.at(static_cast<int>(i), j);
            }
        }
    });
    return id;
}

Var slice_rows(Tape & t, Var x, int start, int end) {
    const Mat & xv = t.val(x);
    if (start < 0 || end > xv.rows || start >= end) {
        throw std::out_of_range("slice_rows: bad range");
    }
    Mat out(end - start, xv.cols);
    for (int i = start; i < end; ++i) {
        for (int j = 0; j < xv.cols; ++j) {
            out.at(i - start, j) = xv.at(i, j);
        }
    }
    const Var id = static_cast<Var>(t.size());
    t.record(std::move(out), [x, start, end, id](Tape & tp) {
        const Mat & g = tp.grad(id);
        Mat & gx = tp.grad(x);
        for (int i = start; i < end; ++i) {
            for (int j = 0; j < g.cols; ++j) {
                gx.at(i, j) += g.at(i - start, j);
            }
        }
    });
    return id;
}

Var concat_rows(Tape & t, const std::vector<Var> & parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_rows: empty");
    }
    int rows = 0;
    const int cols = t.val(parts[0]).cols;
    for (Var p : parts) {
        rows += t.val(p).rows;
    }
    Mat out(rows, cols);
    int r = 0;
    for (Var p : parts) {
        const Mat & pv = t.val(p);
        for (int i = 0; i < pv.rows; ++i, ++r) {
            for (int j = 0; j < cols; ++j) {
                out.at(r, j) = pv.at(i, j);
            }
        }
    }
    const Var id = static_cast<Var>(t.size());
    t.record(std::move(out), [parts, id](Tape & tp) {
        const Mat & g = tp.grad(id);
        int r = 0;
        for (Var p : parts) {
            Mat & gp = tp.grad(p);
            for (int i = 0; i < gp.rows; ++i, ++r) {
                for (int j = 0; j < g.cols; ++j) {
                    gp.at(i, j) += g.at(r, j);
                }
            }
        }
    });
    return id;
}

Var mean_rows(Tape & t, Var x) {
    const Mat & xv = t.val(x);
    Mat out(1, xv.cols);
    for (int i = 0; i < xv.rows; ++i) {
        for (int j = 0; j < xv.cols; ++j) {
            out.at(0, j) += xv.at(i, j);
        }
    }
    const double inv = 1.0 / xv.rows;
    for (double & v : out.a) {
        v *= inv;
    }
    const Var id = static_cast<Var>(t.size());
    t.record(std::move(out), [x, inv, id](Tape & tp) {
        const Mat & g = tp.grad(id);
        Mat & gx = tp.grad(x);
        for (int i = 0; i < gx.rows; ++i) {
            for (int j = 0; j < gx.cols; ++j) {
                gx.at(i, j) += inv * g.at(0, j);
            }
        }
    });
    return id;
}

Var silu(Tape & t, Var x) {
    Mat out = t.val(x);
    for (double & v : out.a) {
        v = v / (1.0 + std::exp(-v));
    }
    const Var id = static_cast<Var>(t.size());
    t.record(std::move(out), [x, id](Tape & tp) {
        const Mat & g  = tp.grad(id);
        const Mat & xv = tp.val(x);
        Mat & gx = tp.grad(x);
        for (size_t i = 0; i < xv.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-xv.a[i]));
            gx.a[i] += g.a[i] * s * (1.0 + xv.a[i] * (1.0 - s));
        }
    });
    return id;
}

Var rmsnorm(Tape & t, Var x, Var gain, double eps) {
    const Mat & xv = t.val(x);
    const Mat & gv = t.val(gain);
    assert(gv.rows == 1 && gv.cols == xv.cols);
    Mat out(xv.rows, xv.cols);
    std::vector<double> rms(xv.rows);
    for (int i = 0; i < xv.rows; ++i) {
        double ss = 0.0;
        for (int j = 0; j < xv.cols; ++j) {
            ss += xv.at(i, j) * xv.at(i, j);
        }
        rms[i] = std::sqrt(ss / xv.cols + eps);
        for (int j = 0; j < xv.cols; ++j) {
            out.at(i, j) = xv.at(i, j) / rms[i] * gv.at(0, j);
        }
    }
    const Var id = static_cast<Var>(t.size());
    t.record(std::move(out), [x, gain, rms = std::move(rms), id](Tape & tp) {
        const Mat & g  = tp.grad(id);
        const Mat & xv = tp.val(x);
        const Mat & gv = tp.val(gain);
        Mat & gx = tp.grad(x);
        Mat & gg = tp.grad(gain);
        for (int i = 0; i < xv.rows; ++i) {
            const double r = rms[i];
            double dot = 0.0; // sum_j (g*gain)_j x_j
            for (int j = 0; j < xv.cols; ++j) {
                dot += g.at(i, j) * gv.at(0, j) * xv.at(i, j);
            }
            for (int j = 0; j < xv.cols; ++j) {
                const double gg_j = g.at(i, j) * gv.at(0, j);
                gx.at(i, j) += gg_j / r - xv.at(i, j) * dot / (xv.cols * r * r * r);
                gg.at(0, j) += g.at(i, j) * xv.at(i, j) / r;
            }
        }
    });
    return id;
}

Var l2norm_rows(Tape & t, Var x) {
    const Mat & xv = t.val(x);
    Mat out(xv.rows, xv.cols);
    std::vector<double> norms(xv.rows);
    for (int i = 0; i < xv.rows; ++i) {
        double ss = 0.0;
        for (int j = 0; j < xv.cols; ++j) {
            ss += xv.at(i, j) * xv.at(i, j);
        }
        norms[i] = std::sqrt(ss);
        if (norms[i] < 1e-30) {
            throw std::domain_error("l2norm_rows: zero-norm row");
        }
        for (int j = 0; j < xv.cols; ++j) {
            out.at(i, j) = xv.at(i, j) / norms[i];
        }
    }
    const Var id = static_cast<Var>(t.size());
    t.record(std::move(out), [x, norms = std::move(norms), id](Tape & tp) {
        const Mat & g = tp.grad(id);
        const Mat & y = tp.val(id);
        Mat & gx = tp.grad(x);
        for (int i = 0; i < y.rows; ++i) {
            double dot = 0.0;
            for (int j = 0; j < y.cols; ++j) {
                dot += g.at(i, j) * y.at(i, j);
            }
            for (int j = 0; j < y.cols; ++j) {
                gx.at(i, j) += (g.at(i, j) - y.at(i, j) * dot) / norms[i];
            }
        }
    });
    return id;
}

Var rotary(Tape & t, Var x, const std::vector<int> & positions, int num_heads, double base) {
    const Mat & xv = t.val(x);
    assert(static_cast<int>(positions.size()) == xv.rows);
    const int d_head = xv.cols / num_heads;
    assert(d_head % 2 == 0);
    Mat out(xv.rows, xv.cols);
    for (int i = 0; i < xv.rows; ++i) {
        for (int h = 0; h < num_heads; ++h) {
            const int off = h * d_head;
            for (int p = 0; p < d_head / 2; ++p) {
                const double theta = positions[i] * std::pow(base, -2.0 * p / d_head);
                const double c = std::cos(theta);
                const double s = std::sin(theta);
                const double x0 = xv.at(i, off + 2 * p);
                const double x1 = xv.at(i, off + 2 * p + 1);
                out.at(i, off + 2 * p)     = x0 * c - x1 * s;
                out.at(i, off + 2 * p + 1) = x0 * s + x1 * c;
            }
        }
    }
    const Var id = static_cast<Var>(t.size());
    t.record(std::move(out), [x, positions, num_heads, base, d_head, id](Tape & tp) {
        const Mat & g = tp.grad(id);
        Mat & gx = tp.grad(x);
        for (int i = 0; i < g.rows; ++i) {
            for (int h = 0; h < num_heads; ++h) {
                const int off = h * d_head;
                for (int p = 0; p < d_head / 2; ++p) {
                    const double theta = positions[i] * std::pow(base, -2.0 * p / d_head);
                    const double c = std::cos(theta);
                    const double s = std::sin(theta);
                    const double g0 = g.at(i, off + 2 * p);
                    const double g1 = g.at(i, off + 2 * p + 1);
                    gx.at(i, off + 2 * p)     += g0 * c + g1 * s;
                    gx.at(i, off + 2 * p + 1) += -g0 * s + g1 * c;
                }
            }
        }
    });
    return id;
}

Var attention(Tape & t, Var q, Var k, Var v, const AttentionMask & mask, int num_heads,
              Mat * probs_out) {
    const Mat & qv = t.val(q);
    const Mat & kv = t.val(k);
    const Mat & vv = t.val(v);
    const int n = qv.rows;
    const int d_model = qv.cols;
    const int d_head = d_model / num_heads;
    assert(kv.rows == n && vv.rows == n && mask.side == n);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));

    // per-head softmax weights, kept for backward
    auto probs = std::make_shared<std::vector<Mat>>();
    probs->reserve(num_heads);
    Mat out(n, d_model);
    for (int h = 0; h < num_heads; ++h) {
        const int off = h * d_head;
        Mat p(n, n);
        for (int i = 0; i < n; ++i) {
            double mx = -1e300;
            for (int j = 0; j <= i; ++j) {
                if (!mask.allowed(i, j)) {
                    continue;
                }
                double s = 0.0;
                for (int c = 0; c < d_head; ++c) {
                    s += qv.at(i, off + c) * kv.at(j, off + c);
                }
                s *= inv_sqrt;
                p.at(i, j) = s;
                mx = std::max(mx, s);
            }
            if (mx == -1e300) {
                throw std::domain_error("attention: fully masked row");
            }
            double z = 0.0;
            for (int j = 0; j <= i; ++j) {
                if (mask.allowed(i, j)) {
                    p.at(i, j) = std::exp(p.at(i, j) - mx);
                    z += p.at(i, j);
                } else {
                    p.at(i, j) = 0.0;
                }
            }
            for (int j = 0; j <= i; ++j) {
                p.at(i, j) /= z;
            }
            for (int j = 0; j <= i; ++j) {
                const double w = p.at(i, j);
                if (w == 0.0) {
                    continue;
                }
                for (int c = 0; c < d_head; ++c) {
                    out.at(i, off + c) += w * vv.at(j, off + c);
                }
            }
        }
        probs->push_back(std::move(p));
    }
    if (probs_out) {
        *probs_out = Mat(n, n);
        for (int h = 0; h < num_heads; ++h) {
            axpy(1.0 / num_heads, (*probs)[h], *probs_out);
        }
    }

    const Var id = static_cast<Var>(t.size());
    t.record(std::move(out), [q, k, v, probs, num_heads, d_head, inv_sqrt, n, id](Tape & tp) {
        const Mat & g  = tp.grad(id);
        const Mat & qv = tp.val(q);
        const Mat & kv = tp.val(k);
        const Mat & vv = tp.val(v);
        Mat & gq = tp.grad(q);
        Mat & gk = tp.grad(k);
        Mat & gv = tp.grad(v);
        for (int h = 0; h < num_heads; ++h) {
            const int off = h * d_head;
            const Mat & p = (*probs)[h];
            for (int i = 0; i < n; ++i) {
                // dP_ij = g_i . v_j ; dS = P o (dP - sum_j dP_ij P_ij)
                double row_dot = 0.0;
                std::vector<double> dp(i + 1, 0.0);
                for (int j = 0; j <= i; ++j) {
                    if (p.at(i, j) == 0.0) {
                        continue;
                    }
                    double d = 0.0;
                    for (int c = 0; c < d_head; ++c) {
                        d += g.at(i, off + c) * vv.at(j, off + c);
                    }
                    dp[j] = d;
                    row_dot += d * p.at(i, j);
                    // dV_j += P_ij * g_i
                    for (int c = 0; c < d_head; ++c) {
                        gv.at(j, off + c) += p.at(i, j) * g.at(i, off + c);
                    }
                }
                for (int j = 0; j <= i; ++j) {
                    const double w = p.at(i, j);
                    if (w == 0.0) {
                        continue;
                    }
                    const double ds = w * (dp[j] - row_dot) * inv_sqrt;
                    for (int c = 0; c < d_head; ++c) {
                        gq.at(i, off + c) += ds * kv.at(j, off + c);
                        gk.at(j, off + c) += ds * qv.at(i, off + c);
                    }
                }
            }
        }
    });
    return id;
}

Var softmax_cross_entropy(Tape & t, Var logits, std::vector<int> targets) {
    const Mat & lv = t.val(logits);
    if (static_cast<int>(targets.size()) != lv.rows) {
        throw std::invalid_argument("softmax_cross_entropy: target count mismatch");
    }
    double loss = 0.0;
    for (int i = 0; i < lv.rows; ++i) {
        double mx = lv.at(i, 0);
        for (int j = 1; j < lv.cols; ++j) {
            mx = std::max(mx, lv.at(i, j));
        }
        double z = 0.0;
        for (int j = 0; j < lv.cols; ++j) {
            z += std::exp(lv.at(i, j) - mx);
        }
        loss += std::log(z) + mx - lv.at(i, targets[i]);
    }
    loss /= lv.rows;
    Mat out(1, 1);
    out.at(0, 0) = loss;
    const Var id = static_cast<Var>(t.size());
    t.record(std::move(out), [logits, targets = std::move(targets), id](Tape & tp) {
        const double g = tp.grad(id).at(0, 0);
        const Mat & lv = tp.val(logits);
        Mat & gl = tp.grad(logits);
        const double inv_n = 1.0 / lv.rows;
        for (int i = 0; i < lv.rows; ++i) {
            double mx = lv.at(i, 0);
            for (int j = 1; j < lv.cols; ++j) {
                mx = std::max(mx, lv.at(i, j));
            }
            double z = 0.0;
            for (int j = 0; j < lv.cols; ++j) {
                z += std::exp(lv.at(i, j) - mx);
            }
            for (int j = 0; j < lv.cols; ++j) {
                double p = std::exp(lv.at(i, j) - mx) / z;
                if (j == targets[i]) {
                    p -= 1.0;
                }
                gl.at(i, j) += g * p * inv_n;
            }
        }
    });
    return id;
}

Var attn_pool(Tape & t, Var h, Var query) {
    const Mat & hv = t.val(h);
    const Mat & qv = t.val(query);
    assert(qv.rows == 1 && qv.cols == hv.cols);
    const int n = hv.rows;
    const int d = hv.cols;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> alpha(n);
    double mx = -1e300;
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) {
            s += hv.at(i, j) * qv.at(0, j);
        }
        alpha[i] = s * inv_sqrt;
        mx = std::max(mx, alpha[i]);
    }
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
        alpha[i] = std::exp(alpha[i] - mx);
        z += alpha[i];
    }
    for (int i = 0; i < n; ++i) {
        alpha[i] /= z;
    }
    Mat out(1, d);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            out.at(0, j) += alpha[i] * hv.at(i, j);
        }
    }
    const Var id = static_cast<Var>(t.size());
    t.record(std::move(out), [h, query, alpha = std::move(alpha), inv_sqrt, id](Tape & tp) {
        const Mat & g  = tp.grad(id);
        const Mat & hv = tp.val(h);
        const Mat & qv = tp.val(query);
        Mat & gh = tp.grad(h);
        Mat & gq = tp.grad(query);
        const int n = hv.rows;
        const int d = hv.cols;
        std::vector<double> da(n, 0.0);
        double dot = 0.0;
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int j = 0; j < d; ++j) {
                s += g.at(0, j) * hv.at(i, j);
                gh.at(i, j) += alpha[i] * g.at(0, j);
            }
            da[i] = s;
            dot += s * alpha[i];
        }
        for (int i = 0; i < n; ++i) {
            const double ds = alpha[i] * (da[i] - dot) * inv_sqrt;
            for (int j = 0; j < d; ++j) {
                gh.at(i, j) += ds * qv.at(0, j);
                gq.at(0, j) += ds * hv.at(i, j);
            }
        }
    });
    return id;
}

} // namespace chorus
