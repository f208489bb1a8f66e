#include "chorus/model.hpp"

#include "chorus/decoder.hpp"
#include "chorus/vocab.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace chorus {

void ModelConfig::check() const {
    if (num_layers < 0 || num_heads < 1 || d_model < 1 || d_ff < 1 || vocab_size < 1 ||
        max_seq < 1 || rope_base <= 0.0) {
        throw std::invalid_argument("ModelConfig: non-positive dimension");
    }
    if (d_model % num_heads != 0) {
        throw std::invalid_argument("ModelConfig: d_model not divisible by num_heads");
    }
    if ((d_model / num_heads) % 2 != 0) {
        throw std::invalid_argument("ModelConfig: head dim must be even for rotary");
    }
    if (k_chorus < 1 || k_chorus > Vocab::MAX_CHORUS) {
        throw std::invalid_argument("ModelConfig: k_chorus out of range");
    }
    if (vocab_size < Vocab::CHORUS_BASE + k_chorus) {
        throw std::invalid_argument("ModelConfig: vocab_size too small for reserved tokens");
    }
}

Mat & Parameters::tensor(const std::string & name) {
    for (auto & [n, m] : tensors) {
        if (n == name) {
            return m;
        }
    }
    throw std::out_of_range("no tensor " + name);
}

const Mat & Parameters::tensor(const std::string & name) const {
    return const_cast<Parameters *>(this)->tensor(name);
}

size_t Parameters::n_scalars() const {
    size_t n = 0;
    for (const auto & [_, m] : tensors) {
        n += m.size();
    }
    return n;
}

Parameters init_params(const ModelConfig & config, uint64_t seed) {
    config.check();
    Parameters p;
    p.config = config;
    std::mt19937_64 rng(seed);
    auto normal = [&rng](Mat & m, double std) {
        // Box-Muller on raw 53-bit uniforms keeps init identical across stdlibs.
        for (size_t i = 0; i < m.a.size(); ++i) {
            const double u1 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
            const double u2 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
            m.a[i] = std * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        }
    };
    auto add = [&](const std::string & name, int r, int c, double std) {
        Mat m(r, c);
        if (std > 0.0) {
            normal(m, std);
        }
        p.tensors.emplace_back(name, std::move(m));
    };
    auto ones = [&](const std::string & name, int c) {
        Mat m(1, c);
        for (double & v : m.a) {
            v = 1.0;
        }
        p.tensors.emplace_back(name, std::move(m));
    };

    const double w_std = 0.02;
    const double resid_std = w_std / std::sqrt(2.0 * std::max(1, config.num_layers));
    add("tok_emb", config.vocab_size, config.d_model, w_std);
    for (int l = 0; l < config.num_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        ones(pre + "attn_norm", config.d_model);
        add(pre + "wq", config.d_model, config.d_model, w_std);
        add(pre + "wk", config.d_model, config.d_model, w_std);
        add(pre + "wv", config.d_model, config.d_model, w_std);
        add(pre + "wo", config.d_model, config.d_model, resid_std);
        ones(pre + "mlp_norm", config.d_model);
        add(pre + "w1", config.d_model, config.d_ff, w_std);
        add(pre + "w2", config.d_ff, config.d_model, resid_std);
    }
    add("pool.mlp_w1", config.d_model, config.d_model, w_std);
    add("pool.mlp_w2", config.d_model, config.d_model, w_std);
    add("pool.attn_q", 1, config.d_model, w_std);
    return p;
}

Parameters zeros_like(const Parameters & p) {
    Parameters z;
    z.config = p.config;
    z.tensors.reserve(p.tensors.size());
    for (const auto & [name, m] : p.tensors) {
        z.tensors.emplace_back(name, Mat(m.rows, m.cols));
    }
    return z;
}

ForwardOutput forward(const Parameters & params, const std::vector<int> & tokens,
                      const std::vector<int> & positions, const AttentionMask & mask,
                      AttnCapture * capture) {
    auto w = convert_weights<double>(params);
    auto out = full_forward<double>(w, tokens, positions, mask, true, capture);
    ForwardOutput fo;
    fo.hidden = Mat(out.hidden.rows, out.hidden.cols);
    fo.hidden.a = std::move(out.hidden.a);
    fo.logits = Mat(out.logits.rows, out.logits.cols);
    fo.logits.a = std::move(out.logits.a);
    return fo;
}

// ---- tape forward ----

Var BoundParams::var(const std::string & name) const {
    for (size_t i = 0; i < params->tensors.size(); ++i) {
        if (params->tensors[i].first == name) {
            return vars[i];
        }
    }
    throw std::out_of_range("no bound tensor " + name);
}

BoundParams bind(Tape & tape, const Parameters & params) {
    BoundParams bp;
    bp.params = &params;
    bp.vars.reserve(params.tensors.size());
    for (const auto & [_, m] : params.tensors) {
        bp.vars.push_back(tape.leaf(m));
    }
    return bp;
}

Var tape_hidden(Tape & tape, const BoundParams & bp, const std::vector<int> & tokens,
                const std::vector<int> & positions, const AttentionMask & mask) {
    const ModelConfig & cfg = bp.params->config;
    const int n = static_cast<int>(tokens.size());
    if (n == 0 || static_cast<int>(positions.size()) != n || mask.side != n) {
        throw std::invalid_argument("tape_hidden: tokens/positions/mask size mismatch");
    }
    if (n > cfg.max_seq) {
        throw std::length_error("tape_hidden: sequence exceeds max_seq");
    }
    for (int tok : tokens) {
        if (tok < 0 || tok >= cfg.vocab_size) {
            throw std::out_of_range("tape_hidden: token id out of vocabulary");
        }
    }
    Var x = gather_rows(tape, bp.var("tok_emb"), tokens);
    for (int l = 0; l < cfg.num_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        Var h = rmsnorm(tape, x, bp.var(pre + "attn_norm"));
        Var q = rotary(tape, matmul(tape, h, bp.var(pre + "wq")), positions, cfg.num_heads, cfg.rope_base);
        Var k = rotary(tape, matmul(tape, h, bp.var(pre + "wk")), positions, cfg.num_heads, cfg.rope_base);
        Var v = matmul(tape, h, bp.var(pre + "wv"));
        Var o = attention(tape, q, k, v, mask, cfg.num_heads);
        x = add(tape, x, matmul(tape, o, bp.var(pre + "wo")));
        Var h2 = rmsnorm(tape, x, bp.var(pre + "mlp_norm"));
        Var u = silu(tape, matmul(tape, h2, bp.var(pre + "w1")));
        x = add(tape, x, matmul(tape, u, bp.var(pre + "w2")));
    }
    return x;
}

Var tape_logits(Tape & tape, const BoundParams & bp, Var hidden) {
    return matmul(tape, hidden, bp.var("tok_emb"), /*trans_b=*/true);
}

void read_grads(Tape & tape, const BoundParams & bp, Parameters & grads) {
    for (size_t i = 0; i < bp.vars.size(); ++i) {
        axpy(1.0, tape.grad(bp.vars[i]), grads.tensors[i].second);
    }
}

double check_gradients(const Parameters & params, const std::function<double(const Parameters &)> & loss,
                       const Parameters & analytic, double epsilon, int samples_per_tensor,
                       uint64_t seed) {
    Parameters work = params;
    std::mt19937_64 rng(seed);
    double max_rel = 0.0;
    for (size_t ti = 0; ti < work.tensors.size(); ++ti) {
        Mat & m = work.tensors[ti].second;
        const Mat & g = analytic.tensors[ti].second;
        const int n = static_cast<int>(m.size());
        for (int s = 0; s < samples_per_tensor && s < n; ++s) {
            const size_t idx = rng() % n;
            const double orig = m.a[idx];
            m.a[idx] = orig + epsilon;
            const double lp = loss(work);
            m.a[idx] = orig - epsilon;
            const double lm = loss(work);
            m.a[idx] = orig;
            if (!std::isfinite(lp) || !std::isfinite(lm)) {
                throw std::domain_error("check_gradients: non-finite loss");
            }
            const double cd = (lp - lm) / (2.0 * epsilon);
            const double an = g.a[idx];
            const double rel = std::abs(an - cd) / std::max({std::abs(an), std::abs(cd), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

// ---- checkpoint io ----

namespace {

constexpr char k_magic[4] = {'C', 'G', 'P', 'T'};
constexpr uint32_t k_version = 1;

void put_u32(std::ostream & out, uint32_t v) {
    out.write(reinterpret_cast<const char *>(&v), sizeof v);
}
uint32_t get_u32(std::istream & in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char *>(&v), sizeof v);
    return v;
}

} // namespace

void save_checkpoint(const Parameters & params, const std::string & path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open checkpoint for writing: " + path);
    }
    out.write(k_magic, 4);
    put_u32(out, k_version);
    const ModelConfig & c = params.config;
    for (int v : {c.num_layers, c.num_heads, c.d_model, c.d_ff, c.vocab_size, c.k_chorus, c.max_seq}) {
        put_u32(out, static_cast<uint32_t>(v));
    }
    out.write(reinterpret_cast<const char *>(&c.rope_base), sizeof c.rope_base);
    put_u32(out, c.native_keep_einst ? 1 : 0);
    put_u32(out, static_cast<uint32_t>(params.tensors.size()));
    for (const auto & [name, m] : params.tensors) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, 2);
        put_u32(out, static_cast<uint32_t>(m.rows));
        put_u32(out, static_cast<uint32_t>(m.cols));
        std::vector<float> buf(m.size());
        for (size_t i = 0; i < m.size(); ++i) {
            buf[i] = static_cast<float>(m.a[i]);
        }
        out.write(reinterpret_cast<const char *>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) {
        throw std::runtime_error("checkpoint write failed: " + path);
    }
}

Parameters load_checkpoint(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint: " + path);
    }
    char magic[4];
    in.read(magic, 4);
    if (std::memcmp(magic, k_magic, 4) != 0) {
        throw std::runtime_error("bad checkpoint magic: " + path);
    }
    if (get_u32(in) != k_version) {
        throw std::runtime_error("unsupported checkpoint version: " + path);
    }
    Parameters p;
    ModelConfig & c = p.config;
    c.num_layers = static_cast<int>(get_u32(in));
    c.num_heads  = static_cast<int>(get_u32(in));
    c.d_model    = static_cast<int>(get_u32(in));
    c.d_ff       = static_cast<int>(get_u32(in));
    c.vocab_size = static_cast<int>(get_u32(in));
    c.k_chorus   = static_cast<int>(get_u32(in));
    c.max_seq    = static_cast<int>(get_u32(in));
    in.read(reinterpret_cast<char *>(&c.rope_base), sizeof c.rope_base);
    c.native_keep_einst = get_u32(in) != 0;
    const uint32_t n_tensors = get_u32(in);
    for (uint32_t t = 0; t < n_tensors; ++t) {
        const uint32_t name_len = get_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const uint32_t ndims = get_u32(in);
        if (ndims != 2) {
            throw std::runtime_error("unexpected tensor rank in checkpoint");
        }
        const int rows = static_cast<int>(get_u32(in));
        const int cols = static_cast<int>(get_u32(in));
        Mat m(rows, cols);
        std::vector<float> buf(m.size());
        in.read(reinterpret_cast<char *>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        for (size_t i = 0; i < m.size(); ++i) {
            m.a[i] = static_cast<double>(buf[i]);
        }
        p.tensors.emplace_back(std::move(name), std::move(m));
    }
    if (!in) {
        throw std::runtime_error("truncated checkpoint: " + path);
    }
    return p;
}

} // namespace chorus
