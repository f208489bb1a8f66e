// Acceptance checks, one per command-line argument 1..10. Each prints a
// single PASS/FAIL line; the process exits nonzero if any requested check
// fails.
#include "chorus/harness.hpp"
#include "chorus/inference.hpp"
#include "chorus/mask.hpp"
#include "chorus/training.hpp"
#include "helpers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace chorus;
using namespace chorus::testutil;

namespace {

double wall_seconds() {
    using clock = std::chrono::steady_clock;
    static const clock::time_point start = clock::now();
    return std::chrono::duration<double>(clock::now() - start).count();
}

double cpu_seconds() {
    timespec ts{};
    clock_gettime(CLOCK_PROCESS_CPUTIME_ID, &ts);
    return ts.tv_sec + 1e-9 * ts.tv_nsec;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

// 1. build_mask agrees with a brute-force transcription of the masking rule
// on 200 randomized layouts, in under a second.
Outcome criterion_1() {
    const double t0 = wall_seconds();
    std::mt19937_64 rng(2024);
    int agree = 0;
    for (int i = 0; i < 200; ++i) {
        const PromptLayout lo = random_layout(rng, i % 4 == 0);
        agree += mask_equals_bruteforce(lo, true) && mask_equals_bruteforce(lo, false);
    }
    const double dt = wall_seconds() - t0;
    std::ostringstream msg;
    msg << agree << "/200 layouts agree in " << dt << " s";
    return {agree == 200 && dt < 1.0, msg.str()};
}

// 2. Pruned decoding matches the masked full forward on 20 random tiny
// models, to 1e-5 in single and 1e-10 in double precision, in under 30 s.
template <typename T>
double pruned_decoding_diff(const Parameters & params, const Sample & sample, const Vocab & vocab) {
    const ModelConfig & cfg = params.config;
    const PromptLayout joint = assemble(sample, AssembleMode::joint, cfg, vocab);
    const PromptLayout prefix = assemble(sample, AssembleMode::embed, cfg, vocab);
    std::vector<int> pos(joint.size());
    for (int i = 0; i < joint.size(); ++i) {
        pos[i] = i;
    }
    const auto w = convert_weights<T>(params);
    const auto full = full_forward<T>(w, joint.tokens, pos, build_mask(joint, true));

    Decoder<T> dec(w);
    std::vector<int> ppos(prefix.size());
    std::vector<SegmentKind> kinds(prefix.size(), SegmentKind::SYS);
    for (const Span & s : prefix.spans) {
        for (int i = s.start; i < s.end; ++i) {
            kinds[i] = s.kind;
        }
    }
    for (int i = 0; i < prefix.size(); ++i) {
        ppos[i] = i;
    }
    dec.prefill(prefix.tokens, ppos, kinds, build_mask(prefix, true));
    dec.prune_vision_text();
    double worst = 0;
    for (int i = prefix.size(); i < joint.size(); ++i) {
        SegmentKind kind = SegmentKind::SYS;
        for (const Span & s : joint.spans) {
            if (i >= s.start && i < s.end) {
                kind = s.kind;
            }
        }
        const std::vector<T> lg = dec.step(joint.tokens[i], i, kind);
        for (int v = 0; v < cfg.vocab_size; ++v) {
            worst = std::max(worst, static_cast<double>(std::abs(lg[v] - full.logits.at(i, v))));
        }
    }
    return worst;
}

Outcome criterion_2() {
    const double t0 = wall_seconds();
    std::mt19937_64 rng(7);
    double worst_f = 0, worst_d = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const int n_shapes = 2 + static_cast<int>(rng() % 3);
        const int n_colors = 2 + static_cast<int>(rng() % 3);
        const Vocab vocab(n_shapes, n_colors, 2, 2);
        ModelConfig cfg;
        cfg.num_layers = 1 + static_cast<int>(rng() % 3);
        cfg.num_heads = 1 + static_cast<int>(rng() % 2);
        cfg.d_model = 8 * cfg.num_heads * (1 + static_cast<int>(rng() % 2));
        cfg.d_ff = cfg.d_model * 2;
        cfg.vocab_size = vocab.size();
        cfg.k_chorus = 1 + static_cast<int>(rng() % 8);
        const Parameters params = init_params(cfg, rng());

        const VisionGrid g = gen_image(2, 2, n_shapes, n_colors, rng());
        Sample s;
        s.image = g;
        s.e_inst = "represent the given image .";
        const QaPair qa = gen_qa(g, rng(), vocab);
        s.g_inst = qa.g_inst;
        s.answer = qa.answer;
        s.task = TaskKind::generation;
        worst_d = std::max(worst_d, pruned_decoding_diff<double>(params, s, vocab));
        worst_f = std::max(worst_f, pruned_decoding_diff<float>(params, s, vocab));
    }
    const double dt = wall_seconds() - t0;
    std::ostringstream msg;
    msg << "max |diff| single " << worst_f << " (<1e-5), double " << worst_d << " (<1e-10), " << dt
        << " s";
    return {worst_f < 1e-5 && worst_d < 1e-10 && dt < 30.0, msg.str()};
}

// Shared fixture for gradient checks over the combined objective.
struct GradFixture {
    Vocab vocab{3, 3, 2, 2};
    ModelConfig cfg;
    std::vector<PromptLayout> queries, targets;
    std::vector<GenSample> gens;

    GradFixture() {
        cfg.num_layers = 2;
        cfg.num_heads = 2;
        cfg.d_model = 16;
        cfg.d_ff = 24;
        cfg.vocab_size = vocab.size();
        cfg.k_chorus = 4;
        for (int i = 0; i < 3; ++i) {
            const VisionGrid g = gen_image(2, 2, 3, 3, 300 + i);
            Sample qs;
            qs.image = g;
            qs.e_inst = "represent the given image .";
            queries.push_back(assemble(qs, AssembleMode::embed, cfg, vocab));
            Sample ts;
            ts.e_inst = gen_caption(g, vocab);
            targets.push_back(assemble(ts, AssembleMode::embed, cfg, vocab));
            if (i < 2) {
                Sample js = qs;
                const QaPair qa = gen_qa(g, 400 + i, vocab);
                js.g_inst = qa.g_inst;
                js.answer = qa.answer;
                // both gate branches forced: one sample per z value
                gens.push_back({assemble(js, AssembleMode::joint, cfg, vocab), i});
            }
        }
    }

    double max_rel_err(PoolingMethod pooling) const {
        const LossWeights w{1.0, 0.5};
        const ScoringConfig sc;
        const Parameters p = init_params(cfg, 99);
        Parameters grads = zeros_like(p);
        total_loss(p, queries, targets, gens, w, sc, pooling, &grads, 1);
        auto loss = [&](const Parameters & q) {
            return total_loss(q, queries, targets, gens, w, sc, pooling, nullptr, 1).total;
        };
        return check_gradients(p, loss, grads, 1e-4, 4, 2025);
    }
};

// 3. Finite-difference fidelity of the combined loss gradient on a 2-layer
// d_model=16 model, both gate branches present, < 1e-4, < 2 min.
Outcome criterion_3() {
    const double t0 = wall_seconds();
    const GradFixture fx;
    const double err = fx.max_rel_err(PoolingMethod::Mean);
    const double dt = wall_seconds() - t0;
    std::ostringstream msg;
    msg << "max relative error " << err << " (<1e-4) in " << dt << " s";
    return {err < 1e-4 && dt < 120.0, msg.str()};
}

// 4. Contrastive-loss oracle values.
Outcome criterion_4() {
    double worst = 0;
    for (int n : {2, 4, 8}) {
        Mat e(1, 3);
        e.a = {0.4, -1.0, 0.25};
        std::vector<Mat> embs(n, e);
        worst = std::max(worst, std::abs(info_nce(embs, embs, 0.02) - std::log(n)));
    }
    Mat ex(1, 2), ey(1, 2);
    ex.a = {1, 0};
    ey.a = {0, 1};
    const double hand = info_nce({ex, ey}, {ex, ey}, 1.0);
    const double hand_err = std::abs(hand - 0.313262);
    std::ostringstream msg;
    msg << "ln-N error " << worst << ", hand-case error " << hand_err << " (both <1e-6)";
    return {worst < 1e-6 && hand_err < 1e-6, msg.str()};
}

// 5. Cache accounting: a consistent denominator inverted from the published
// ratio table, then confirmed with entries counted in a real prefill.
Outcome criterion_5() {
    const int ks[6] = {1, 4, 8, 16, 32, 64};
    const double table[6] = {0.07, 0.28, 0.56, 1.12, 2.24, 4.48};
    auto round2 = [](double v) { return std::round(v * 100.0) / 100.0; };

    // several denominators in the window reproduce the rounded table; the
    // real prefill below must land on one of them
    std::vector<int> candidates;
    for (int n = 1423; n <= 1433; ++n) {
        bool consistent = true;
        for (int i = 0; i < 6; ++i) {
            consistent = consistent && round2(cache_ratio(ks[i], n)) == table[i];
        }
        if (consistent) {
            candidates.push_back(n);
        }
    }
    if (candidates.empty()) {
        return {false, "no consistent denominator in [1423,1433]"};
    }

    // real prefill: 1399 vision tokens + 9 system + 5 instruction + 16 chorus
    const Vocab vocab(2, 2, 1, 1399);
    ModelConfig cfg;
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.d_model = 16;
    cfg.d_ff = 16;
    cfg.vocab_size = vocab.size();
    cfg.k_chorus = 16;
    cfg.max_seq = 2048;
    const Parameters params = init_params(cfg, 0);
    Sample s;
    s.image = gen_image(1, 1399, 2, 2, 1);
    s.e_inst = "represent the given image .";
    const PromptLayout prefix = assemble(s, AssembleMode::embed, cfg, vocab);
    std::vector<int> pos(prefix.size());
    std::vector<SegmentKind> kinds(prefix.size(), SegmentKind::SYS);
    for (const Span & sp : prefix.spans) {
        for (int i = sp.start; i < sp.end; ++i) {
            kinds[i] = sp.kind;
        }
    }
    for (int i = 0; i < prefix.size(); ++i) {
        pos[i] = i;
    }
    Decoder<double> dec(convert_weights<double>(params));
    dec.prefill(prefix.tokens, pos, kinds, build_mask(prefix, true));
    const int measured = dec.cache().entries();
    bool ok = std::find(candidates.begin(), candidates.end(), measured) != candidates.end();
    std::ostringstream msg;
    msg << candidates.size() << " consistent denominators, measured prefill " << measured
        << "; ratios";
    for (int i = 0; i < 6; ++i) {
        const double r = round2(cache_ratio(ks[i], measured));
        msg << " " << r;
        ok = ok && r == table[i];
    }
    return {ok, msg.str()};
}

std::string scratch_dir(const std::string & leaf) {
    const auto dir = std::filesystem::temp_directory_path() / "chorus_acceptance" / leaf;
    std::filesystem::create_directories(dir);
    return dir.string();
}

// 6. End-to-end desk run at the default configuration: retrieval and QA
// quality plus the compute budget (15 min on 4 cores = 3600 core-seconds;
// checked as process CPU time so the result is host-core-count independent).
Outcome criterion_6() {
    const double c0 = cpu_seconds();
    const DatasetSpec spec; // defaults: 2048 train / 200 eval / pool 100
    const Dataset ds = build_dataset(spec);
    TrainConfig cfg; // defaults: 2 layers, d_model 64, 2000 steps, seed 0
    const TrainResult res = train(cfg, ds, scratch_dir("c6"));
    EvalConfig ec;
    const EvalReport rep = evaluate(res.params, ds, ec);
    const double cpu = cpu_seconds() - c0;
    const bool p_ok = rep.precision_at_1 >= 0.90;
    const bool acc_ok = rep.compressed_accuracy >= 0.80 * rep.native_accuracy;
    const bool t_ok = cpu < 4 * 15 * 60;
    std::ostringstream msg;
    msg << "P@1 " << rep.precision_at_1 << " (>=0.90), native " << rep.native_accuracy
        << ", compressed " << rep.compressed_accuracy << " (>=0.8x native), cpu " << cpu
        << " s (<3600 core-s)";
    return {p_ok && acc_ok && t_ok, msg.str()};
}

// 7. Chorus-count ablation direction: k=16 at least matches k=1 on both
// retrieval precision and compressed accuracy under a shared reduced budget.
Outcome criterion_7() {
    DatasetSpec spec;
    spec.n_train = 1024;
    spec.n_eval = 100;
    const Dataset ds = build_dataset(spec);
    auto run = [&](int k) {
        TrainConfig cfg;
        cfg.model.k_chorus = k;
        cfg.steps = 2000;
        cfg.warmup_steps = 100;
        cfg.lr_max = 1e-2; // shared budget; only k differs between the runs
        const TrainResult res = train(cfg, ds, "");
        EvalConfig ec;
        return evaluate(res.params, ds, ec);
    };
    const EvalReport r1 = run(1);
    const EvalReport r16 = run(16);
    std::ostringstream msg;
    msg << "P@1 k=16 " << r16.precision_at_1 << " vs k=1 " << r1.precision_at_1
        << "; compressed k=16 " << r16.compressed_accuracy << " vs k=1 " << r1.compressed_accuracy;
    return {r16.precision_at_1 >= r1.precision_at_1 &&
                r16.compressed_accuracy >= r1.compressed_accuracy,
            msg.str()};
}

// 8. Bitwise determinism of training plus evaluation.
Outcome criterion_8() {
    DatasetSpec spec = tiny_dataspec();
    spec.n_train = 64;
    const Dataset ds = build_dataset(spec);
    TrainConfig cfg;
    cfg.model = tiny_config(ds.spec.make_vocab().size(), 4);
    cfg.steps = 40;
    cfg.warmup_steps = 4;
    cfg.retrieval_batch = 8;
    cfg.gen_batch = 2;
    cfg.n_threads = 2; // determinism must hold under parallel workers

    const std::string da = scratch_dir("c8a");
    const std::string db = scratch_dir("c8b");
    const TrainResult a = train(cfg, ds, da);
    const TrainResult b = train(cfg, ds, db);
    auto slurp = [](const std::string & p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    const bool ckpt_ok = slurp(da + "/final.bin") == slurp(db + "/final.bin") &&
                         !slurp(da + "/final.bin").empty();
    EvalConfig ec;
    ec.n_threads = 2;
    const EvalReport ra = evaluate(a.params, ds, ec);
    const EvalReport rb = evaluate(b.params, ds, ec);
    const bool rep_ok = ra.to_json() == rb.to_json();
    std::ostringstream msg;
    msg << "checkpoints byte-identical: " << (ckpt_ok ? "yes" : "no")
        << ", reports identical: " << (rep_ok ? "yes" : "no");
    return {ckpt_ok && rep_ok, msg.str()};
}

// 9. Pooling variants: mean is permutation-invariant; every variant is
// finite and passes the combined-loss gradient check.
Outcome criterion_9() {
    const GradFixture fx;
    const Parameters p = init_params(fx.cfg, 5);
    std::mt19937_64 rng(6);
    const Mat hidden = random_mat(8, fx.cfg.d_model, rng);
    PromptLayout lo;
    lo.tokens.assign(8, 0);
    lo.spans = {{SegmentKind::SYS, 0, 4}, {SegmentKind::U, 4, 8}};
    const Mat base = pool_chorus(hidden, lo, PoolingMethod::Mean, p);
    Mat perm = hidden;
    for (int c = 0; c < fx.cfg.d_model; ++c) {
        std::swap(perm.at(4, c), perm.at(7, c));
        std::swap(perm.at(5, c), perm.at(6, c));
    }
    const Mat permuted = pool_chorus(perm, lo, PoolingMethod::Mean, p);
    bool mean_ok = true; // up to summation reorder
    for (size_t i = 0; i < base.a.size(); ++i) {
        mean_ok = mean_ok && std::abs(base.a[i] - permuted.a[i]) < 1e-12;
    }

    bool finite_ok = true;
    double worst = 0;
    for (PoolingMethod m :
         {PoolingMethod::Mean, PoolingMethod::MLP, PoolingMethod::AttnQuery}) {
        const Mat e = pool_chorus(hidden, lo, m, p);
        finite_ok = finite_ok && all_finite(e) && e.cols == fx.cfg.d_model;
        worst = std::max(worst, fx.max_rel_err(m));
    }
    std::ostringstream msg;
    msg << "mean permutation-invariant: " << (mean_ok ? "yes" : "no")
        << ", variants finite: " << (finite_ok ? "yes" : "no") << ", worst gradient error "
        << worst << " (<1e-4)";
    return {mean_ok && finite_ok && worst < 1e-4, msg.str()};
}

// 10. Gate statistics.
Outcome criterion_10() {
    GateSampler half({0.5, 1234});
    int ones = 0;
    for (int i = 0; i < 10000; ++i) {
        ones += half.sample();
    }
    const double mean = ones / 10000.0;
    GateSampler zero({0.0, 1});
    GateSampler one({1.0, 1});
    bool const_ok = true;
    for (int i = 0; i < 10000; ++i) {
        const_ok = const_ok && zero.sample() == 0 && one.sample() == 1;
    }
    std::ostringstream msg;
    msg << "p=0.5 mean " << mean << " (in [0.48,0.52]), p in {0,1} exact: "
        << (const_ok ? "yes" : "no");
    return {mean >= 0.48 && mean <= 0.52 && const_ok, msg.str()};
}

Outcome run(int criterion) {
    switch (criterion) {
        case 1: return criterion_1();
        case 2: return criterion_2();
        case 3: return criterion_3();
        case 4: return criterion_4();
        case 5: return criterion_5();
        case 6: return criterion_6();
        case 7: return criterion_7();
        case 8: return criterion_8();
        case 9: return criterion_9();
        case 10: return criterion_10();
        default: throw std::invalid_argument("criterion must be 1..10");
    }
}

} // namespace

int main(int argc, char ** argv) {
    std::vector<int> which;
    if (argc <= 1) {
        for (int i = 1; i <= 10; ++i) {
            which.push_back(i);
        }
    } else {
        for (int a = 1; a < argc; ++a) {
            which.push_back(std::atoi(argv[a]));
        }
    }
    bool all_pass = true;
    for (int c : which) {
        Outcome o;
        try {
            o = run(c);
        } catch (const std::exception & e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::cout << "criterion " << c << ": " << (o.pass ? "PASS" : "FAIL") << " — " << o.detail
                  << std::endl;
        all_pass = all_pass && o.pass;
    }
    return all_pass ? 0 : 1;
}
