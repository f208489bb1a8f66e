#include <doctest.h>

#include "chorus/harness.hpp"
#include "chorus/training.hpp"
#include "helpers.hpp"

#include <filesystem>
#include <fstream>

using namespace chorus;
using namespace chorus::testutil;

TEST_CASE("precision_at_1 oracle cases") {
    std::mt19937_64 rng(1);
    // positives duplicate the queries -> 1.0
    std::vector<Mat> queries;
    std::vector<std::vector<Mat>> pools;
    std::vector<int> pos;
    for (int i = 0; i < 5; ++i) {
        const Mat q = random_mat(1, 8, rng);
        queries.push_back(q);
        std::vector<Mat> pool;
        for (int c = 0; c < 4; ++c) {
            pool.push_back(random_mat(1, 8, rng));
        }
        pool[2] = q;
        pools.push_back(pool);
        pos.push_back(2);
    }
    CHECK(precision_at_1(queries, pools, pos) == doctest::Approx(1.0));

    // agreement with an independent double-loop argmax
    auto cosine = [](const Mat & a, const Mat & b) {
        double d = 0, na = 0, nb = 0;
        for (size_t i = 0; i < a.a.size(); ++i) {
            d += a.a[i] * b.a[i];
            na += a.a[i] * a.a[i];
            nb += b.a[i] * b.a[i];
        }
        return d / std::sqrt(na * nb);
    };
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<Mat> qs;
        std::vector<std::vector<Mat>> ps;
        std::vector<int> pp;
        for (int i = 0; i < 8; ++i) {
            qs.push_back(random_mat(1, 6, rng));
            std::vector<Mat> pool;
            for (int c = 0; c < 7; ++c) {
                pool.push_back(random_mat(1, 6, rng));
            }
            ps.push_back(pool);
            pp.push_back(static_cast<int>(rng() % 7));
        }
        int hits = 0;
        for (int i = 0; i < 8; ++i) {
            int best = 0;
            for (int c = 1; c < 7; ++c) {
                if (cosine(qs[i], ps[i][c]) > cosine(qs[i], ps[i][best])) {
                    best = c;
                }
            }
            hits += best == pp[i];
        }
        CHECK(precision_at_1(qs, ps, pp) == doctest::Approx(hits / 8.0));
    }

    // random unit embeddings, pool 100: chance level ~1%
    std::vector<Mat> rq;
    std::vector<std::vector<Mat>> rp;
    std::vector<int> rpos;
    for (int i = 0; i < 1000; ++i) {
        rq.push_back(random_mat(1, 16, rng));
        std::vector<Mat> pool;
        for (int c = 0; c < 100; ++c) {
            pool.push_back(random_mat(1, 16, rng));
        }
        rp.push_back(std::move(pool));
        rpos.push_back(static_cast<int>(rng() % 100));
    }
    const double chance = precision_at_1(rq, rp, rpos);
    CHECK(chance >= 0.0);
    CHECK(chance <= 0.02 + 1e-9);

    CHECK_THROWS(precision_at_1({}, {}, {}));
    CHECK_THROWS(precision_at_1({rq[0]}, {std::vector<Mat>{}}, {0}));
}

TEST_CASE("answer_accuracy normalizes whitespace") {
    CHECK(answer_accuracy({"red", "3"}, {"red", "3"}) == doctest::Approx(1.0));
    CHECK(answer_accuracy({"red", "3"}, {"blue", "4"}) == doctest::Approx(0.0));
    CHECK(answer_accuracy({"blue "}, {"blue"}) == doctest::Approx(1.0));
    CHECK(answer_accuracy({" a  b "}, {"a b"}) == doctest::Approx(1.0));
    CHECK_THROWS(answer_accuracy({"a"}, {"a", "b"}));
}

TEST_CASE("attention heatmap rows are renormalized over vision keys") {
    const Vocab vocab(3, 3, 2, 2);
    ModelConfig cfg = tiny_config(vocab.size(), 4);
    const Parameters p = init_params(cfg, 3);
    Sample s;
    s.image = gen_image(2, 2, 3, 3, 4);
    s.e_inst = "represent the given image .";
    const Mat hm = attention_heatmap(p, s, 1, vocab);
    CHECK(hm.rows == cfg.k_chorus);
    CHECK(hm.cols == 4);
    for (int r = 0; r < hm.rows; ++r) {
        double sum = 0;
        for (int c = 0; c < hm.cols; ++c) {
            sum += hm.at(r, c);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    CHECK_THROWS(attention_heatmap(p, s, 5, vocab)); // layer out of range
    Sample text_only;
    text_only.e_inst = "red circle at r0c0 ;";
    CHECK_THROWS(attention_heatmap(p, text_only, 0, vocab)); // empty V
}

TEST_CASE("csv and svg exports are written") {
    Mat m(2, 3);
    for (int i = 0; i < 6; ++i) {
        m.a[i] = i * 0.1;
    }
    const auto dir = std::filesystem::temp_directory_path();
    const std::string csv = (dir / "chorus_hm.csv").string();
    const std::string svg = (dir / "chorus_hm.svg").string();
    save_csv(m, csv);
    save_heatmap_svg(m, svg);
    std::ifstream cf(csv);
    std::string line;
    std::getline(cf, line);
    CHECK(line == "0,0.1,0.2");
    std::ifstream sf(svg);
    const std::string svg_text((std::istreambuf_iterator<char>(sf)),
                               std::istreambuf_iterator<char>());
    CHECK(svg_text.find("<svg") != std::string::npos);
    CHECK(svg_text.find("<rect") != std::string::npos);
    std::filesystem::remove(csv);
    std::filesystem::remove(svg);
}

TEST_CASE("evaluate is a pure function of its inputs") {
    const Dataset ds = build_dataset(tiny_dataspec());
    const Vocab vocab = ds.spec.make_vocab();
    ModelConfig mc = tiny_config(vocab.size(), 4);
    const Parameters p = init_params(mc, 9);
    EvalConfig cfg;
    cfg.n_threads = 2;
    const EvalReport a = evaluate(p, ds, cfg);
    const EvalReport b = evaluate(p, ds, cfg);
    CHECK(a.precision_at_1 == b.precision_at_1);
    CHECK(a.native_accuracy == b.native_accuracy);
    CHECK(a.compressed_accuracy == b.compressed_accuracy);
    CHECK(a.precision_at_1 >= 0.0);
    CHECK(a.precision_at_1 <= 1.0);
    CHECK(a.to_json().find("precision_at_1") != std::string::npos);
    int total = 0;
    for (const auto & [task, st] : a.per_task) {
        total += st.n;
    }
    CHECK(total == 2 * static_cast<int>(ds.eval.size()));
}

TEST_CASE("training improves answer likelihood under both gate branches") {
    const Dataset ds = build_dataset(tiny_dataspec());
    const Vocab vocab = ds.spec.make_vocab();
    TrainConfig cfg;
    cfg.model = tiny_config(vocab.size(), 4);
    cfg.steps = 40;
    cfg.warmup_steps = 4;
    cfg.retrieval_batch = 8;
    cfg.gen_batch = 2;
    cfg.checkpoint_every = 0;
    cfg.n_threads = 1;
    const Parameters init = init_params(cfg.model, cfg.seed);
    const TrainResult res = train(cfg, ds, "");
    double z0_init = 0, z1_init = 0, z0 = 0, z1 = 0;
    for (const EvalItem & e : ds.eval) {
        const PromptLayout lo = assemble(generation_sample(e.grid, e.qa), AssembleMode::joint,
                                         cfg.model, vocab);
        z0_init += lm_loss(init, lo, 0);
        z1_init += lm_loss(init, lo, 1);
        z0 += lm_loss(res.params, lo, 0);
        z1 += lm_loss(res.params, lo, 1);
    }
    CHECK(z0 < z0_init);
    CHECK(z1 < z1_init);
}

TEST_CASE("joint training spreads chorus attention over vision tokens") {
    // mirrors the qualitative visualization claim: adding the generative
    // objective increases chorus-to-vision coverage vs retrieval-only
    const Dataset ds = build_dataset(tiny_dataspec());
    const Vocab vocab = ds.spec.make_vocab();
    TrainConfig base;
    base.model = tiny_config(vocab.size(), 4);
    base.steps = 60;
    base.warmup_steps = 6;
    base.retrieval_batch = 8;
    base.gen_batch = 2;
    base.checkpoint_every = 0;
    base.n_threads = 1;
    TrainConfig r_only = base;
    r_only.weights.alpha_g = 0.0;
    r_only.gen_batch = 0;
    const Parameters joint = train(base, ds, "").params;
    const Parameters retrieval = train(r_only, ds, "").params;

    auto coverage = [&](const Parameters & p) {
        int covered = 0, total = 0;
        for (int i = 0; i < 4; ++i) {
            const Mat hm = attention_heatmap(p, query_sample(ds.eval[i].grid),
                                             p.config.num_layers / 2, vocab);
            for (int c = 0; c < hm.cols; ++c) {
                double best = 0;
                for (int r = 0; r < hm.rows; ++r) {
                    best = std::max(best, hm.at(r, c));
                }
                covered += best > 1.0 / hm.cols;
                ++total;
            }
        }
        return static_cast<double>(covered) / total;
    };
    CHECK(coverage(joint) >= coverage(retrieval));
}
