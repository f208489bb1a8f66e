#include "chorus/training.hpp"

#include "chorus/util.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace chorus {

void TrainConfig::check() const {
    model.check();
    if (steps < 0 || warmup_steps < 0 || warmup_steps >= std::max(steps, 1)) {
        throw std::invalid_argument("TrainConfig: need 0 <= warmup_steps < steps");
    }
    if (retrieval_batch < 2) {
        throw std::invalid_argument("TrainConfig: retrieval_batch must be >= 2");
    }
    if (gen_batch < 0 || n_subbatches < 1 || retrieval_batch % n_subbatches != 0) {
        throw std::invalid_argument("TrainConfig: n_subbatches must divide retrieval_batch");
    }
    if (lr_max < 0 || lr_min < 0 || lr_min > lr_max) {
        throw std::invalid_argument("TrainConfig: need 0 <= lr_min <= lr_max");
    }
    if (weights.alpha_r < 0 || weights.alpha_g < 0 ||
        (weights.alpha_r == 0 && weights.alpha_g == 0)) {
        throw std::invalid_argument("TrainConfig: loss weights invalid");
    }
    if (gate.p < 0 || gate.p > 1 || scoring.temperature <= 0) {
        throw std::invalid_argument("TrainConfig: gate/scoring invalid");
    }
}

OptimizerState init_optimizer(const Parameters & params) {
    return {zeros_like(params), zeros_like(params), 0};
}

std::vector<IndexBatch> interleaved_batches(const std::vector<int> & dataset_sizes, int batch_size,
                                            int n, uint64_t seed) {
    if (n < 1 || batch_size < 1 || batch_size % n != 0) {
        throw std::invalid_argument("interleaved_batches: n must divide batch_size");
    }
    const int sub = batch_size / n;
    std::mt19937_64 rng(seed);
    // shuffle each dataset, chop into single-source sub-batches
    std::vector<IndexBatch> subs;
    for (int d = 0; d < static_cast<int>(dataset_sizes.size()); ++d) {
        if (dataset_sizes[d] < sub) {
            throw std::invalid_argument("interleaved_batches: dataset smaller than sub-batch");
        }
        std::vector<int> idx(dataset_sizes[d]);
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (size_t off = 0; off < idx.size(); off += sub) {
            IndexBatch sb;
            for (size_t i = off; i < std::min(off + sub, idx.size()); ++i) {
                sb.emplace_back(d, idx[i]);
            }
            subs.push_back(std::move(sb));
        }
    }
    std::shuffle(subs.begin(), subs.end(), rng);
    std::vector<IndexBatch> batches;
    for (size_t off = 0; off < subs.size(); off += n) {
        IndexBatch b;
        for (size_t i = off; i < std::min(off + static_cast<size_t>(n), subs.size()); ++i) {
            b.insert(b.end(), subs[i].begin(), subs[i].end());
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

double lr_schedule(int step, const TrainConfig & cfg) {
    if (step < 0 || step > cfg.steps) {
        throw std::out_of_range("lr_schedule: step out of range");
    }
    if (step <= cfg.warmup_steps) {
        if (cfg.warmup_steps == 0) {
            return cfg.lr_max;
        }
        return cfg.lr_max * step / cfg.warmup_steps;
    }
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            (cfg.steps - cfg.warmup_steps);
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(M_PI * progress));
}

void optimizer_step(Parameters & params, const Parameters & grads, OptimizerState & state,
                    double lr, const TrainConfig & cfg) {
    for (const auto & [name, g] : grads.tensors) {
        if (!all_finite(g)) {
            throw std::runtime_error("optimizer_step: non-finite gradient in " + name);
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t t = 0; t < params.tensors.size(); ++t) {
        auto & p = params.tensors[t].second.a;
        const auto & g = grads.tensors[t].second.a;
        auto & m = state.m.tensors[t].second.a;
        auto & v = state.v.tensors[t].second.a;
        for (size_t i = 0; i < p.size(); ++i) {
            p[i] *= 1.0 - lr * cfg.weight_decay;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
    }
}

StepMetrics train_step(Parameters & params, OptimizerState & state, const StepBatch & batch,
                       const TrainConfig & cfg, int step) {
    const int n_threads = cfg.n_threads > 0 ? cfg.n_threads : default_threads();
    Parameters grads = zeros_like(params);
    const TotalLossParts parts = total_loss(params, batch.queries, batch.targets, batch.gen,
                                            cfg.weights, cfg.scoring, cfg.pooling, &grads,
                                            n_threads);
    StepMetrics m;
    m.step = step;
    m.lr = lr_schedule(step + 1, cfg);
    m.l_r = parts.retrieval;
    m.l_g = parts.generation;
    m.total = parts.total;
    if (!batch.gen.empty()) {
        int z1 = 0;
        for (const GenSample & s : batch.gen) {
            z1 += s.z;
        }
        m.z_rate = static_cast<double>(z1) / batch.gen.size();
    }
    optimizer_step(params, grads, state, m.lr, cfg);
    return m;
}

namespace {

StepBatch assemble_step_batch(const Dataset & ds, const Vocab & vocab, const TrainConfig & cfg,
                              const IndexBatch & retrieval_idx, std::mt19937_64 & rng,
                              GateSampler & gate) {
    StepBatch b;
    for (const auto & [d, i] : retrieval_idx) {
        (void) d; // single retrieval source
        const TrainPair & p = ds.train[i];
        b.queries.push_back(assemble(query_sample(p.grid), AssembleMode::embed, cfg.model, vocab));
        b.targets.push_back(assemble(target_sample(p.caption), AssembleMode::embed, cfg.model,
                                     vocab));
    }
    if (cfg.weights.alpha_g > 0 && cfg.gen_batch > 0) {
        // homogeneous: qa labels of pairs drawn from this retrieval batch
        for (int i = 0; i < cfg.gen_batch; ++i) {
            const auto & [d, j] = retrieval_idx[rng() % retrieval_idx.size()];
            (void) d;
            const TrainPair & p = ds.train[j];
            GenSample g;
            g.layout = assemble(generation_sample(p.grid, p.qa), AssembleMode::joint, cfg.model,
                                vocab);
            g.z = gate.sample();
            b.gen.push_back(std::move(g));
        }
        // heterogeneous: an independent generation-only source
        for (int i = 0; i < cfg.gen_batch && !ds.het.empty(); ++i) {
            const HetSample & h = ds.het[rng() % ds.het.size()];
            GenSample g;
            g.layout = assemble(generation_sample(h.grid, h.qa), AssembleMode::joint, cfg.model,
                                vocab);
            g.z = gate.sample();
            b.gen.push_back(std::move(g));
        }
    }
    return b;
}

} // namespace

TrainResult train(const TrainConfig & cfg_in, const Dataset & ds, const std::string & out_dir) {
    TrainConfig cfg = cfg_in;
    const Vocab vocab = ds.spec.make_vocab();
    if (cfg.model.vocab_size == 0) {
        cfg.model.vocab_size = vocab.size();
    }
    cfg.check();
    if (static_cast<int>(ds.train.size()) < cfg.retrieval_batch / cfg.n_subbatches) {
        throw std::invalid_argument("train: dataset smaller than a retrieval sub-batch");
    }

    TrainResult res;
    res.params = init_params(cfg.model, cfg.seed);
    OptimizerState state = init_optimizer(res.params);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    GateSampler gate(cfg.gate);

    std::ofstream metrics_out;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        metrics_out.open(out_dir + "/metrics.jsonl");
        if (!metrics_out) {
            throw std::runtime_error("train: cannot open metrics log in " + out_dir);
        }
    }

    std::vector<IndexBatch> epoch;
    size_t cursor = 0;
    uint64_t epoch_seed = cfg.seed;
    for (int step = 0; step < cfg.steps; ++step) {
        // refill the retrieval stream epoch by epoch; drop undersized tails
        while (cursor >= epoch.size()) {
            epoch = interleaved_batches({static_cast<int>(ds.train.size())}, cfg.retrieval_batch,
                                        cfg.n_subbatches, epoch_seed++);
            std::erase_if(epoch, [](const IndexBatch & b) { return b.size() < 2; });
            cursor = 0;
        }
        const StepBatch batch = assemble_step_batch(ds, vocab, cfg, epoch[cursor++], rng, gate);
        StepMetrics m;
        try {
            m = train_step(res.params, state, batch, cfg, step);
        } catch (const std::exception & e) {
            throw std::runtime_error("train: step " + std::to_string(step) + ": " + e.what());
        }
        res.metrics.push_back(m);
        if (metrics_out) {
            nlohmann::json rec = {{"step", m.step},   {"lr", m.lr},       {"L_r", m.l_r},
                                  {"L_g", m.l_g},     {"total", m.total}, {"z_rate", m.z_rate}};
            metrics_out << rec.dump() << "\n";
        }
        if (!out_dir.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < cfg.steps) {
            save_checkpoint(res.params, out_dir + "/ckpt-" + std::to_string(step + 1) + ".bin");
        }
    }
    if (!out_dir.empty()) {
        save_checkpoint(res.params, out_dir + "/final.bin");
        if (metrics_out) {
            metrics_out.flush();
            if (!metrics_out) {
                throw std::runtime_error("train: metrics log write failed");
            }
        }
    }
    return res;
}

// ---- config files ----

std::map<std::string, std::string> parse_kv_file(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config: " + path);
    }
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        auto trim = [](std::string s) {
            const size_t b = s.find_first_not_of(" \t\r");
            const size_t e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key = value");
        }
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

namespace {

template <typename T>
void set_num(const std::map<std::string, std::string> & kv, const std::string & key, T & out) {
    auto it = kv.find(key);
    if (it == kv.end()) {
        return;
    }
    std::istringstream in(it->second);
    T v;
    if (!(in >> v)) {
        throw std::runtime_error("config: bad value for " + key + ": " + it->second);
    }
    out = v;
}

const std::set<std::string> k_train_keys = {
    "num_layers", "num_heads",  "d_model",        "d_ff",          "k_chorus",
    "max_seq",    "rope_base",  "native_keep_einst", "steps",      "warmup_steps",
    "lr_max",     "lr_min",     "retrieval_batch", "gen_batch",    "n_subbatches",
    "alpha_r",    "alpha_g",    "gate_p",          "gate_seed",    "temperature",
    "pooling",    "beta1",      "beta2",           "eps",          "weight_decay",
    "seed",       "checkpoint_every", "n_threads"};

const std::set<std::string> k_data_keys = {
    "n_train", "n_eval",   "n_heterogeneous", "grid_rows",           "grid_cols",
    "n_shapes", "n_colors", "seed",            "candidate_pool_size"};

void check_keys(const std::map<std::string, std::string> & kv, const std::set<std::string> & known) {
    for (const auto & [k, v] : kv) {
        if (!known.count(k)) {
            throw std::runtime_error("config: unknown key: " + k);
        }
    }
}

} // namespace

void apply_train_config(const std::map<std::string, std::string> & kv, TrainConfig & cfg) {
    check_keys(kv, k_train_keys);
    set_num(kv, "num_layers", cfg.model.num_layers);
    set_num(kv, "num_heads", cfg.model.num_heads);
    set_num(kv, "d_model", cfg.model.d_model);
    set_num(kv, "d_ff", cfg.model.d_ff);
    set_num(kv, "k_chorus", cfg.model.k_chorus);
    set_num(kv, "max_seq", cfg.model.max_seq);
    set_num(kv, "rope_base", cfg.model.rope_base);
    int keep = cfg.model.native_keep_einst ? 1 : 0;
    set_num(kv, "native_keep_einst", keep);
    cfg.model.native_keep_einst = keep != 0;
    set_num(kv, "steps", cfg.steps);
    set_num(kv, "warmup_steps", cfg.warmup_steps);
    set_num(kv, "lr_max", cfg.lr_max);
    set_num(kv, "lr_min", cfg.lr_min);
    set_num(kv, "retrieval_batch", cfg.retrieval_batch);
    set_num(kv, "gen_batch", cfg.gen_batch);
    set_num(kv, "n_subbatches", cfg.n_subbatches);
    set_num(kv, "alpha_r", cfg.weights.alpha_r);
    set_num(kv, "alpha_g", cfg.weights.alpha_g);
    set_num(kv, "gate_p", cfg.gate.p);
    set_num(kv, "gate_seed", cfg.gate.seed);
    set_num(kv, "temperature", cfg.scoring.temperature);
    if (kv.count("pooling")) {
        cfg.pooling = pooling_from_string(kv.at("pooling"));
    }
    set_num(kv, "beta1", cfg.beta1);
    set_num(kv, "beta2", cfg.beta2);
    set_num(kv, "eps", cfg.eps);
    set_num(kv, "weight_decay", cfg.weight_decay);
    set_num(kv, "seed", cfg.seed);
    set_num(kv, "checkpoint_every", cfg.checkpoint_every);
    set_num(kv, "n_threads", cfg.n_threads);
}

void apply_dataset_spec(const std::map<std::string, std::string> & kv, DatasetSpec & spec) {
    check_keys(kv, k_data_keys);
    set_num(kv, "n_train", spec.n_train);
    set_num(kv, "n_eval", spec.n_eval);
    set_num(kv, "n_heterogeneous", spec.n_heterogeneous);
    set_num(kv, "grid_rows", spec.grid_rows);
    set_num(kv, "grid_cols", spec.grid_cols);
    set_num(kv, "n_shapes", spec.n_shapes);
    set_num(kv, "n_colors", spec.n_colors);
    set_num(kv, "candidate_pool_size", spec.candidate_pool_size);
    set_num(kv, "seed", spec.seed);
}

} // namespace chorus
