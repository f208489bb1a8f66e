#include "chorus/harness.hpp"
#include "chorus/training.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace chorus;

namespace {

void cmd_gen_data(const std::string & spec_path, const std::string & out) {
    DatasetSpec spec;
    if (!spec_path.empty()) {
        apply_dataset_spec(parse_kv_file(spec_path), spec);
    }
    const Dataset ds = build_dataset(spec);
    std::filesystem::create_directories(out);
    save_dataset(ds, out + "/dataset.jsonl");
    std::cout << "wrote " << out << "/dataset.jsonl: " << ds.train.size() << " train, "
              << ds.het.size() << " heterogeneous, " << ds.eval.size() << " eval\n";
}

void cmd_train(const std::string & cfg_path, const std::string & data, const std::string & out) {
    TrainConfig cfg;
    if (!cfg_path.empty()) {
        apply_train_config(parse_kv_file(cfg_path), cfg);
    }
    const Dataset ds = load_dataset(data + "/dataset.jsonl");
    const TrainResult res = train(cfg, ds, out);
    std::cout << "trained " << cfg.steps << " steps; final total loss "
              << (res.metrics.empty() ? 0.0 : res.metrics.back().total) << "; checkpoint " << out
              << "/final.bin\n";
}

void cmd_eval(const std::string & ckpt, const std::string & data, const std::string & out,
              const std::string & pooling) {
    const Parameters params = load_checkpoint(ckpt);
    const Dataset ds = load_dataset(data + "/dataset.jsonl");
    EvalConfig cfg;
    cfg.pooling = pooling_from_string(pooling);
    const EvalReport rep = evaluate(params, ds, cfg);
    const std::string json = rep.to_json();
    if (out.empty()) {
        std::cout << json << "\n";
    } else {
        std::ofstream f(out);
        f << json << "\n";
        if (!f) {
            throw std::runtime_error("cannot write report: " + out);
        }
        std::cout << "wrote " << out << "\n";
    }
}

void cmd_embed(const std::string & ckpt, const std::string & data, const std::string & out,
               const std::string & pooling, bool csv) {
    const Parameters params = load_checkpoint(ckpt);
    const Dataset ds = load_dataset(data + "/dataset.jsonl");
    const Vocab vocab = ds.spec.make_vocab();
    const PoolingMethod method = pooling_from_string(pooling);
    std::vector<Mat> embs;
    for (const EvalItem & e : ds.eval) {
        embs.push_back(encode(params, query_sample(e.grid), method, vocab));
    }
    if (csv) {
        save_embeddings_csv(embs, out);
    } else {
        save_embeddings(embs, out);
    }
    std::cout << "wrote " << embs.size() << " embeddings to " << out << "\n";
}

void cmd_generate(const std::string & ckpt, const std::string & data, int sample_idx,
                  const std::string & mode) {
    const Parameters params = load_checkpoint(ckpt);
    const Dataset ds = load_dataset(data + "/dataset.jsonl");
    const Vocab vocab = ds.spec.make_vocab();
    if (sample_idx < 0 || sample_idx >= static_cast<int>(ds.eval.size())) {
        throw std::runtime_error("sample index out of range");
    }
    const EvalItem & e = ds.eval[sample_idx];
    const Sample s = generation_sample(e.grid, e.qa);
    GenerationConfig gen;
    GenerationResult res;
    if (mode == "native") {
        res = generate_native(params, s, gen, vocab);
    } else if (mode == "compressed") {
        res = generate_compressed(params, s, gen, vocab);
    } else {
        throw CLI::ValidationError("mode must be native or compressed");
    }
    std::cout << "question:  " << e.qa.g_inst << "\n"
              << "gold:      " << e.qa.answer << "\n"
              << "generated: " << vocab.decode(res.tokens) << "\n"
              << "cache:     " << res.retained_entries << "/" << res.prefill_entries << " entries ("
              << res.cache_percent << "% reported)\n";
}

void cmd_visualize(const std::string & ckpt, const std::string & data, int sample_idx, int layer,
                   const std::string & out) {
    const Parameters params = load_checkpoint(ckpt);
    const Dataset ds = load_dataset(data + "/dataset.jsonl");
    const Vocab vocab = ds.spec.make_vocab();
    if (sample_idx < 0 || sample_idx >= static_cast<int>(ds.eval.size())) {
        throw std::runtime_error("sample index out of range");
    }
    if (layer < 0) {
        layer = params.config.num_layers / 2;
    }
    const Mat hm = attention_heatmap(params, query_sample(ds.eval[sample_idx].grid), layer, vocab);
    save_csv(hm, out);
    const std::string svg = out.substr(0, out.find_last_of('.')) + ".svg";
    save_heatmap_svg(hm, svg);
    std::cout << "wrote " << out << " and " << svg << " (" << hm.rows << "x" << hm.cols << ")\n";
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"chorus-token retrieval + compressed generation toolkit"};
    app.require_subcommand(1);

    std::string spec_path, cfg_path, data, out, ckpt, pooling = "mean", mode = "native";
    int sample_idx = 0, layer = -1;
    bool csv = false;

    auto * gen_data = app.add_subcommand("gen-data", "generate the synthetic dataset");
    gen_data->add_option("--spec", spec_path, "dataset spec (key = value)");
    gen_data->add_option("--out", out, "output directory")->required();

    auto * tr = app.add_subcommand("train", "train a model");
    tr->add_option("--config", cfg_path, "training config (key = value)");
    tr->add_option("--data", data, "dataset directory")->required();
    tr->add_option("--out", out, "checkpoint/metrics directory")->required();

    auto * ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--ckpt", ckpt, "checkpoint path")->required();
    ev->add_option("--data", data, "dataset directory")->required();
    ev->add_option("--out", out, "report path (stdout if omitted)");
    ev->add_option("--pooling", pooling, "mean|mlp|attn_query");

    auto * em = app.add_subcommand("embed", "export query embeddings");
    em->add_option("--ckpt", ckpt, "checkpoint path")->required();
    em->add_option("--data", data, "dataset directory")->required();
    em->add_option("--out", out, "output path")->required();
    em->add_option("--pooling", pooling, "mean|mlp|attn_query");
    em->add_flag("--csv", csv, "write CSV instead of binary");

    auto * ge = app.add_subcommand("generate", "answer one eval question");
    ge->add_option("--ckpt", ckpt, "checkpoint path")->required();
    ge->add_option("--data", data, "dataset directory")->required();
    ge->add_option("--sample", sample_idx, "eval sample index");
    ge->add_option("--mode", mode, "native|compressed");

    auto * vi = app.add_subcommand("visualize", "export a chorus-to-vision attention heatmap");
    vi->add_option("--ckpt", ckpt, "checkpoint path")->required();
    vi->add_option("--data", data, "dataset directory")->required();
    vi->add_option("--sample", sample_idx, "eval sample index");
    vi->add_option("--layer", layer, "layer index (default: middle)");
    vi->add_option("--out", out, "CSV path (SVG written alongside)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1; // usage errors -> 1
    }

    try {
        if (*gen_data) {
            cmd_gen_data(spec_path, out);
        } else if (*tr) {
            cmd_train(cfg_path, data, out);
        } else if (*ev) {
            cmd_eval(ckpt, data, out, pooling);
        } else if (*em) {
            cmd_embed(ckpt, data, out, pooling, csv);
        } else if (*ge) {
            cmd_generate(ckpt, data, sample_idx, mode);
        } else if (*vi) {
            cmd_visualize(ckpt, data, sample_idx, layer, out);
        }
    } catch (const std::exception & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
