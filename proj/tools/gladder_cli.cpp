// gladder: side-tuned node classification on text-attributed graphs.
//
// Subcommands: precompute, train, eval, infer, bench. All randomness funnels
// through --seed; wall-clock fields in bench reports are the only
// non-deterministic outputs. Exit codes: 0 success, 1 usage, 2 validation,
// 3 runtime failure.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gladder/bench.hpp"
#include "gladder/cache.hpp"
#include "gladder/config.hpp"
#include "gladder/errors.hpp"
#include "gladder/graph.hpp"
#include "gladder/inference.hpp"
#include "gladder/manifest.hpp"
#include "gladder/sidenet.hpp"
#include "gladder/training.hpp"

namespace {

using namespace gladder;

struct CommonArgs {
    std::string graph_path;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
    cmd->add_option("--graph", args.graph_path, "graph file (ingestion format)")->required();
    auto* copt = cmd->add_option("--config", args.config_path, "run config (key=value file)");
    if (config_required) copt->required();
    cmd->add_option("--seed", args.seed, "override the config seed");
    cmd->add_option("--threads", args.threads, "worker threads for precompute/bench")->default_val(1);
}

RunConfig load_run_config(const CommonArgs& args) {
    RunConfig rc = args.config_path.empty() ? RunConfig{} : RunConfig::load(args.config_path);
    if (args.seed) rc.seed = *args.seed;
    return rc;
}

// Default cache location: $GLADDER_CACHE_DIR (or cwd) / <graph stem>.glec.
std::string default_cache_path(const std::string& graph_path) {
    std::string stem = graph_path;
    std::size_t slash = stem.find_last_of('/');
    if (slash != std::string::npos) stem = stem.substr(slash + 1);
    std::size_t dot = stem.find_last_of('.');
    if (dot != std::string::npos && dot > 0) stem = stem.substr(0, dot);
    const char* dir = std::getenv("GLADDER_CACHE_DIR");
    std::string base = dir && *dir ? std::string(dir) : std::string(".");
    if (!base.empty() && base.back() != '/') base += '/';
    return base + stem + ".glec";
}

void apply_ablations(SideNetConfig& side, const std::vector<std::string>& ablations) {
    for (const auto& a : ablations) {
        if (a == "no-struct") {
            side.use_structure = false;
        } else if (a == "const-lambda") {
            side.learnable_gate = false;
        } else {
            throw ValidationError("unknown ablation '" + a + "' (expected no-struct or const-lambda)");
        }
    }
}

// Cache loaded for training/eval must cover the run's schedule exactly.
void check_cache_compatible(const EmbeddingCache& cache, const TextualGraph& g, const RunConfig& rc) {
    if (cache.num_nodes != g.num_nodes) {
        throw ValidationError("cache covers " + std::to_string(cache.num_nodes) + " nodes but graph has " +
                              std::to_string(g.num_nodes));
    }
    if (cache.dim != rc.backbone.model_dim) {
        throw ValidationError("cache dim " + std::to_string(cache.dim) + " does not match backbone dim " +
                              std::to_string(rc.backbone.model_dim));
    }
    for (int layer : rc.schedule()) {
        if (!cache.has_layer(layer)) {
            throw ValidationError("schedule mismatch: cache is missing inserted layer " + std::to_string(layer));
        }
    }
}

std::vector<NodeId> select_nodes(const TextualGraph& g, const std::string& which) {
    if (which == "all") {
        std::vector<NodeId> out(g.num_nodes);
        for (std::size_t v = 0; v < g.num_nodes; ++v) out[v] = static_cast<NodeId>(v);
        return out;
    }
    if (which == "train") return g.split_nodes(Split::Train);
    if (which == "val") return g.split_nodes(Split::Val);
    if (which == "test") return g.split_nodes(Split::Test);
    throw ValidationError("--nodes must be all|train|val|test, got '" + which + "'");
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw ValidationError("--split must be train|val|test, got '" + s + "'");
}

int cmd_precompute(const CommonArgs& args, std::string out_path) {
    TextualGraph g = load_graph(args.graph_path);
    RunConfig rc = load_run_config(args);
    if (out_path.empty()) out_path = default_cache_path(args.graph_path);
    ToyTransformer encoder(rc.backbone);
    EmbeddingCache cache = precompute_cache(encoder, g, rc.schedule(), args.threads);
    cache.save(out_path);
    RunManifest manifest;
    manifest.command = "precompute";
    manifest.config_hash = rc.hash();
    manifest.graph_path = args.graph_path;
    manifest.cache_path = out_path;
    manifest.seed = rc.seed;
    manifest.stamp_now();
    manifest.add_artifact(out_path);
    manifest.write(out_path + ".manifest.json");
    std::cout << "cache written: " << out_path << " (N=" << cache.num_nodes << ", D=" << cache.dim << ", layers="
              << cache.inserted_layers.size() << ")\n";
    return 0;
}

int cmd_train(const CommonArgs& args, const std::string& cache_path, const std::string& checkpoint_path,
              std::string metrics_path, const std::vector<std::string>& ablations) {
    TextualGraph g = load_graph(args.graph_path);
    RunConfig rc = load_run_config(args);
    SideNetConfig side = rc.side_config(g.num_classes);
    apply_ablations(side, ablations);

    ToyTransformer encoder(rc.backbone);
    std::unique_ptr<EmbeddingCache> cache;
    std::unique_ptr<EmbeddingProvider> provider;
    TrainConfig tc = rc.train_config();
    if (!cache_path.empty()) {
        cache = std::make_unique<EmbeddingCache>(EmbeddingCache::load(cache_path));
        check_cache_compatible(*cache, g, rc);
        provider = std::make_unique<CacheProvider>(*cache);
        tc.use_cache = true;
    } else {
        provider = std::make_unique<LiveProvider>(encoder, g);
    }

    if (metrics_path.empty()) metrics_path = checkpoint_path + ".metrics.jsonl";
    GLadderStack stack(side);
    TrainResult result = train(g, *provider, stack, rc.sampler_config(), tc, metrics_path);
    save_checkpoint(stack, checkpoint_path);

    RunManifest manifest;
    manifest.command = "train";
    manifest.config_hash = rc.hash();
    manifest.graph_path = args.graph_path;
    manifest.cache_path = cache_path;
    manifest.checkpoint_path = checkpoint_path;
    manifest.seed = rc.seed;
    manifest.stamp_now();
    manifest.add_artifact(checkpoint_path);
    manifest.add_artifact(metrics_path);
    manifest.write(checkpoint_path + ".manifest.json");

    std::printf("epochs=%zu steps=%zu best_epoch=%zu val_acc=%.6f test_acc=%.6f\n", result.epochs_run,
                result.optimizer_steps, result.best_epoch, result.final_val_acc, result.final_test_acc);
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_path, const std::string& cache_path,
             const std::string& split_name_str) {
    TextualGraph g = load_graph(args.graph_path);
    RunConfig rc = load_run_config(args);
    std::vector<int> schedule = rc.schedule();
    GLadderStack stack = load_checkpoint(checkpoint_path, rc.backbone.num_layers, rc.backbone.model_dim, &schedule);

    ToyTransformer encoder(rc.backbone);
    std::unique_ptr<EmbeddingCache> cache;
    std::unique_ptr<EmbeddingProvider> provider;
    if (!cache_path.empty()) {
        cache = std::make_unique<EmbeddingCache>(EmbeddingCache::load(cache_path));
        check_cache_compatible(*cache, g, rc);
        provider = std::make_unique<CacheProvider>(*cache);
    } else {
        provider = std::make_unique<LiveProvider>(encoder, g);
    }
    double acc = evaluate(g, *provider, stack, rc.sampler_config(), parse_split(split_name_str));
    std::printf("split=%s accuracy=%.6f\n", split_name_str.c_str(), acc);
    return 0;
}

int cmd_infer(const CommonArgs& args, const std::string& checkpoint_path, const std::string& cache_path,
              bool early_exit, std::size_t patience, const std::string& nodes_spec, std::string out_path,
              std::string stats_path) {
    TextualGraph g = load_graph(args.graph_path);
    RunConfig rc = load_run_config(args);
    std::vector<int> schedule = rc.schedule();
    GLadderStack stack = load_checkpoint(checkpoint_path, rc.backbone.num_layers, rc.backbone.model_dim, &schedule);

    ToyTransformer encoder(rc.backbone);
    std::unique_ptr<EmbeddingCache> cache;
    std::unique_ptr<EmbeddingProvider> provider;
    if (!cache_path.empty()) {
        cache = std::make_unique<EmbeddingCache>(EmbeddingCache::load(cache_path));
        check_cache_compatible(*cache, g, rc);
        provider = std::make_unique<CacheProvider>(*cache);
    } else {
        provider = std::make_unique<LiveProvider>(encoder, g);
    }

    std::vector<NodeId> nodes = select_nodes(g, nodes_spec);
    if (out_path.empty()) out_path = checkpoint_path + ".predictions.tsv";
    if (stats_path.empty()) stats_path = out_path + ".stats.json";

    PatienceConfig pc;
    pc.patience = patience;
    pc.enabled = early_exit;
    pc.validate();

    SamplerConfig scfg = eval_sampler_config(rc.sampler_config());
    ExitStats stats;
    stats.histogram.assign(stack.config().schedule.size(), 0);
    stats.nodes = nodes.size();
    std::size_t correct = 0;
    std::size_t layer_sum = 0;
    std::ofstream preds(out_path, std::ios::trunc);
    if (!preds) throw RuntimeFailure("cannot write predictions: " + out_path);
    for (NodeId v : nodes) {
        Subgraph sub = sample_subgraph(g, v, scfg);
        EarlyExitResult res = infer_early_exit(stack, *provider, sub, pc);
        preds << v << '\t' << res.predicted << "\n";
        ++stats.histogram[res.exit_index];
        layer_sum += res.ladders_evaluated;
        if (res.predicted == g.labels[v]) ++correct;
    }
    preds.close();
    stats.accuracy = nodes.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(nodes.size());
    stats.mean_layers = nodes.empty() ? 0.0 : static_cast<double>(layer_sum) / static_cast<double>(nodes.size());
    {
        std::ofstream sf(stats_path, std::ios::trunc);
        if (!sf) throw RuntimeFailure("cannot write exit stats: " + stats_path);
        sf << stats.to_json() << "\n";
    }

    RunManifest manifest;
    manifest.command = "infer";
    manifest.config_hash = rc.hash();
    manifest.graph_path = args.graph_path;
    manifest.cache_path = cache_path;
    manifest.checkpoint_path = checkpoint_path;
    manifest.seed = rc.seed;
    manifest.stamp_now();
    manifest.add_artifact(out_path);
    manifest.add_artifact(stats_path);
    manifest.write(out_path + ".manifest.json");

    std::printf("nodes=%zu early_exit=%d patience=%zu accuracy=%.6f mean_layers=%.4f\n", nodes.size(),
                early_exit ? 1 : 0, patience, stats.accuracy, stats.mean_layers);
    return 0;
}

int cmd_bench(const CommonArgs& args, std::string out_path) {
    TextualGraph g = load_graph(args.graph_path);
    RunConfig rc = load_run_config(args);
    if (out_path.empty()) out_path = "bench_report.json";
    BenchReport report = run_bench(g, rc, args.threads);
    {
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) throw RuntimeFailure("cannot write bench report: " + out_path);
        out << report.to_json() << "\n";
    }
    RunManifest manifest;
    manifest.command = "bench";
    manifest.config_hash = rc.hash();
    manifest.graph_path = args.graph_path;
    manifest.seed = rc.seed;
    manifest.stamp_now();
    manifest.add_artifact(out_path);
    manifest.write(out_path + ".manifest.json");
    std::cout << report.to_json() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"side-tuned node classification on text-attributed graphs"};
    app.require_subcommand(1);

    CommonArgs pre_args;
    std::string pre_out;
    auto* pre = app.add_subcommand("precompute", "precompute pooled node embeddings into a cache file");
    add_common(pre, pre_args);
    pre->add_option("--out", pre_out, "cache output path (default: $GLADDER_CACHE_DIR/<graph>.glec)");

    CommonArgs train_args;
    std::string train_cache, train_checkpoint, train_metrics;
    std::vector<std::string> train_ablate;
    auto* tr = app.add_subcommand("train", "train the side network");
    add_common(tr, train_args);
    tr->add_option("--cache", train_cache, "embedding cache file (enables cached training)");
    tr->add_option("--checkpoint", train_checkpoint, "checkpoint output path")->required();
    tr->add_option("--metrics", train_metrics, "metrics log path (default: <checkpoint>.metrics.jsonl)");
    tr->add_option("--ablate", train_ablate, "ablation: no-struct or const-lambda (repeatable)");

    CommonArgs eval_args;
    std::string eval_checkpoint, eval_cache, eval_split = "test";
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    add_common(ev, eval_args);
    ev->add_option("--checkpoint", eval_checkpoint, "checkpoint to evaluate")->required();
    ev->add_option("--cache", eval_cache, "embedding cache file");
    ev->add_option("--split", eval_split, "train|val|test (default test)");

    CommonArgs infer_args;
    std::string infer_checkpoint, infer_cache, infer_nodes = "all", infer_out, infer_stats;
    bool infer_early = false;
    std::size_t infer_patience = 2;
    auto* in = app.add_subcommand("infer", "predict classes, optionally with patience-based early exit");
    add_common(in, infer_args);
    in->add_option("--checkpoint", infer_checkpoint, "trained checkpoint")->required();
    in->add_option("--cache", infer_cache, "embedding cache file");
    in->add_flag("--early-exit", infer_early, "enable patience-based early exit");
    in->add_option("--patience", infer_patience, "consecutive agreeing exit heads required (default 2)");
    in->add_option("--nodes", infer_nodes, "all|train|val|test (default all)");
    in->add_option("--out", infer_out, "predictions output (default: <checkpoint>.predictions.tsv)");
    in->add_option("--stats-out", infer_stats, "exit stats JSON (default: <out>.stats.json)");

    CommonArgs bench_args;
    std::string bench_out;
    auto* be = app.add_subcommand("bench", "measure training/inference cost with and without cache/early exit");
    add_common(be, bench_args);
    be->add_option("--out", bench_out, "report output path (default: bench_report.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (pre->parsed()) return cmd_precompute(pre_args, pre_out);
        if (tr->parsed()) return cmd_train(train_args, train_cache, train_checkpoint, train_metrics, train_ablate);
        if (ev->parsed()) return cmd_eval(eval_args, eval_checkpoint, eval_cache, eval_split);
        if (in->parsed()) {
            return cmd_infer(infer_args, infer_checkpoint, infer_cache, infer_early, infer_patience, infer_nodes,
                             infer_out, infer_stats);
        }
        if (be->parsed()) return cmd_bench(bench_args, bench_out);
    } catch (const gladder::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const gladder::RuntimeFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
