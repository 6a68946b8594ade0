#pragma once

// Desk-scale efficiency measurements: training epoch wall time with and
// without the embedding cache, trainable-parameter count, and full vs
// early-exit inference time. Everything except the wall-clock fields is
// deterministic given (inputs, seed).

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "gladder/cache.hpp"
#include "gladder/config.hpp"
#include "gladder/graph.hpp"
#include "gladder/inference.hpp"
#include "gladder/sidenet.hpp"
#include "gladder/training.hpp"

namespace gladder {

struct BenchReport {
    std::size_t trainable_params = 0;
    double cached_epoch_seconds = 0.0;
    double uncached_epoch_seconds = 0.0;
    double full_inference_seconds = 0.0;
    double early_exit_inference_seconds = 0.0;
    double mean_layers_full = 0.0;
    double mean_layers_early = 0.0;
    std::size_t patience = 0;
    std::size_t nodes_timed = 0;

    std::string to_json() const {
        char buf[64];
        std::string s = "{\"trainable_params\":" + std::to_string(trainable_params);
        auto field = [&](const char* name, double v) {
            std::snprintf(buf, sizeof(buf), "%.10g", v);
            s += std::string(",\"") + name + "\":" + buf;
        };
        field("cached_epoch_seconds", cached_epoch_seconds);
        field("uncached_epoch_seconds", uncached_epoch_seconds);
        field("full_inference_seconds", full_inference_seconds);
        field("early_exit_inference_seconds", early_exit_inference_seconds);
        field("mean_layers_full", mean_layers_full);
        field("mean_layers_early", mean_layers_early);
        s += ",\"patience\":" + std::to_string(patience);
        s += ",\"nodes_timed\":" + std::to_string(nodes_timed) + "}";
        return s;
    }
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

inline BenchReport run_bench(const TextualGraph& g, const RunConfig& rc, std::size_t threads = 1) {
    BenchReport report;
    ToyTransformer encoder(rc.backbone);
    std::vector<int> schedule = rc.schedule();
    EmbeddingCache cache = precompute_cache(encoder, g, schedule, threads);

    SideNetConfig side = rc.side_config(g.num_classes);
    SamplerConfig sampler = rc.sampler_config();
    TrainConfig one_epoch = rc.train_config();
    one_epoch.epochs = 1;
    one_epoch.use_cache = true;

    {
        GLadderStack stack(side);
        report.trainable_params = stack.params().scalar_count();
        CacheProvider provider(cache);
        auto start = std::chrono::steady_clock::now();
        train(g, provider, stack, sampler, one_epoch);
        report.cached_epoch_seconds = detail::seconds_since(start);
    }
    {
        GLadderStack stack(side);
        LiveProvider provider(encoder, g);
        TrainConfig cfg = one_epoch;
        cfg.use_cache = false;
        auto start = std::chrono::steady_clock::now();
        train(g, provider, stack, sampler, cfg);
        report.uncached_epoch_seconds = detail::seconds_since(start);
    }

    // a short cached training run so the exit heads are worth timing
    GLadderStack stack(side);
    {
        TrainConfig cfg = rc.train_config();
        cfg.use_cache = true;
        cfg.epochs = std::min<std::size_t>(cfg.epochs, 10);
        CacheProvider provider(cache);
        train(g, provider, stack, sampler, cfg);
    }

    std::vector<NodeId> nodes = g.split_nodes(Split::Test);
    if (nodes.empty()) nodes = g.split_nodes(Split::Train);
    report.nodes_timed = nodes.size();
    report.patience = rc.infer_patience;
    SamplerConfig scfg = eval_sampler_config(sampler);
    {
        LiveProvider provider(encoder, g);
        auto start = std::chrono::steady_clock::now();
        for (NodeId v : nodes) {
            Subgraph sub = sample_subgraph(g, v, scfg);
            infer_full(stack, provider, sub);
        }
        report.full_inference_seconds = detail::seconds_since(start);
        report.mean_layers_full = static_cast<double>(schedule.size());
    }
    {
        LiveProvider provider(encoder, g);
        PatienceConfig pc{rc.infer_patience, true};
        std::size_t layer_sum = 0;
        auto start = std::chrono::steady_clock::now();
        for (NodeId v : nodes) {
            Subgraph sub = sample_subgraph(g, v, scfg);
            layer_sum += infer_early_exit(stack, provider, sub, pc).ladders_evaluated;
        }
        report.early_exit_inference_seconds = detail::seconds_since(start);
        report.mean_layers_early = static_cast<double>(layer_sum) / static_cast<double>(nodes.size());
    }
    return report;
}

}  // namespace gladder
