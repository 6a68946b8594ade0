#pragma once

// Full-depth inference and patience-based dynamic early exit. Walking the
// schedule, each ladder's exit head votes; once `patience` consecutive heads
// agree the walk stops and returns that prediction, so deeper ladders and
// deeper backbone layers are never evaluated. The final classifier is the
// fallback and does not participate in the patience count.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "gladder/cache.hpp"
#include "gladder/errors.hpp"
#include "gladder/graph.hpp"
#include "gladder/sidenet.hpp"

namespace gladder {

struct PatienceConfig {
    std::size_t patience = 2;
    bool enabled = true;

    void validate() const {
        if (patience < 1) throw ValidationError("patience must be >= 1");
    }
};

// Ties break toward the lowest class index.
inline int argmax_row(const Matrix& m, std::size_t row) {
    int best = 0;
    double best_v = m.at(row, 0);
    for (std::size_t c = 1; c < m.cols; ++c) {
        if (m.at(row, c) > best_v) {
            best_v = m.at(row, c);
            best = static_cast<int>(c);
        }
    }
    return best;
}

// Deterministic per-node subgraphs for evaluation and inference: one fixed
// substream tag keeps them independent of training epochs.
inline SamplerConfig eval_sampler_config(SamplerConfig cfg) {
    cfg.seed = fold_seed(cfg.seed, 0xEA11);
    return cfg;
}

inline int infer_full(GLadderStack& stack, EmbeddingProvider& provider, const Subgraph& sub) {
    Tape tape(stack.params());
    auto fr = stack.forward(tape, provider, sub);
    return argmax_row(tape.value(fr.final_logits), 0);
}

struct EarlyExitResult {
    int predicted = 0;
    std::size_t exit_index = 0;         // position in the schedule
    std::size_t ladders_evaluated = 0;  // exit_index + 1
    bool exited_early = false;
};

// Run-length patience: the counter includes the current layer, so two
// adjacent agreeing heads satisfy patience 2. It resets to 1 whenever the
// prediction changes. If the counter never reaches the patience the final
// classifier decides, with exit index = last schedule position.
inline EarlyExitResult infer_early_exit(GLadderStack& stack, EmbeddingProvider& provider, const Subgraph& sub,
                                        const PatienceConfig& cfg) {
    cfg.validate();
    Tape tape(stack.params());
    EarlyExitResult res;
    int last_pred = -1;
    std::size_t run = 0;
    bool stopped = false;
    auto on_exit = [&](std::size_t pos, int exit_node) {
        int pred = argmax_row(tape.value(exit_node), 0);
        run = (pred == last_pred) ? run + 1 : 1;
        last_pred = pred;
        if (cfg.enabled && run >= cfg.patience) {
            res.predicted = pred;
            res.exit_index = pos;
            res.exited_early = true;
            stopped = true;
            return false;
        }
        return true;
    };
    auto fr = stack.forward(tape, provider, sub, false, nullptr, on_exit);
    res.ladders_evaluated = fr.ladders_evaluated;
    if (!stopped) {
        res.predicted = argmax_row(tape.value(fr.final_logits), 0);
        res.exit_index = stack.config().schedule.size() - 1;
        res.exited_early = false;
    }
    return res;
}

struct ExitStats {
    std::vector<std::size_t> histogram;  // exits per schedule position
    double accuracy = 0.0;
    double mean_layers = 0.0;  // mean ladders evaluated per node
    std::size_t nodes = 0;

    std::string to_json() const {
        std::string s = "{\"histogram\":[";
        for (std::size_t i = 0; i < histogram.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(histogram[i]);
        }
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.10g", accuracy);
        s += "],\"accuracy\":";
        s += buf;
        std::snprintf(buf, sizeof(buf), "%.10g", mean_layers);
        s += ",\"mean_layers\":";
        s += buf;
        s += ",\"nodes\":" + std::to_string(nodes) + "}";
        return s;
    }
};

inline ExitStats exit_histogram(GLadderStack& stack, EmbeddingProvider& provider, const TextualGraph& g,
                                const std::vector<NodeId>& nodes, const SamplerConfig& sampler,
                                const PatienceConfig& cfg) {
    if (nodes.empty()) throw ValidationError("exit_histogram: empty node list");
    SamplerConfig scfg = eval_sampler_config(sampler);
    ExitStats stats;
    stats.histogram.assign(stack.config().schedule.size(), 0);
    stats.nodes = nodes.size();
    std::size_t correct = 0;
    std::size_t layer_sum = 0;
    for (NodeId v : nodes) {
        Subgraph sub = sample_subgraph(g, v, scfg);
        EarlyExitResult res = infer_early_exit(stack, provider, sub, cfg);
        ++stats.histogram[res.exit_index];
        layer_sum += res.ladders_evaluated;
        if (res.predicted == g.labels[v]) ++correct;
    }
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(nodes.size());
    stats.mean_layers = static_cast<double>(layer_sum) / static_cast<double>(nodes.size());
    return stats;
}

}  // namespace gladder
