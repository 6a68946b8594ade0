#pragma once

// Flat key=value run configuration shared by the CLI commands. Lines are
// `key = value`; blank lines and lines starting with '#' are ignored.
//
// Keys (defaults in parentheses):
//   backbone.layers (4)      backbone.dim (64)      backbone.heads (4)
//   backbone.vocab (4096)    backbone.max_tokens (32) backbone.seed (1)
//   insert_every (2)         schedule (explicit comma list, overrides)
//   side.hidden (64)         side.gnn (sage)        side.gnn_layers (1)
//   side.activation (elu)    side.norm (none)       side.dropout (0.5)
//   side.temperature (0.1)   side.exit_detached (true)
//   side.exit_loss_weight (1.0)
//   sampler (khop)           sampler.hops (1)       sampler.walk_length (16)
//   sampler.restart_prob (0.5) sampler.num_walks (8) sampler.max_nodes (32)
//   train.epochs (200)       train.lr (1e-3)        train.weight_decay (5e-4)
//   train.early_stop_patience (20) train.grad_accum (1)
//   infer.patience (2)
//   seed (0)
//
// All run randomness (init, shuffling, sampling, dropout) funnels through
// `seed`; backbone.seed is model identity and stays fixed across runs.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gladder/backbone.hpp"
#include "gladder/binio.hpp"
#include "gladder/errors.hpp"
#include "gladder/graph.hpp"
#include "gladder/sidenet.hpp"
#include "gladder/training.hpp"

namespace gladder {

struct RunConfig {
    ToyTransformerConfig backbone;
    std::size_t insert_every = 2;
    std::vector<int> explicit_schedule;  // overrides insert_every when set

    std::size_t hidden = 64;
    GnnKind gnn = GnnKind::Sage;
    std::size_t gnn_layers = 1;
    Act activation = Act::Elu;
    NormKind norm = NormKind::None;
    double dropout = 0.5;
    double temperature = 0.1;
    bool exit_heads_detached = true;
    double exit_loss_weight = 1.0;

    SamplerConfig sampler;
    TrainConfig train;
    std::size_t infer_patience = 2;
    std::uint64_t seed = 0;

    std::vector<int> schedule() const {
        if (!explicit_schedule.empty()) return explicit_schedule;
        return make_schedule(backbone.num_layers, insert_every);
    }

    // Side-network view, with run randomness derived from `seed`.
    SideNetConfig side_config(std::size_t num_classes) const {
        SideNetConfig s;
        s.backbone_layers = backbone.num_layers;
        s.backbone_dim = backbone.model_dim;
        s.schedule = schedule();
        s.hidden = hidden;
        s.num_classes = num_classes;
        s.gnn = gnn;
        s.gnn_layers = gnn_layers;
        s.activation = activation;
        s.norm = norm;
        s.dropout = dropout;
        s.temperature = temperature;
        s.exit_heads_detached = exit_heads_detached;
        s.exit_loss_weight = exit_loss_weight;
        s.init_seed = fold_seed(seed, 0x1A17);
        return s;
    }

    SamplerConfig sampler_config() const {
        SamplerConfig s = sampler;
        s.seed = fold_seed(seed, 0x5A33);
        return s;
    }

    TrainConfig train_config() const {
        TrainConfig t = train;
        t.seed = fold_seed(seed, 0x7321);
        return t;
    }

    std::string canonical_string() const;
    std::uint64_t hash() const { return detail::fnv1a64_str(canonical_string()); }

    void set(const std::string& key, const std::string& value);
    static RunConfig load(const std::string& path);
    static RunConfig parse(const std::string& text, const std::string& origin);
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        unsigned long long r = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ValidationError("config: cannot parse integer for '" + key + "' from '" + v + "'");
    }
}

inline double parse_double(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        double r = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ValidationError("config: cannot parse number for '" + key + "' from '" + v + "'");
    }
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ValidationError("config: cannot parse boolean for '" + key + "' from '" + v + "'");
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_u64;
    if (key == "backbone.layers") {
        backbone.num_layers = parse_u64(value, key);
    } else if (key == "backbone.dim") {
        backbone.model_dim = parse_u64(value, key);
    } else if (key == "backbone.heads") {
        backbone.heads = parse_u64(value, key);
    } else if (key == "backbone.vocab") {
        backbone.vocab_size = parse_u64(value, key);
    } else if (key == "backbone.max_tokens") {
        backbone.max_tokens = parse_u64(value, key);
    } else if (key == "backbone.seed") {
        backbone.init_seed = parse_u64(value, key);
    } else if (key == "insert_every") {
        insert_every = parse_u64(value, key);
    } else if (key == "schedule") {
        explicit_schedule.clear();
        std::size_t start = 0;
        while (start <= value.size()) {
            std::size_t comma = value.find(',', start);
            std::string item = detail::trim(value.substr(start, comma == std::string::npos ? std::string::npos
                                                                                           : comma - start));
            if (!item.empty()) explicit_schedule.push_back(static_cast<int>(parse_u64(item, key)));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (explicit_schedule.empty()) throw ValidationError("config: empty schedule list");
    } else if (key == "side.hidden") {
        hidden = parse_u64(value, key);
    } else if (key == "side.gnn") {
        if (value == "sage") {
            gnn = GnnKind::Sage;
        } else if (value == "gcn") {
            gnn = GnnKind::Gcn;
        } else if (value == "gat") {
            gnn = GnnKind::Gat;
        } else {
            throw ValidationError("config: side.gnn must be sage|gcn|gat, got '" + value + "'");
        }
    } else if (key == "side.gnn_layers") {
        gnn_layers = parse_u64(value, key);
    } else if (key == "side.activation") {
        if (value == "elu") {
            activation = Act::Elu;
        } else if (value == "relu") {
            activation = Act::Relu;
        } else if (value == "identity") {
            activation = Act::Identity;
        } else {
            throw ValidationError("config: side.activation must be elu|relu|identity, got '" + value + "'");
        }
    } else if (key == "side.norm") {
        if (value == "none" || value == "id") {
            norm = NormKind::None;
        } else if (value == "layernorm" || value == "ln") {
            norm = NormKind::LayerNorm;
        } else {
            throw ValidationError("config: side.norm must be none|layernorm, got '" + value + "'");
        }
    } else if (key == "side.dropout") {
        dropout = parse_double(value, key);
    } else if (key == "side.temperature") {
        temperature = parse_double(value, key);
    } else if (key == "side.exit_detached") {
        exit_heads_detached = parse_bool(value, key);
    } else if (key == "side.exit_loss_weight") {
        exit_loss_weight = parse_double(value, key);
    } else if (key == "sampler") {
        if (value == "khop") {
            sampler.kind = SamplerKind::KHop;
        } else if (value == "rwr") {
            sampler.kind = SamplerKind::Rwr;
        } else {
            throw ValidationError("config: sampler must be khop|rwr, got '" + value + "'");
        }
    } else if (key == "sampler.hops") {
        sampler.hops = parse_u64(value, key);
    } else if (key == "sampler.walk_length") {
        sampler.walk_length = parse_u64(value, key);
    } else if (key == "sampler.restart_prob") {
        sampler.restart_prob = parse_double(value, key);
    } else if (key == "sampler.num_walks") {
        sampler.num_walks = parse_u64(value, key);
    } else if (key == "sampler.max_nodes") {
        sampler.max_nodes = parse_u64(value, key);
    } else if (key == "train.epochs") {
        train.epochs = parse_u64(value, key);
    } else if (key == "train.lr") {
        train.learning_rate = parse_double(value, key);
    } else if (key == "train.weight_decay") {
        train.weight_decay = parse_double(value, key);
    } else if (key == "train.early_stop_patience") {
        train.early_stop_patience = parse_u64(value, key);
    } else if (key == "train.grad_accum") {
        train.grad_accum = parse_u64(value, key);
    } else if (key == "infer.patience") {
        infer_patience = parse_u64(value, key);
    } else if (key == "seed") {
        seed = parse_u64(value, key);
    } else {
        throw ValidationError("config: unknown key '" + key + "'");
    }
}

inline RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t nl = text.find('\n', start);
        std::string line = text.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
        ++line_no;
        start = nl == std::string::npos ? text.size() + 1 : nl + 1;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::string t = detail::trim(line);
        if (t.empty()) continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(origin + " line " + std::to_string(line_no) + ": expected key=value, got '" + t +
                                  "'");
        }
        std::string key = detail::trim(t.substr(0, eq));
        std::string value = detail::trim(t.substr(eq + 1));
        try {
            cfg.set(key, value);
        } catch (const ValidationError& e) {
            throw ValidationError(origin + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cfg;
}

inline RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(text, path);
}

inline std::string RunConfig::canonical_string() const {
    std::string s;
    auto kv = [&s](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
    char buf[64];
    kv("backbone.layers", std::to_string(backbone.num_layers));
    kv("backbone.dim", std::to_string(backbone.model_dim));
    kv("backbone.heads", std::to_string(backbone.heads));
    kv("backbone.vocab", std::to_string(backbone.vocab_size));
    kv("backbone.max_tokens", std::to_string(backbone.max_tokens));
    kv("backbone.seed", std::to_string(backbone.init_seed));
    std::string sched;
    for (int l : schedule()) sched += (sched.empty() ? "" : ",") + std::to_string(l);
    kv("schedule", sched);
    kv("side.hidden", std::to_string(hidden));
    kv("side.gnn", std::to_string(static_cast<int>(gnn)));
    kv("side.gnn_layers", std::to_string(gnn_layers));
    kv("side.activation", std::to_string(static_cast<int>(activation)));
    kv("side.norm", std::to_string(static_cast<int>(norm)));
    std::snprintf(buf, sizeof(buf), "%.17g", dropout);
    kv("side.dropout", buf);
    std::snprintf(buf, sizeof(buf), "%.17g", temperature);
    kv("side.temperature", buf);
    kv("side.exit_detached", exit_heads_detached ? "1" : "0");
    std::snprintf(buf, sizeof(buf), "%.17g", exit_loss_weight);
    kv("side.exit_loss_weight", buf);
    kv("sampler", std::to_string(static_cast<int>(sampler.kind)));
    kv("sampler.hops", std::to_string(sampler.hops));
    kv("sampler.walk_length", std::to_string(sampler.walk_length));
    std::snprintf(buf, sizeof(buf), "%.17g", sampler.restart_prob);
    kv("sampler.restart_prob", buf);
    kv("sampler.num_walks", std::to_string(sampler.num_walks));
    kv("sampler.max_nodes", std::to_string(sampler.max_nodes));
    kv("train.epochs", std::to_string(train.epochs));
    std::snprintf(buf, sizeof(buf), "%.17g", train.learning_rate);
    kv("train.lr", buf);
    std::snprintf(buf, sizeof(buf), "%.17g", train.weight_decay);
    kv("train.weight_decay", buf);
    kv("train.early_stop_patience", std::to_string(train.early_stop_patience));
    kv("train.grad_accum", std::to_string(train.grad_accum));
    kv("infer.patience", std::to_string(infer_patience));
    kv("seed", std::to_string(seed));
    return s;
}

}  // namespace gladder
