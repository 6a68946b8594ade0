#pragma once

// Loss, AdamW, and the training loop. Each optimizer step consumes one or
// more target subgraphs: per target the backbone rows come from the cache or
// a live forward (identical bits either way), the stack runs once on a fresh
// tape, and the total loss is the final cross-entropy plus the mean of the
// exit-head cross-entropies. Early stopping tracks validation accuracy and
// the best checkpoint is restored at the end.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "gladder/autodiff.hpp"
#include "gladder/cache.hpp"
#include "gladder/errors.hpp"
#include "gladder/graph.hpp"
#include "gladder/inference.hpp"
#include "gladder/rng.hpp"
#include "gladder/sidenet.hpp"

namespace gladder {

// -log softmax(logits)[label], max-subtracted.
inline double cross_entropy(const std::vector<double>& logits, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
        throw ValidationError("cross_entropy: label out of range");
    }
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    return -(logits[static_cast<std::size_t>(label)] - mx - std::log(z));
}

struct TrainConfig {
    std::size_t epochs = 200;
    double learning_rate = 1e-3;
    double weight_decay = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t early_stop_patience = 20;
    std::size_t grad_accum = 1;  // targets per optimizer step
    bool use_cache = false;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
        if (learning_rate <= 0.0) throw ValidationError("train: learning_rate must be > 0");
        if (grad_accum < 1) throw ValidationError("train: grad_accum must be >= 1");
    }
};

// Decoupled weight decay with bias correction; moments persist across steps.
class AdamW {
public:
    AdamW(const ParamStore& params, const TrainConfig& cfg)
        : lr_(cfg.learning_rate),
          wd_(cfg.weight_decay),
          beta1_(cfg.beta1),
          beta2_(cfg.beta2),
          eps_(cfg.adam_eps) {
        for (const auto& p : params.all()) {
            m_.emplace_back(p.value.rows, p.value.cols);
            v_.emplace_back(p.value.rows, p.value.cols);
        }
    }

    std::size_t steps_taken() const { return step_; }

    void step(ParamStore& params) {
        ++step_;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            Param& p = params[static_cast<int>(pi)];
            for (std::size_t i = 0; i < p.value.data.size(); ++i) {
                double g = p.grad.data[i];
                if (!std::isfinite(g)) {
                    throw RuntimeFailure("adamw: non-finite gradient in parameter '" + p.name + "'");
                }
                double& m = m_[pi].data[i];
                double& v = v_[pi].data[i];
                m = beta1_ * m + (1.0 - beta1_) * g;
                v = beta2_ * v + (1.0 - beta2_) * g * g;
                double mhat = m / bc1;
                double vhat = v / bc2;
                p.value.data[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p.value.data[i]);
            }
        }
    }

private:
    double lr_, wd_, beta1_, beta2_, eps_;
    std::vector<Matrix> m_, v_;
    std::size_t step_ = 0;
};

struct LossReport {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mean total loss over the epoch's targets
    double val_acc = 0.0;
    double test_acc = 0.0;
    std::vector<double> exit_losses;  // mean per-ladder exit-head loss

    std::string to_json() const {
        char buf[64];
        std::string s = "{\"epoch\":" + std::to_string(epoch);
        std::snprintf(buf, sizeof(buf), "%.10g", train_loss);
        s += std::string(",\"train_loss\":") + buf;
        std::snprintf(buf, sizeof(buf), "%.10g", val_acc);
        s += std::string(",\"val_acc\":") + buf;
        std::snprintf(buf, sizeof(buf), "%.10g", test_acc);
        s += std::string(",\"test_acc\":") + buf;
        s += ",\"exit_losses\":[";
        for (std::size_t i = 0; i < exit_losses.size(); ++i) {
            if (i) s += ",";
            std::snprintf(buf, sizeof(buf), "%.10g", exit_losses[i]);
            s += buf;
        }
        s += "]}";
        return s;
    }
};

struct TrainResult {
    std::vector<LossReport> reports;
    std::vector<double> step_losses;  // mean loss per optimizer step
    std::size_t optimizer_steps = 0;
    std::size_t best_epoch = 0;
    double best_val_acc = 0.0;
    double final_val_acc = 0.0;
    double final_test_acc = 0.0;
    std::size_t epochs_run = 0;
};

// Full-depth accuracy over a split; deterministic (dropout off, fixed
// per-node subgraphs).
inline double evaluate(const TextualGraph& g, EmbeddingProvider& provider, GLadderStack& stack,
                       const SamplerConfig& sampler, Split split) {
    std::vector<NodeId> nodes = g.split_nodes(split);
    if (nodes.empty()) {
        throw ValidationError(std::string("evaluate: split '") + split_name(split) + "' is empty");
    }
    SamplerConfig scfg = eval_sampler_config(sampler);
    std::size_t correct = 0;
    for (NodeId v : nodes) {
        Subgraph sub = sample_subgraph(g, v, scfg);
        if (infer_full(stack, provider, sub) == g.labels[v]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

inline double cross_entropy_of_row(const Matrix& logits, int label) {
    std::vector<double> row(logits.row(0), logits.row(0) + logits.cols);
    return cross_entropy(row, label);
}

// Builds the per-target loss on `tape`: CE of the final logits plus
// exit_loss_weight * mean over ladders of the exit-head CE. Returns the
// scalar loss node; per-head CE values are appended to `exit_ce_out`.
inline int build_target_loss(Tape& tape, const GLadderStack::ForwardResult& fr, const SideNetConfig& cfg, int label,
                             std::vector<double>* exit_ce_out = nullptr) {
    std::vector<int> terms{tape.softmax_cross_entropy(fr.final_logits, 0, label)};
    std::vector<double> coeffs{1.0};
    if (cfg.exit_loss_weight > 0.0 && !fr.exit_logits.empty()) {
        double w = cfg.exit_loss_weight / static_cast<double>(fr.exit_logits.size());
        for (int node : fr.exit_logits) {
            int ce = tape.softmax_cross_entropy(node, 0, label);
            if (exit_ce_out) exit_ce_out->push_back(tape.value(ce).data[0]);
            terms.push_back(ce);
            coeffs.push_back(w);
        }
    } else if (exit_ce_out) {
        for (int node : fr.exit_logits) {
            exit_ce_out->push_back(cross_entropy_of_row(tape.value(node), label));
        }
    }
    return tape.scalar_sum(terms, coeffs);
}

inline TrainResult train(const TextualGraph& g, EmbeddingProvider& provider, GLadderStack& stack,
                         const SamplerConfig& sampler, const TrainConfig& cfg,
                         const std::string& metrics_path = "") {
    cfg.validate();
    const SideNetConfig& side = stack.config();
    std::vector<NodeId> train_nodes = g.split_nodes(Split::Train);
    if (train_nodes.empty()) throw ValidationError("train: empty train split");

    std::ofstream metrics;
    if (!metrics_path.empty()) {
        metrics.open(metrics_path, std::ios::trunc);
        if (!metrics) throw RuntimeFailure("cannot write metrics log: " + metrics_path);
    }

    AdamW opt(stack.params(), cfg);
    TrainResult result;
    std::vector<Matrix> best_params = stack.params().snapshot_values();
    double best_val = -1.0;
    std::size_t best_epoch = 0;
    std::size_t since_improve = 0;

    stack.params().zero_grads();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<NodeId> order = train_nodes;
        Rng shuffle_rng = substream(cfg.seed, 0x54A6, epoch);
        shuffle(order, shuffle_rng);
        Rng dropout_rng = substream(cfg.seed, 0xD409, epoch);
        SamplerConfig scfg = sampler;
        scfg.seed = fold_seed(fold_seed(sampler.seed, 0x7A36), epoch);

        double epoch_loss = 0.0;
        std::vector<double> exit_loss_sums(side.schedule.size(), 0.0);
        double group_loss = 0.0;
        std::size_t pending = 0;

        auto flush = [&]() {
            if (pending == 0) return;
            opt.step(stack.params());
            stack.params().zero_grads();
            result.step_losses.push_back(group_loss / static_cast<double>(pending));
            ++result.optimizer_steps;
            group_loss = 0.0;
            pending = 0;
        };

        for (NodeId target : order) {
            Subgraph sub = sample_subgraph(g, target, scfg);
            Tape tape(stack.params());
            auto fr = stack.forward(tape, provider, sub, true, &dropout_rng);
            std::vector<double> exit_ces;
            int loss_node = build_target_loss(tape, fr, side, g.labels[target], &exit_ces);
            double loss = tape.value(loss_node).data[0];
            if (!std::isfinite(loss)) throw RuntimeFailure("train: non-finite loss");
            tape.backward(loss_node);
            epoch_loss += loss;
            group_loss += loss;
            for (std::size_t i = 0; i < exit_ces.size(); ++i) exit_loss_sums[i] += exit_ces[i];
            ++pending;
            if (pending == cfg.grad_accum) flush();
        }
        flush();

        LossReport report;
        report.epoch = epoch;
        report.train_loss = epoch_loss / static_cast<double>(order.size());
        for (double s : exit_loss_sums) report.exit_losses.push_back(s / static_cast<double>(order.size()));
        report.val_acc = evaluate(g, provider, stack, sampler, Split::Val);
        report.test_acc = evaluate(g, provider, stack, sampler, Split::Test);
        result.reports.push_back(report);
        result.epochs_run = epoch + 1;
        if (metrics.is_open()) metrics << report.to_json() << "\n";

        // strict improvement; ties keep the earlier epoch
        if (report.val_acc > best_val) {
            best_val = report.val_acc;
            best_epoch = epoch;
            best_params = stack.params().snapshot_values();
            since_improve = 0;
        } else {
            ++since_improve;
        }
        if (since_improve >= cfg.early_stop_patience) break;
    }

    stack.params().restore_values(best_params);
    result.best_epoch = best_epoch;
    result.best_val_acc = best_val;
    result.final_val_acc = evaluate(g, provider, stack, sampler, Split::Val);
    result.final_test_acc = evaluate(g, provider, stack, sampler, Split::Test);
    return result;
}

}  // namespace gladder
