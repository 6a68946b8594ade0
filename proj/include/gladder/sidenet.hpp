#pragma once

// The trainable side network. One G-Ladder per inserted backbone layer:
// a projector D -> K, a small message-passing GNN over the subgraph, and a
// gated blend of the GNN branch with the accumulated side state:
//
//   state_l = lambda_l * GNN_l(P_l(Z_l), A) + (1 - lambda_l) * state_{l-1}
//   lambda_l = sigmoid(omega_l / T), omega zero-initialized, T = 0.1
//
// Before the first ladder the side state is defined as the first ladder's
// own projection, so the gate blends structure-enhanced against raw
// projected features. A linear classifier consumes the target row of the
// last state; a single-layer exit classifier hangs off every ladder (by
// default on a detached copy of the state, so heads train only themselves).

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gladder/autodiff.hpp"
#include "gladder/backbone.hpp"
#include "gladder/binio.hpp"
#include "gladder/cache.hpp"
#include "gladder/errors.hpp"
#include "gladder/graph.hpp"
#include "gladder/linalg.hpp"
#include "gladder/rng.hpp"

namespace gladder {

enum class GnnKind : std::uint8_t { Sage = 0, Gcn = 1, Gat = 2 };
enum class NormKind : std::uint8_t { None = 0, LayerNorm = 1 };

inline double gate_lambda(double omega, double temperature) {
    if (temperature <= 0.0) throw ValidationError("gate_lambda: temperature must be > 0");
    return stable_sigmoid(omega / temperature);
}

struct SideNetConfig {
    std::size_t backbone_layers = 4;
    std::size_t backbone_dim = 64;
    std::vector<int> schedule;  // inserted layer indices, ends at backbone_layers
    std::size_t hidden = 64;    // K
    std::size_t num_classes = 2;
    GnnKind gnn = GnnKind::Sage;
    std::size_t gnn_layers = 1;
    Act activation = Act::Elu;
    NormKind norm = NormKind::None;
    double dropout = 0.5;
    double temperature = 0.1;
    bool use_structure = true;        // false: "no message passing" ablation
    bool learnable_gate = true;       // false: constant lambda = 0.5 ablation
    bool exit_heads_detached = true;  // false: exit losses backprop into ladders
    double exit_loss_weight = 1.0;
    std::uint64_t init_seed = 0;

    void validate() const {
        validate_schedule(schedule, backbone_layers);
        if (hidden == 0) throw ValidationError("side net: hidden size must be >= 1");
        if (num_classes < 2) throw ValidationError("side net: need at least 2 classes");
        if (gnn_layers < 1 || gnn_layers > 2) throw ValidationError("side net: gnn_layers must be 1 or 2");
        if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("side net: dropout must be in [0,1)");
        if (temperature <= 0.0) throw ValidationError("side net: temperature must be > 0");
    }

    // Canonical key=value text; its FNV hash identifies the configuration in
    // checkpoints and manifests.
    std::string canonical_string() const {
        std::string s;
        auto kv = [&s](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
        kv("backbone_layers", std::to_string(backbone_layers));
        kv("backbone_dim", std::to_string(backbone_dim));
        std::string sched;
        for (int l : schedule) sched += (sched.empty() ? "" : ",") + std::to_string(l);
        kv("schedule", sched);
        kv("hidden", std::to_string(hidden));
        kv("num_classes", std::to_string(num_classes));
        kv("gnn", std::to_string(static_cast<int>(gnn)));
        kv("gnn_layers", std::to_string(gnn_layers));
        kv("activation", std::to_string(static_cast<int>(activation)));
        kv("norm", std::to_string(static_cast<int>(norm)));
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", dropout);
        kv("dropout", buf);
        std::snprintf(buf, sizeof(buf), "%.17g", temperature);
        kv("temperature", buf);
        kv("use_structure", use_structure ? "1" : "0");
        kv("learnable_gate", learnable_gate ? "1" : "0");
        kv("exit_heads_detached", exit_heads_detached ? "1" : "0");
        std::snprintf(buf, sizeof(buf), "%.17g", exit_loss_weight);
        kv("exit_loss_weight", buf);
        kv("init_seed", std::to_string(init_seed));
        return s;
    }

    std::uint64_t hash() const { return detail::fnv1a64_str(canonical_string()); }
};

// Parameter ids of one G-Ladder.
struct GLadderLayer {
    int backbone_layer = 0;
    int proj_w = -1;
    int proj_b = -1;
    struct GnnParams {
        int self_w = -1;  // sage W_self / gcn W / gat W
        int self_b = -1;
        int nbr_w = -1;   // sage only
        int a_src = -1;   // gat only
        int a_dst = -1;   // gat only
    };
    std::vector<GnnParams> gnn;
    int omega = -1;  // -1 when the gate is constant
    int exit_w = -1;
    int exit_b = -1;
};

class GLadderStack {
public:
    explicit GLadderStack(const SideNetConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t d = cfg_.backbone_dim;
        const std::size_t k = cfg_.hidden;
        const std::size_t c = cfg_.num_classes;
        std::size_t stream = 0;
        auto randm = [&](std::size_t rows, std::size_t cols, double bound) {
            Matrix m(rows, cols);
            Rng rng = substream(cfg_.init_seed, 0x51DE, stream++);
            init_uniform(m, rng, bound);
            return m;
        };
        for (std::size_t i = 0; i < cfg_.schedule.size(); ++i) {
            GLadderLayer lad;
            lad.backbone_layer = cfg_.schedule[i];
            std::string prefix = "ladder" + std::to_string(i);
            lad.proj_w = store_.add(prefix + ".proj.w", randm(k, d, glorot_bound(d, k)));
            lad.proj_b = store_.add(prefix + ".proj.b", Matrix(1, k));
            for (std::size_t gl = 0; gl < cfg_.gnn_layers; ++gl) {
                GLadderLayer::GnnParams gp;
                std::string gp_prefix = prefix + ".gnn" + std::to_string(gl);
                gp.self_w = store_.add(gp_prefix + ".w", randm(k, k, glorot_bound(k, k)));
                gp.self_b = store_.add(gp_prefix + ".b", Matrix(1, k));
                if (cfg_.gnn == GnnKind::Sage) {
                    gp.nbr_w = store_.add(gp_prefix + ".nbr_w", randm(k, k, glorot_bound(k, k)));
                } else if (cfg_.gnn == GnnKind::Gat) {
                    gp.a_src = store_.add(gp_prefix + ".a_src", randm(1, k, glorot_bound(k, 1)));
                    gp.a_dst = store_.add(gp_prefix + ".a_dst", randm(1, k, glorot_bound(k, 1)));
                }
                lad.gnn.push_back(gp);
            }
            if (cfg_.learnable_gate) {
                lad.omega = store_.add(prefix + ".omega", Matrix(1, 1));  // zero: lambda starts at 0.5
            }
            lad.exit_w = store_.add(prefix + ".exit.w", randm(c, k, glorot_bound(k, c)));
            lad.exit_b = store_.add(prefix + ".exit.b", Matrix(1, c));
            ladders_.push_back(lad);
        }
        final_w_ = store_.add("final.w", randm(c, k, glorot_bound(k, c)));
        final_b_ = store_.add("final.b", Matrix(1, c));
    }

    const SideNetConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    const std::vector<GLadderLayer>& ladders() const { return ladders_; }
    int final_w() const { return final_w_; }
    int final_b() const { return final_b_; }

    double lambda_value(std::size_t ladder) const {
        const GLadderLayer& lad = ladders_[ladder];
        if (lad.omega < 0) return 0.5;
        return gate_lambda(store_[lad.omega].value.data[0], cfg_.temperature);
    }

    struct ForwardResult {
        int final_logits = -1;               // node id, B x C; row 0 is the target
        std::vector<int> exit_logits;        // one node per evaluated ladder
        int state = -1;                      // last fused side state
        std::size_t ladders_evaluated = 0;
    };

    // Folds the ladders over the schedule. fetch-order is ascending, one
    // provider.layer_rows call per evaluated ladder. `on_exit` (when set) is
    // called with each ladder's exit-logit node; returning false stops the
    // walk before deeper ladders or backbone layers run, and final_logits
    // stays -1. Dropout draws come from `dropout_rng` in training mode only.
    ForwardResult forward(Tape& tape, EmbeddingProvider& provider, const Subgraph& sub, bool training = false,
                          Rng* dropout_rng = nullptr,
                          const std::function<bool(std::size_t, int)>& on_exit = {}) const {
        if (tape.owner() != &store_) throw ValidationError("stack forward: tape is bound to a different store");
        provider.begin(sub);
        ForwardResult res;
        int prev_state = -1;
        for (std::size_t i = 0; i < ladders_.size(); ++i) {
            const GLadderLayer& lad = ladders_[i];
            Matrix z = provider.layer_rows(lad.backbone_layer);
            if (z.rows != sub.members.size() || z.cols != cfg_.backbone_dim) {
                throw ValidationError("stack forward: embedding rows do not match subgraph");
            }
            int zc = tape.constant(std::move(z));
            int proj = tape.affine(zc, lad.proj_w, lad.proj_b);
            if (prev_state < 0) prev_state = proj;  // state before the first ladder
            int branch = proj;
            for (const auto& gp : lad.gnn) {
                branch = gnn_block(tape, branch, gp, sub, training, dropout_rng);
            }
            int lambda = lad.omega >= 0 ? tape.sigmoid_gate(tape.param(lad.omega), cfg_.temperature)
                                        : tape.constant(Matrix(1, 1, 0.5));
            int state = tape.convex_blend(lambda, branch, prev_state);
            prev_state = state;
            res.state = state;
            int exit_in = cfg_.exit_heads_detached ? tape.detach(state) : state;
            int exit_logits = tape.affine(exit_in, lad.exit_w, lad.exit_b);
            res.exit_logits.push_back(exit_logits);
            res.ladders_evaluated = i + 1;
            if (on_exit && !on_exit(i, exit_logits)) return res;
        }
        res.final_logits = tape.affine(prev_state, final_w_, final_b_);
        return res;
    }

private:
    // One message-passing layer: dropout (training only) on the input, the
    // variant's aggregation + transform, activation, then optional norm.
    int gnn_block(Tape& tape, int x, const GLadderLayer::GnnParams& gp, const Subgraph& sub, bool training,
                  Rng* dropout_rng) const {
        if (training && cfg_.dropout > 0.0) {
            if (!dropout_rng) throw ValidationError("stack forward: training mode needs a dropout rng");
            const Matrix& xv = tape.value(x);
            std::vector<double> mask(xv.size());
            double keep = 1.0 - cfg_.dropout;
            for (double& m : mask) m = dropout_rng->next_unit() < keep ? 1.0 / keep : 0.0;
            x = tape.dropout_mask(x, std::move(mask));
        }
        int out;
        switch (cfg_.gnn) {
            case GnnKind::Sage: {
                int self = tape.affine(x, gp.self_w, gp.self_b);
                if (cfg_.use_structure) {
                    int nm = tape.neighbor_mean(x, sub.local_edges);
                    int nb = tape.affine(nm, gp.nbr_w, -1);
                    out = tape.add(self, nb);
                } else {
                    out = self;
                }
                break;
            }
            case GnnKind::Gcn: {
                int agg = cfg_.use_structure ? tape.gcn_agg(x, sub.local_edges) : x;
                out = tape.affine(agg, gp.self_w, gp.self_b);
                break;
            }
            default: {  // Gat
                int proj = tape.affine(x, gp.self_w, gp.self_b);
                out = cfg_.use_structure ? tape.gat_agg(proj, gp.a_src, gp.a_dst, sub.local_edges) : proj;
                break;
            }
        }
        out = tape.activation(out, cfg_.activation);
        if (cfg_.norm == NormKind::LayerNorm) out = tape.layer_norm(out);
        return out;
    }

    SideNetConfig cfg_;
    ParamStore store_;
    std::vector<GLadderLayer> ladders_;
    int final_w_ = -1;
    int final_b_ = -1;
};

// ---------------------------------------------------------------------------
// Checkpoints: magic "GLCK", version, backbone signature (L, D, schedule),
// the full side config, its hash, then every named parameter as f64 data.
// Loading against a different backbone signature is refused.

inline std::vector<std::uint8_t> serialize_checkpoint(const GLadderStack& stack) {
    const SideNetConfig& cfg = stack.config();
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'G', 'L', 'C', 'K'});
    detail::put_le<std::uint16_t>(out, 1);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.backbone_layers));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.backbone_dim));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.schedule.size()));
    for (int l : cfg.schedule) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.hidden));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.num_classes));
    out.push_back(static_cast<std::uint8_t>(cfg.gnn));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.gnn_layers));
    out.push_back(static_cast<std::uint8_t>(cfg.activation));
    out.push_back(static_cast<std::uint8_t>(cfg.norm));
    detail::put_f64(out, cfg.dropout);
    detail::put_f64(out, cfg.temperature);
    std::uint8_t flags = 0;
    if (cfg.use_structure) flags |= 1;
    if (cfg.learnable_gate) flags |= 2;
    if (cfg.exit_heads_detached) flags |= 4;
    out.push_back(flags);
    detail::put_f64(out, cfg.exit_loss_weight);
    detail::put_le<std::uint64_t>(out, cfg.init_seed);
    detail::put_le<std::uint64_t>(out, cfg.hash());
    const ParamStore& ps = stack.params();
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ps.size()));
    for (const auto& p : ps.all()) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out.insert(out.end(), p.name.begin(), p.name.end());
        detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(p.value.rows));
        detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(p.value.cols));
        for (double v : p.value.data) detail::put_f64(out, v);
    }
    return out;
}

inline void save_checkpoint(const GLadderStack& stack, const std::string& path) {
    detail::write_file_bytes(path, serialize_checkpoint(stack));
}

// Rebuilds the stack recorded in `bytes`. When expected_* are non-zero the
// stored backbone signature (L, D, schedule) must match exactly.
inline GLadderStack deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin,
                                           std::size_t expected_layers = 0, std::size_t expected_dim = 0,
                                           const std::vector<int>* expected_schedule = nullptr) {
    auto corrupt = [&](const std::string& why) -> RuntimeFailure {
        return RuntimeFailure("checkpoint corrupt (" + origin + "): " + why);
    };
    std::size_t off = 0;
    auto need = [&](std::size_t n) {
        if (off + n > bytes.size()) throw corrupt("truncated");
        off += n;
        return bytes.data() + (off - n);
    };
    const std::uint8_t* p = need(4);
    if (std::memcmp(p, "GLCK", 4) != 0) throw corrupt("bad magic");
    if (detail::get_le<std::uint16_t>(need(2)) != 1) throw corrupt("unsupported version");
    SideNetConfig cfg;
    cfg.backbone_layers = detail::get_le<std::uint32_t>(need(4));
    cfg.backbone_dim = detail::get_le<std::uint32_t>(need(4));
    std::uint32_t sched_count = detail::get_le<std::uint32_t>(need(4));
    cfg.schedule.clear();
    for (std::uint32_t i = 0; i < sched_count; ++i) {
        cfg.schedule.push_back(static_cast<int>(detail::get_le<std::uint32_t>(need(4))));
    }
    cfg.hidden = detail::get_le<std::uint32_t>(need(4));
    cfg.num_classes = detail::get_le<std::uint32_t>(need(4));
    cfg.gnn = static_cast<GnnKind>(*need(1));
    cfg.gnn_layers = detail::get_le<std::uint32_t>(need(4));
    cfg.activation = static_cast<Act>(*need(1));
    cfg.norm = static_cast<NormKind>(*need(1));
    cfg.dropout = detail::get_f64(need(8));
    cfg.temperature = detail::get_f64(need(8));
    std::uint8_t flags = *need(1);
    cfg.use_structure = flags & 1;
    cfg.learnable_gate = flags & 2;
    cfg.exit_heads_detached = flags & 4;
    cfg.exit_loss_weight = detail::get_f64(need(8));
    cfg.init_seed = detail::get_le<std::uint64_t>(need(8));
    std::uint64_t stored_hash = detail::get_le<std::uint64_t>(need(8));
    if (stored_hash != cfg.hash()) throw corrupt("config hash mismatch");

    if (expected_layers != 0 && cfg.backbone_layers != expected_layers) {
        throw ValidationError("checkpoint: backbone signature mismatch, expected " + std::to_string(expected_layers) +
                              " layers but checkpoint has " + std::to_string(cfg.backbone_layers));
    }
    if (expected_dim != 0 && cfg.backbone_dim != expected_dim) {
        throw ValidationError("checkpoint: backbone signature mismatch, expected dim " +
                              std::to_string(expected_dim) + " but checkpoint has " +
                              std::to_string(cfg.backbone_dim));
    }
    if (expected_schedule && *expected_schedule != cfg.schedule) {
        throw ValidationError("checkpoint: backbone signature mismatch, inserted layers differ");
    }

    GLadderStack stack(cfg);
    std::uint32_t count = detail::get_le<std::uint32_t>(need(4));
    if (count != stack.params().size()) throw corrupt("parameter count mismatch");
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = detail::get_le<std::uint32_t>(need(4));
        const std::uint8_t* np = need(name_len);
        std::string name(reinterpret_cast<const char*>(np), name_len);
        Param& param = stack.params()[static_cast<int>(i)];
        if (param.name != name) throw corrupt("parameter order mismatch at '" + name + "'");
        std::size_t rows = detail::get_le<std::uint64_t>(need(8));
        std::size_t cols = detail::get_le<std::uint64_t>(need(8));
        if (rows != param.value.rows || cols != param.value.cols) throw corrupt("parameter shape mismatch");
        for (double& v : param.value.data) v = detail::get_f64(need(8));
    }
    if (off != bytes.size()) throw corrupt("trailing bytes");
    return stack;
}

inline GLadderStack load_checkpoint(const std::string& path, std::size_t expected_layers = 0,
                                    std::size_t expected_dim = 0,
                                    const std::vector<int>* expected_schedule = nullptr) {
    return deserialize_checkpoint(detail::read_file_bytes(path), path, expected_layers, expected_dim,
                                  expected_schedule);
}

}  // namespace gladder
