#pragma once

// Frozen layer-wise encoders. The toy transformer stands in for a large
// language model: its weights are generated deterministically from a seed at
// construction and are never updated. Everything downstream consumes only
// per-layer pooled node embeddings, so any encoder that can produce those
// (including a file of precomputed embeddings, see cache.hpp) plugs in.
//
// Tokenizer: whitespace split, token id = 1 + (fnv1a64(token) % (vocab-1)).
// Id 0 is the reserved pad token; empty text maps to the single token [0].
// Sequences are truncated to max_tokens.
//
// Toy forward, per sequence (Q positions, dim D, H heads, Dh = D/H):
//   H0[q] = embed[token_q] + pos[q]
//   per layer: qm = proj(h, Wq); km = proj(h, Wk); vm = proj(h, Wv)
//              per head, per position t:
//                s_u   = dot(qm[t], km[u]) / sqrt(Dh) over the head's slice,
//                        u restricted to non-pad positions
//                alpha = softmax_u(s_u)   (uniform over all u if every
//                                          position is pad)
//                ctx[t] = sum_u alpha_u * vm[u]
//              h += proj(ctx, Wo)
//              h += proj(tanh(proj(h, M1)), M2)
//   proj(x, W)[t][i] = sum_j W[i][j] * x[t][j], no biases anywhere.
//
// Weight tensors are drawn in a fixed order, one RNG substream per tensor
// (substream(init_seed, tensor_index), entries row-major):
//   0: embed (vocab x D),  entries uniform in [-0.5, 0.5]
//   1: pos   (max_tokens x D), uniform in [-0.5, 0.5]
//   2+6l+k for layer l: Wq, Wk, Wv, Wo (D x D), M1 (2D x D), M2 (D x 2D),
//   entries uniform in [-1/sqrt(D), 1/sqrt(D)].
//
// Pooled embeddings are rounded to float32; that is the precision contract
// shared with the on-disk cache, which makes cached and live fetches
// bit-identical.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "gladder/errors.hpp"
#include "gladder/graph.hpp"
#include "gladder/linalg.hpp"
#include "gladder/rng.hpp"

namespace gladder {

using TokenId = std::uint32_t;
constexpr TokenId kPadToken = 0;

struct ToyTransformerConfig {
    std::size_t vocab_size = 4096;
    std::size_t num_layers = 4;
    std::size_t model_dim = 64;
    std::size_t heads = 4;
    std::size_t max_tokens = 32;
    std::uint64_t init_seed = 1;

    void validate() const {
        if (vocab_size < 2) throw ValidationError("toy backbone: vocab_size must be >= 2");
        if (model_dim == 0 || heads == 0 || model_dim % heads != 0) {
            throw ValidationError("toy backbone: model_dim must be divisible by heads");
        }
        if (max_tokens < 1) throw ValidationError("toy backbone: max_tokens must be >= 1");
    }
};

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::vector<TokenId> tokenize(const std::string& text, const ToyTransformerConfig& cfg) {
    std::vector<TokenId> ids;
    std::size_t i = 0;
    while (i < text.size() && ids.size() < cfg.max_tokens) {
        while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '\n' || text[i] == '\r')) ++i;
        std::size_t start = i;
        while (i < text.size() && text[i] != ' ' && text[i] != '\t' && text[i] != '\n' && text[i] != '\r') ++i;
        if (i > start) {
            ids.push_back(1 + static_cast<TokenId>(fnv1a64(text.substr(start, i - start)) % (cfg.vocab_size - 1)));
        }
    }
    if (ids.empty()) ids.push_back(kPadToken);
    return ids;
}

// Token-level states for a batch of nodes at one backbone layer (B x Q x D).
struct LayerTokenStates {
    int layer = 0;
    std::size_t batch = 0;
    std::size_t seq_len = 0;
    std::size_t dim = 0;
    std::vector<double> data;     // batch * seq_len * dim
    std::vector<TokenId> tokens;  // batch * seq_len, pad = 0

    double& at(std::size_t b, std::size_t q, std::size_t d) { return data[(b * seq_len + q) * dim + d]; }
    double at(std::size_t b, std::size_t q, std::size_t d) const { return data[(b * seq_len + q) * dim + d]; }
    TokenId token(std::size_t b, std::size_t q) const { return tokens[b * seq_len + q]; }
};

// Pooled node vectors at one backbone layer, float32 rows aligned with ids.
struct NodeEmbeddings {
    int layer = 0;
    std::vector<NodeId> node_ids;
    MatrixF values;  // |node_ids| x D
};

// Mean over non-pad positions; if every position is pad, mean over all.
inline NodeEmbeddings readout_mean(const LayerTokenStates& h, const std::vector<NodeId>& node_ids = {}) {
    if (h.seq_len < 1) throw ValidationError("readout_mean: empty sequence");
    NodeEmbeddings out;
    out.layer = h.layer;
    out.node_ids = node_ids.empty() ? [&] {
        std::vector<NodeId> ids(h.batch);
        for (std::size_t b = 0; b < h.batch; ++b) ids[b] = static_cast<NodeId>(b);
        return ids;
    }()
                                    : node_ids;
    out.values = MatrixF(h.batch, h.dim);
    for (std::size_t b = 0; b < h.batch; ++b) {
        std::size_t count = 0;
        for (std::size_t q = 0; q < h.seq_len; ++q) {
            if (h.token(b, q) != kPadToken) ++count;
        }
        bool use_all = count == 0;
        std::size_t denom = use_all ? h.seq_len : count;
        for (std::size_t d = 0; d < h.dim; ++d) {
            double acc = 0.0;
            for (std::size_t q = 0; q < h.seq_len; ++q) {
                if (use_all || h.token(b, q) != kPadToken) acc += h.at(b, q, d);
            }
            out.values.at(b, d) = static_cast<float>(acc / static_cast<double>(denom));
        }
    }
    return out;
}

class ToyTransformer {
public:
    explicit ToyTransformer(const ToyTransformerConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t d = cfg_.model_dim;
        auto draw = [&](std::size_t index, std::size_t rows, std::size_t cols, double bound) {
            Matrix m(rows, cols);
            Rng rng = substream(cfg_.init_seed, index);
            init_uniform(m, rng, bound);
            return m;
        };
        embed_ = draw(0, cfg_.vocab_size, d, 0.5);
        pos_ = draw(1, cfg_.max_tokens, d, 0.5);
        const double b = 1.0 / std::sqrt(static_cast<double>(d));
        layers_.resize(cfg_.num_layers);
        for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
            std::size_t base = 2 + 6 * l;
            layers_[l].wq = draw(base + 0, d, d, b);
            layers_[l].wk = draw(base + 1, d, d, b);
            layers_[l].wv = draw(base + 2, d, d, b);
            layers_[l].wo = draw(base + 3, d, d, b);
            layers_[l].m1 = draw(base + 4, 2 * d, d, b);
            layers_[l].m2 = draw(base + 5, d, 2 * d, b);
        }
    }

    const ToyTransformerConfig& config() const { return cfg_; }
    std::size_t num_layers() const { return cfg_.num_layers; }
    std::size_t model_dim() const { return cfg_.model_dim; }

    // Incremental single-sequence state, used by the per-node encoders.
    struct SeqState {
        std::vector<TokenId> tokens;
        Matrix h;  // Q x D
        int layer = 0;
    };

    SeqState init_state(const std::vector<TokenId>& tokens) const {
        if (tokens.empty()) throw ValidationError("backbone: empty token sequence");
        if (tokens.size() > cfg_.max_tokens) {
            throw ValidationError("backbone: sequence of " + std::to_string(tokens.size()) +
                                  " tokens exceeds max of " + std::to_string(cfg_.max_tokens));
        }
        SeqState st;
        st.tokens = tokens;
        st.h = Matrix(tokens.size(), cfg_.model_dim);
        for (std::size_t q = 0; q < tokens.size(); ++q) {
            if (tokens[q] >= cfg_.vocab_size) throw ValidationError("backbone: token id out of range");
            for (std::size_t d = 0; d < cfg_.model_dim; ++d) {
                st.h.at(q, d) = embed_.at(tokens[q], d) + pos_.at(q, d);
            }
        }
        st.layer = 0;
        return st;
    }

    void advance(SeqState& st) const {
        if (st.layer >= static_cast<int>(cfg_.num_layers)) {
            throw ValidationError("backbone: cannot advance past last layer");
        }
        layer_forward(st.h, st.tokens, layers_[static_cast<std::size_t>(st.layer)]);
        ++st.layer;
    }

    // Pooled float32 vector of the current state (mean over non-pad rows).
    std::vector<float> pooled(const SeqState& st) const {
        std::size_t count = 0;
        for (TokenId t : st.tokens) {
            if (t != kPadToken) ++count;
        }
        bool use_all = count == 0;
        std::size_t denom = use_all ? st.tokens.size() : count;
        std::vector<float> out(cfg_.model_dim);
        for (std::size_t d = 0; d < cfg_.model_dim; ++d) {
            double acc = 0.0;
            for (std::size_t q = 0; q < st.tokens.size(); ++q) {
                if (use_all || st.tokens[q] != kPadToken) acc += st.h.at(q, d);
            }
            out[d] = static_cast<float>(acc / static_cast<double>(denom));
        }
        return out;
    }

    // Full forward over a batch: states for l = 0..L. Sequences are padded to
    // the batch maximum with the pad token; pad rows flow through the layers
    // but are masked out of attention keys and the readout, so a node's
    // non-pad rows are bit-identical whether it runs alone or in a batch.
    std::vector<LayerTokenStates> forward(const std::vector<std::vector<TokenId>>& batch) const {
        if (batch.empty()) throw ValidationError("backbone: empty batch");
        std::size_t q_max = 0;
        for (const auto& seq : batch) {
            if (seq.empty()) throw ValidationError("backbone: empty token sequence");
            if (seq.size() > cfg_.max_tokens) {
                throw ValidationError("backbone: sequence of " + std::to_string(seq.size()) +
                                      " tokens exceeds max of " + std::to_string(cfg_.max_tokens));
            }
            q_max = std::max(q_max, seq.size());
        }
        std::vector<LayerTokenStates> out(cfg_.num_layers + 1);
        LayerTokenStates& h0 = out[0];
        h0.layer = 0;
        h0.batch = batch.size();
        h0.seq_len = q_max;
        h0.dim = cfg_.model_dim;
        h0.data.assign(h0.batch * q_max * h0.dim, 0.0);
        h0.tokens.assign(h0.batch * q_max, kPadToken);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            for (std::size_t q = 0; q < batch[b].size(); ++q) h0.tokens[b * q_max + q] = batch[b][q];
        }
        for (std::size_t b = 0; b < batch.size(); ++b) {
            for (std::size_t q = 0; q < q_max; ++q) {
                TokenId t = h0.token(b, q);
                if (t >= cfg_.vocab_size) throw ValidationError("backbone: token id out of range");
                for (std::size_t d = 0; d < cfg_.model_dim; ++d) h0.at(b, q, d) = embed_.at(t, d) + pos_.at(q, d);
            }
        }
        for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
            LayerTokenStates next = out[l];
            next.layer = static_cast<int>(l + 1);
            for (std::size_t b = 0; b < next.batch; ++b) {
                Matrix h(q_max, cfg_.model_dim);
                std::vector<TokenId> toks(q_max);
                for (std::size_t q = 0; q < q_max; ++q) {
                    toks[q] = next.token(b, q);
                    for (std::size_t d = 0; d < cfg_.model_dim; ++d) h.at(q, d) = next.at(b, q, d);
                }
                layer_forward(h, toks, layers_[l]);
                for (std::size_t q = 0; q < q_max; ++q) {
                    for (std::size_t d = 0; d < cfg_.model_dim; ++d) next.at(b, q, d) = h.at(q, d);
                }
            }
            out[l + 1] = std::move(next);
        }
        return out;
    }

    // Byte snapshot of every parameter, used to assert frozen-ness.
    std::vector<std::uint8_t> serialize_weights() const {
        std::vector<std::uint8_t> out;
        auto push = [&](const Matrix& m) {
            const std::uint8_t* p = reinterpret_cast<const std::uint8_t*>(m.data.data());
            out.insert(out.end(), p, p + m.data.size() * sizeof(double));
        };
        push(embed_);
        push(pos_);
        for (const auto& l : layers_) {
            push(l.wq);
            push(l.wk);
            push(l.wv);
            push(l.wo);
            push(l.m1);
            push(l.m2);
        }
        return out;
    }

    // Test access to individual weight tensors.
    const Matrix& embed() const { return embed_; }
    const Matrix& pos() const { return pos_; }
    const Matrix& layer_weight(std::size_t layer, std::size_t which) const {
        const auto& l = layers_[layer];
        switch (which) {
            case 0: return l.wq;
            case 1: return l.wk;
            case 2: return l.wv;
            case 3: return l.wo;
            case 4: return l.m1;
            default: return l.m2;
        }
    }

private:
    struct LayerWeights {
        Matrix wq, wk, wv, wo, m1, m2;
    };

    void layer_forward(Matrix& h, const std::vector<TokenId>& tokens, const LayerWeights& w) const {
        const std::size_t q_len = h.rows;
        const std::size_t d = cfg_.model_dim;
        const std::size_t heads = cfg_.heads;
        const std::size_t dh = d / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        Matrix qm = affine(h, w.wq, Matrix());
        Matrix km = affine(h, w.wk, Matrix());
        Matrix vm = affine(h, w.wv, Matrix());
        std::size_t valid_count = 0;
        for (TokenId t : tokens) {
            if (t != kPadToken) ++valid_count;
        }
        Matrix ctx(q_len, d);
        std::vector<double> weights(q_len);
        for (std::size_t head = 0; head < heads; ++head) {
            const std::size_t off = head * dh;
            for (std::size_t t = 0; t < q_len; ++t) {
                if (valid_count == 0) {
                    // all-pad sequence: uniform attention over all positions
                    for (std::size_t dd = 0; dd < dh; ++dd) {
                        double acc = 0.0;
                        for (std::size_t u = 0; u < q_len; ++u) acc += vm.at(u, off + dd);
                        ctx.at(t, off + dd) = acc / static_cast<double>(q_len);
                    }
                    continue;
                }
                double smax = -1e300;
                for (std::size_t u = 0; u < q_len; ++u) {
                    if (tokens[u] == kPadToken) {
                        weights[u] = 0.0;
                        continue;
                    }
                    double s = 0.0;
                    for (std::size_t dd = 0; dd < dh; ++dd) s += qm.at(t, off + dd) * km.at(u, off + dd);
                    weights[u] = s * scale;
                    smax = std::max(smax, weights[u]);
                }
                double z = 0.0;
                for (std::size_t u = 0; u < q_len; ++u) {
                    if (tokens[u] == kPadToken) continue;
                    weights[u] = std::exp(weights[u] - smax);
                    z += weights[u];
                }
                for (std::size_t dd = 0; dd < dh; ++dd) {
                    double acc = 0.0;
                    for (std::size_t u = 0; u < q_len; ++u) {
                        if (tokens[u] == kPadToken) continue;
                        acc += weights[u] * vm.at(u, off + dd);
                    }
                    ctx.at(t, off + dd) = acc / z;
                }
            }
        }
        Matrix attn = affine(ctx, w.wo, Matrix());
        for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += attn.data[i];
        Matrix inner = affine(h, w.m1, Matrix());
        for (double& v : inner.data) v = std::tanh(v);
        Matrix mlp = affine(inner, w.m2, Matrix());
        for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += mlp.data[i];
    }

    ToyTransformerConfig cfg_;
    Matrix embed_;
    Matrix pos_;
    std::vector<LayerWeights> layers_;
};

// Backbone layer indices at which G-Ladders attach: 0 (the embedding layer)
// and L always, plus every multiple of `stride` up to L - stride.
inline std::vector<int> make_schedule(std::size_t num_layers, std::size_t stride) {
    if (stride == 0) throw ValidationError("schedule: stride must be >= 1");
    std::vector<int> sched{0};
    for (std::size_t m = stride; m + stride <= num_layers; m += stride) sched.push_back(static_cast<int>(m));
    if (sched.back() != static_cast<int>(num_layers)) sched.push_back(static_cast<int>(num_layers));
    return sched;
}

inline void validate_schedule(const std::vector<int>& sched, std::size_t num_layers) {
    if (sched.empty()) throw ValidationError("schedule: empty");
    for (std::size_t i = 0; i < sched.size(); ++i) {
        if (sched[i] < 0 || sched[i] > static_cast<int>(num_layers)) {
            throw ValidationError("schedule: layer index " + std::to_string(sched[i]) + " outside [0," +
                                  std::to_string(num_layers) + "]");
        }
        if (i > 0 && sched[i] <= sched[i - 1]) throw ValidationError("schedule: indices must be strictly ascending");
    }
    if (sched.back() != static_cast<int>(num_layers)) {
        throw ValidationError("schedule: must end at the last backbone layer");
    }
}

}  // namespace gladder
