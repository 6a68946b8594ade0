#pragma once

// On-disk store of pooled node embeddings for every node at every inserted
// backbone layer. Because the backbone is frozen, the cache is valid for the
// whole training run and a cached fetch is bit-identical to a live forward.
//
// File layout (all integers little-endian):
//   magic   "GLEC"
//   version u16                      (currently 1)
//   N       u64                      node count
//   D       u32                      embedding dim
//   count   u32, then count x u32    inserted layer indices, ascending
//   dtype   u8                       0 = float32
//   blocks  count x (N x D) row-major little-endian float32

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "gladder/backbone.hpp"
#include "gladder/binio.hpp"
#include "gladder/errors.hpp"
#include "gladder/graph.hpp"
#include "gladder/linalg.hpp"

namespace gladder {

struct EmbeddingCache {
    std::size_t num_nodes = 0;
    std::size_t dim = 0;
    std::vector<int> inserted_layers;
    std::vector<MatrixF> blocks;  // one N x D block per inserted layer

    int layer_index(int layer) const {
        for (std::size_t i = 0; i < inserted_layers.size(); ++i) {
            if (inserted_layers[i] == layer) return static_cast<int>(i);
        }
        return -1;
    }

    bool has_layer(int layer) const { return layer_index(layer) >= 0; }

    // Rows in requested node order; no backbone computation happens here.
    MatrixF lookup(int layer, const std::vector<NodeId>& nodes) const {
        int idx = layer_index(layer);
        if (idx < 0) {
            throw ValidationError("cache: layer " + std::to_string(layer) + " is not an inserted layer");
        }
        const MatrixF& block = blocks[static_cast<std::size_t>(idx)];
        MatrixF out(nodes.size(), dim);
        for (std::size_t r = 0; r < nodes.size(); ++r) {
            if (nodes[r] >= num_nodes) throw ValidationError("cache: node id out of range");
            std::memcpy(out.row(r), block.row(nodes[r]), dim * sizeof(float));
        }
        return out;
    }

    std::vector<std::uint8_t> serialize() const {
        std::vector<std::uint8_t> out;
        out.insert(out.end(), {'G', 'L', 'E', 'C'});
        detail::put_le<std::uint16_t>(out, 1);
        detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(num_nodes));
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(inserted_layers.size()));
        for (int l : inserted_layers) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l));
        out.push_back(0);  // dtype: float32
        for (const MatrixF& block : blocks) {
            for (float f : block.data) {
                std::uint32_t bits;
                std::memcpy(&bits, &f, 4);
                detail::put_le<std::uint32_t>(out, bits);
            }
        }
        return out;
    }

    void save(const std::string& path) const { detail::write_file_bytes(path, serialize()); }

    static EmbeddingCache load(const std::string& path) { return deserialize(detail::read_file_bytes(path), path); }

    static EmbeddingCache deserialize(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
        auto corrupt = [&](const std::string& why) -> RuntimeFailure {
            return RuntimeFailure("cache corrupt (" + origin + "): " + why);
        };
        std::size_t off = 0;
        auto need = [&](std::size_t n) {
            if (off + n > bytes.size()) throw corrupt("truncated");
            off += n;
            return bytes.data() + (off - n);
        };
        const std::uint8_t* p = need(4);
        if (std::memcmp(p, "GLEC", 4) != 0) throw corrupt("bad magic");
        std::uint16_t version = detail::get_le<std::uint16_t>(need(2));
        if (version != 1) throw corrupt("unsupported version " + std::to_string(version));
        EmbeddingCache c;
        c.num_nodes = detail::get_le<std::uint64_t>(need(8));
        c.dim = detail::get_le<std::uint32_t>(need(4));
        std::uint32_t count = detail::get_le<std::uint32_t>(need(4));
        for (std::uint32_t i = 0; i < count; ++i) {
            c.inserted_layers.push_back(static_cast<int>(detail::get_le<std::uint32_t>(need(4))));
        }
        std::uint8_t dtype = *need(1);
        if (dtype != 0) throw corrupt("unsupported dtype tag " + std::to_string(dtype));
        for (std::uint32_t i = 0; i < count; ++i) {
            MatrixF block(c.num_nodes, c.dim);
            for (float& f : block.data) {
                std::uint32_t bits = detail::get_le<std::uint32_t>(need(4));
                std::memcpy(&f, &bits, 4);
            }
            c.blocks.push_back(std::move(block));
        }
        if (off != bytes.size()) throw corrupt("trailing bytes");
        return c;
    }
};

// Runs the frozen backbone once per node and stores the pooled embedding at
// every scheduled layer. Nodes may be sharded across threads; every shard
// writes disjoint rows, so the result does not depend on the thread count.
inline EmbeddingCache precompute_cache(const ToyTransformer& encoder, const TextualGraph& g,
                                       const std::vector<int>& schedule, std::size_t threads = 1) {
    validate_schedule(schedule, encoder.num_layers());
    EmbeddingCache cache;
    cache.num_nodes = g.num_nodes;
    cache.dim = encoder.model_dim();
    cache.inserted_layers = schedule;
    cache.blocks.assign(schedule.size(), MatrixF(g.num_nodes, encoder.model_dim()));

    auto encode_range = [&](std::size_t begin, std::size_t end) {
        for (std::size_t v = begin; v < end; ++v) {
            auto st = encoder.init_state(tokenize(g.texts[v], encoder.config()));
            for (std::size_t s = 0; s < schedule.size(); ++s) {
                while (st.layer < schedule[s]) encoder.advance(st);
                std::vector<float> row = encoder.pooled(st);
                std::memcpy(cache.blocks[s].row(v), row.data(), row.size() * sizeof(float));
            }
        }
    };
    if (threads <= 1 || g.num_nodes < 2 * threads) {
        encode_range(0, g.num_nodes);
    } else {
        std::vector<std::thread> pool;
        std::size_t chunk = (g.num_nodes + threads - 1) / threads;
        for (std::size_t t = 0; t < threads; ++t) {
            std::size_t begin = t * chunk;
            std::size_t end = std::min(g.num_nodes, begin + chunk);
            if (begin < end) pool.emplace_back(encode_range, begin, end);
        }
        for (auto& th : pool) th.join();
    }
    return cache;
}

// Per-subgraph source of pooled embeddings, the seam between the frozen
// backbone and the side network. Training and inference call begin() once
// per target and then ask for ascending scheduled layers.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    virtual void begin(const Subgraph& sub) = 0;

    // |members| x D rows for the current subgraph, widened to double.
    Matrix layer_rows(int layer) {
        ++fetch_count_;
        return fetch(layer);
    }

    std::uint64_t fetch_calls() const { return fetch_count_; }

    // Backbone layer evaluations performed so far (0 for cached sources).
    virtual std::uint64_t backbone_layer_evals() const { return 0; }

protected:
    virtual Matrix fetch(int layer) = 0;

private:
    std::uint64_t fetch_count_ = 0;
};

class CacheProvider final : public EmbeddingProvider {
public:
    explicit CacheProvider(const EmbeddingCache& cache) : cache_(cache) {}

    void begin(const Subgraph& sub) override { members_ = sub.members; }

protected:
    Matrix fetch(int layer) override { return widen(cache_.lookup(layer, members_)); }

private:
    const EmbeddingCache& cache_;
    std::vector<NodeId> members_;
};

// Computes embeddings on demand, advancing each member's token states only
// as far as the requested layer. Early exit therefore skips the deeper
// backbone layers entirely.
class LiveProvider final : public EmbeddingProvider {
public:
    LiveProvider(const ToyTransformer& encoder, const TextualGraph& g) : encoder_(encoder), graph_(g) {}

    void begin(const Subgraph& sub) override {
        states_.clear();
        states_.reserve(sub.members.size());
        for (NodeId v : sub.members) {
            states_.push_back(encoder_.init_state(tokenize(graph_.texts[v], encoder_.config())));
        }
    }

    std::uint64_t backbone_layer_evals() const override { return layer_evals_; }

protected:
    Matrix fetch(int layer) override {
        if (states_.empty()) throw ValidationError("live provider: begin() not called");
        Matrix out(states_.size(), encoder_.model_dim());
        for (std::size_t i = 0; i < states_.size(); ++i) {
            auto& st = states_[i];
            if (layer < st.layer) throw ValidationError("live provider: layers must be requested in ascending order");
            while (st.layer < layer) {
                encoder_.advance(st);
                ++layer_evals_;
            }
            std::vector<float> row = encoder_.pooled(st);
            for (std::size_t d = 0; d < row.size(); ++d) out.at(i, d) = static_cast<double>(row[d]);
        }
        return out;
    }

private:
    const ToyTransformer& encoder_;
    const TextualGraph& graph_;
    std::vector<ToyTransformer::SeqState> states_;
    std::uint64_t layer_evals_ = 0;
};

}  // namespace gladder
