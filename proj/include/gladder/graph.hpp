#pragma once

// Graph data model, ingestion, and the subgraph samplers.
//
// Ingestion format (UTF-8 text):
//   nodes=<N> classes=<C>
//   <id>\t<label>\t<split>\t<text>        one line per node, text may be empty
//   edges
//   <src>\t<dst>                           one line per edge, 0-based ids
//
// Graphs are undirected: edges are normalized to (min,max), self-loops are
// dropped, and the list is deduplicated.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <queue>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gladder/errors.hpp"
#include "gladder/rng.hpp"

namespace gladder {

using NodeId = std::uint32_t;

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        default: return "test";
    }
}

struct TextualGraph {
    std::size_t num_nodes = 0;
    std::size_t num_classes = 0;
    std::vector<std::pair<NodeId, NodeId>> edges;  // normalized: src < dst, unique, sorted
    std::vector<std::string> texts;
    std::vector<int> labels;
    std::vector<Split> splits;

    // CSR adjacency, built by finalize().
    std::vector<std::size_t> adj_offsets;
    std::vector<NodeId> adj_neighbors;

    std::size_t degree(NodeId v) const { return adj_offsets[v + 1] - adj_offsets[v]; }

    const NodeId* neighbors_begin(NodeId v) const { return adj_neighbors.data() + adj_offsets[v]; }
    const NodeId* neighbors_end(NodeId v) const { return adj_neighbors.data() + adj_offsets[v + 1]; }

    std::vector<NodeId> split_nodes(Split s) const {
        std::vector<NodeId> out;
        for (NodeId v = 0; v < num_nodes; ++v) {
            if (splits[v] == s) out.push_back(v);
        }
        return out;
    }

    bool has_edge(NodeId a, NodeId b) const {
        const NodeId* lo = neighbors_begin(a);
        const NodeId* hi = neighbors_end(a);
        return std::binary_search(lo, hi, b);
    }

    // Normalizes the edge list, validates invariants, and builds adjacency.
    void finalize() {
        if (texts.size() != num_nodes || labels.size() != num_nodes || splits.size() != num_nodes) {
            throw ValidationError("graph: per-node arrays must have num_nodes entries");
        }
        for (auto& e : edges) {
            if (e.first >= num_nodes || e.second >= num_nodes) {
                throw ValidationError("graph: edge endpoint out of range (" + std::to_string(e.first) + "," +
                                      std::to_string(e.second) + ") with " + std::to_string(num_nodes) + " nodes");
            }
            if (e.first > e.second) std::swap(e.first, e.second);
        }
        std::sort(edges.begin(), edges.end());
        edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
        edges.erase(std::remove_if(edges.begin(), edges.end(), [](const auto& e) { return e.first == e.second; }),
                    edges.end());
        for (std::size_t i = 0; i < num_nodes; ++i) {
            if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
                throw ValidationError("graph: label of node " + std::to_string(i) + " out of range [0," +
                                      std::to_string(num_classes) + ")");
            }
        }
        adj_offsets.assign(num_nodes + 1, 0);
        for (const auto& e : edges) {
            ++adj_offsets[e.first + 1];
            ++adj_offsets[e.second + 1];
        }
        for (std::size_t i = 0; i < num_nodes; ++i) adj_offsets[i + 1] += adj_offsets[i];
        adj_neighbors.assign(adj_offsets.back(), 0);
        std::vector<std::size_t> cursor(adj_offsets.begin(), adj_offsets.end() - 1);
        for (const auto& e : edges) {
            adj_neighbors[cursor[e.first]++] = e.second;
            adj_neighbors[cursor[e.second]++] = e.first;
        }
        for (std::size_t v = 0; v < num_nodes; ++v) {
            std::sort(adj_neighbors.begin() + adj_offsets[v], adj_neighbors.begin() + adj_offsets[v + 1]);
        }
    }
};

struct Subgraph {
    NodeId target = 0;
    std::vector<NodeId> members;                              // target first, unique
    std::vector<std::pair<std::size_t, std::size_t>> local_edges;  // member positions

    std::size_t size() const { return members.size(); }
};

enum class SamplerKind : std::uint8_t { KHop, Rwr };

struct SamplerConfig {
    SamplerKind kind = SamplerKind::KHop;
    std::size_t hops = 1;          // khop
    std::size_t walk_length = 16;  // rwr
    double restart_prob = 0.5;     // rwr
    std::size_t num_walks = 8;     // rwr
    std::size_t max_nodes = 32;
    std::uint64_t seed = 0;

    void validate() const {
        if (restart_prob < 0.0 || restart_prob > 1.0) throw ValidationError("sampler: restart_prob must be in [0,1]");
        if (hops < 1) throw ValidationError("sampler: hops must be >= 1");
        if (max_nodes < 1) throw ValidationError("sampler: max_nodes must be >= 1");
    }
};

namespace detail {

inline void induce_local_edges(const TextualGraph& g, Subgraph& sub) {
    // position lookup by sorted member copy keeps this O(m log m)
    std::vector<std::pair<NodeId, std::size_t>> order;
    order.reserve(sub.members.size());
    for (std::size_t i = 0; i < sub.members.size(); ++i) order.emplace_back(sub.members[i], i);
    std::sort(order.begin(), order.end());
    auto find_pos = [&](NodeId v) -> std::size_t {
        auto it = std::lower_bound(order.begin(), order.end(), std::make_pair(v, std::size_t(0)));
        if (it == order.end() || it->first != v) return static_cast<std::size_t>(-1);
        return it->second;
    };
    for (std::size_t i = 0; i < sub.members.size(); ++i) {
        NodeId v = sub.members[i];
        for (const NodeId* n = g.neighbors_begin(v); n != g.neighbors_end(v); ++n) {
            if (*n < v) continue;  // each undirected edge once
            std::size_t j = find_pos(*n);
            if (j != static_cast<std::size_t>(-1)) sub.local_edges.emplace_back(i, j);
        }
    }
    std::sort(sub.local_edges.begin(), sub.local_edges.end());
}

}  // namespace detail

// BFS ego graph. Members ordered closest-first, ties by ascending node id,
// truncated to max_nodes.
inline Subgraph sample_khop(const TextualGraph& g, NodeId target, const SamplerConfig& cfg) {
    cfg.validate();
    if (target >= g.num_nodes) throw ValidationError("sample_khop: target out of range");
    Subgraph sub;
    sub.target = target;
    std::vector<int> dist(g.num_nodes, -1);
    dist[target] = 0;
    std::vector<NodeId> frontier{target};
    std::vector<NodeId> visited{target};
    for (std::size_t h = 1; h <= cfg.hops && !frontier.empty(); ++h) {
        std::vector<NodeId> next;
        for (NodeId v : frontier) {
            for (const NodeId* n = g.neighbors_begin(v); n != g.neighbors_end(v); ++n) {
                if (dist[*n] < 0) {
                    dist[*n] = static_cast<int>(h);
                    next.push_back(*n);
                }
            }
        }
        std::sort(next.begin(), next.end());
        visited.insert(visited.end(), next.begin(), next.end());
        frontier = std::move(next);
    }
    // visited is already (distance, id) ordered: BFS rings appended in id order
    if (visited.size() > cfg.max_nodes) visited.resize(cfg.max_nodes);
    sub.members = std::move(visited);
    detail::induce_local_edges(g, sub);
    return sub;
}

// Random walk with restart. One RNG substream per walk:
// substream(cfg.seed, target, walk_index). Each step draws next_unit(); if it
// is < restart_prob the walk jumps back to the target, otherwise it moves to
// neighbor next_below(degree) (staying put at degree-0 nodes, consuming no
// neighbor draw). Members: target first, then first-visit order.
inline Subgraph sample_rwr(const TextualGraph& g, NodeId target, const SamplerConfig& cfg) {
    cfg.validate();
    if (target >= g.num_nodes) throw ValidationError("sample_rwr: target out of range");
    Subgraph sub;
    sub.target = target;
    std::vector<char> seen(g.num_nodes, 0);
    seen[target] = 1;
    sub.members.push_back(target);
    for (std::size_t w = 0; w < cfg.num_walks; ++w) {
        Rng rng = substream(cfg.seed, target, w);
        NodeId cur = target;
        for (std::size_t step = 0; step < cfg.walk_length; ++step) {
            if (rng.next_unit() < cfg.restart_prob) {
                cur = target;
            } else if (g.degree(cur) > 0) {
                cur = g.neighbors_begin(cur)[rng.next_below(g.degree(cur))];
            }
            if (!seen[cur] && sub.members.size() < cfg.max_nodes) {
                seen[cur] = 1;
                sub.members.push_back(cur);
            }
        }
    }
    detail::induce_local_edges(g, sub);
    return sub;
}

inline Subgraph sample_subgraph(const TextualGraph& g, NodeId target, const SamplerConfig& cfg) {
    return cfg.kind == SamplerKind::KHop ? sample_khop(g, target, cfg) : sample_rwr(g, target, cfg);
}

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line, char sep, std::size_t max_fields) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (out.size() + 1 < max_fields) {
        std::size_t tab = line.find(sep, start);
        if (tab == std::string::npos) break;
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    out.push_back(line.substr(start));
    return out;
}

inline long parse_int(const std::string& s, std::size_t line_no, const char* what) {
    try {
        std::size_t used = 0;
        long v = std::stol(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("line " + std::to_string(line_no) + ": cannot parse " + what + " from '" + s + "'");
    }
}

}  // namespace detail

inline TextualGraph load_graph(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("cannot open graph file: " + path);
    TextualGraph g;
    std::string raw;
    std::string line;
    std::size_t line_no = 0;
    auto getline_trimmed = [&](std::string& out) {
        if (!std::getline(in, raw)) return false;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();  // CRLF tolerance
        out = raw;
        return true;
    };

    if (!getline_trimmed(line)) throw ValidationError("line 1: missing header 'nodes=<N> classes=<C>'");
    ++line_no;
    {
        std::istringstream hs(line);
        std::string ntok, ctok;
        hs >> ntok >> ctok;
        if (ntok.rfind("nodes=", 0) != 0 || ctok.rfind("classes=", 0) != 0) {
            throw ValidationError("line 1: expected header 'nodes=<N> classes=<C>', got '" + line + "'");
        }
        g.num_nodes = static_cast<std::size_t>(detail::parse_int(ntok.substr(6), 1, "node count"));
        g.num_classes = static_cast<std::size_t>(detail::parse_int(ctok.substr(8), 1, "class count"));
    }
    g.texts.assign(g.num_nodes, "");
    g.labels.assign(g.num_nodes, 0);
    g.splits.assign(g.num_nodes, Split::Train);
    std::vector<char> node_seen(g.num_nodes, 0);

    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        if (!getline_trimmed(line)) {
            throw ValidationError("line " + std::to_string(line_no + 1) + ": expected node line, got end of file");
        }
        ++line_no;
        auto fields = detail::split_fields(line, '\t', 4);
        if (fields.size() < 3) {
            throw ValidationError("line " + std::to_string(line_no) + ": node line needs id<TAB>label<TAB>split[<TAB>text]");
        }
        long id = detail::parse_int(fields[0], line_no, "node id");
        if (id < 0 || static_cast<std::size_t>(id) >= g.num_nodes) {
            throw ValidationError("line " + std::to_string(line_no) + ": node id " + fields[0] + " out of range");
        }
        if (node_seen[id]) throw ValidationError("line " + std::to_string(line_no) + ": duplicate node id " + fields[0]);
        node_seen[id] = 1;
        long label = detail::parse_int(fields[1], line_no, "label");
        if (label < 0 || static_cast<std::size_t>(label) >= g.num_classes) {
            throw ValidationError("line " + std::to_string(line_no) + ": label " + fields[1] + " out of range [0," +
                                  std::to_string(g.num_classes) + ")");
        }
        g.labels[id] = static_cast<int>(label);
        if (fields[2] == "train") {
            g.splits[id] = Split::Train;
        } else if (fields[2] == "val") {
            g.splits[id] = Split::Val;
        } else if (fields[2] == "test") {
            g.splits[id] = Split::Test;
        } else {
            throw ValidationError("line " + std::to_string(line_no) + ": split must be train|val|test, got '" +
                                  fields[2] + "'");
        }
        g.texts[id] = fields.size() > 3 ? fields[3] : "";
    }

    if (!getline_trimmed(line) || line != "edges") {
        throw ValidationError("line " + std::to_string(line_no + 1) + ": expected 'edges' separator");
    }
    ++line_no;
    while (getline_trimmed(line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = detail::split_fields(line, '\t', 2);
        if (fields.size() != 2) {
            throw ValidationError("line " + std::to_string(line_no) + ": edge line needs src<TAB>dst");
        }
        long s = detail::parse_int(fields[0], line_no, "edge src");
        long d = detail::parse_int(fields[1], line_no, "edge dst");
        if (s < 0 || static_cast<std::size_t>(s) >= g.num_nodes || d < 0 ||
            static_cast<std::size_t>(d) >= g.num_nodes) {
            throw ValidationError("line " + std::to_string(line_no) + ": endpoint out of range (" + fields[0] + "," +
                                  fields[1] + ") with " + std::to_string(g.num_nodes) + " nodes");
        }
        g.edges.emplace_back(static_cast<NodeId>(s), static_cast<NodeId>(d));
    }
    g.finalize();
    return g;
}

inline void save_graph(const TextualGraph& g, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write graph file: " + path);
    out << "nodes=" << g.num_nodes << " classes=" << g.num_classes << "\n";
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        out << i << '\t' << g.labels[i] << '\t' << split_name(g.splits[i]) << '\t' << g.texts[i] << "\n";
    }
    out << "edges\n";
    for (const auto& e : g.edges) out << e.first << '\t' << e.second << "\n";
    if (!out) throw RuntimeFailure("write failed: " + path);
}

}  // namespace gladder
