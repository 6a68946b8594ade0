#pragma once

// Synthetic graph generators for tests and benchmarks.
//
// The homophilous fixture plants a class per node, wires edges mostly within
// classes, gives each node a noisy bag of class-indicator words, and labels
// each node by the majority planted class of its closed neighborhood. A
// node's own text is only a noisy hint, so aggregating neighbor texts is
// provably useful; this is the setting where removing message passing has to
// hurt.

#include <cstdint>
#include <string>
#include <vector>

#include "gladder/graph.hpp"
#include "gladder/rng.hpp"

namespace gladder {

struct HomophilousParams {
    std::size_t num_nodes = 300;
    std::size_t num_classes = 4;
    std::size_t edges_per_node = 3;
    double intra_class_prob = 0.85;  // edge partner drawn from the same planted class
    std::size_t words_per_node = 4;
    double text_noise = 0.35;  // word indicates a random wrong class
    double train_frac = 0.4;
    double val_frac = 0.3;
    std::uint64_t seed = 7;
};

inline TextualGraph make_homophilous_graph(const HomophilousParams& p = {}) {
    TextualGraph g;
    g.num_nodes = p.num_nodes;
    g.num_classes = p.num_classes;
    g.texts.resize(p.num_nodes);
    g.labels.assign(p.num_nodes, 0);
    g.splits.assign(p.num_nodes, Split::Train);

    Rng plant_rng = substream(p.seed, 0x9147, 0);
    std::vector<int> planted(p.num_nodes);
    std::vector<std::vector<NodeId>> by_class(p.num_classes);
    for (std::size_t v = 0; v < p.num_nodes; ++v) {
        planted[v] = static_cast<int>(plant_rng.next_below(p.num_classes));
        by_class[static_cast<std::size_t>(planted[v])].push_back(static_cast<NodeId>(v));
    }

    Rng edge_rng = substream(p.seed, 0x9147, 1);
    for (std::size_t v = 0; v < p.num_nodes; ++v) {
        for (std::size_t e = 0; e < p.edges_per_node; ++e) {
            NodeId u;
            const auto& same = by_class[static_cast<std::size_t>(planted[v])];
            if (edge_rng.next_unit() < p.intra_class_prob && same.size() > 1) {
                do {
                    u = same[edge_rng.next_below(same.size())];
                } while (u == v);
            } else {
                do {
                    u = static_cast<NodeId>(edge_rng.next_below(p.num_nodes));
                } while (u == v);
            }
            g.edges.emplace_back(static_cast<NodeId>(v), u);
        }
    }

    Rng text_rng = substream(p.seed, 0x9147, 2);
    for (std::size_t v = 0; v < p.num_nodes; ++v) {
        std::string text;
        for (std::size_t w = 0; w < p.words_per_node; ++w) {
            std::size_t cls = static_cast<std::size_t>(planted[v]);
            if (text_rng.next_unit() < p.text_noise) {
                cls = text_rng.next_below(p.num_classes);
            }
            if (w) text += ' ';
            text += "cls" + std::to_string(cls) + "w" + std::to_string(text_rng.next_below(3));
        }
        g.texts[v] = text;
    }

    g.finalize();  // builds adjacency for the majority vote below

    for (std::size_t v = 0; v < p.num_nodes; ++v) {
        std::vector<std::size_t> counts(p.num_classes, 0);
        ++counts[static_cast<std::size_t>(planted[v])];
        for (const NodeId* n = g.neighbors_begin(static_cast<NodeId>(v)); n != g.neighbors_end(static_cast<NodeId>(v));
             ++n) {
            ++counts[static_cast<std::size_t>(planted[*n])];
        }
        std::size_t best = 0;
        for (std::size_t c = 1; c < p.num_classes; ++c) {
            if (counts[c] > counts[best]) best = c;
        }
        g.labels[v] = static_cast<int>(best);
    }

    std::vector<NodeId> order(p.num_nodes);
    for (std::size_t v = 0; v < p.num_nodes; ++v) order[v] = static_cast<NodeId>(v);
    Rng split_rng = substream(p.seed, 0x9147, 3);
    shuffle(order, split_rng);
    std::size_t n_train = static_cast<std::size_t>(p.train_frac * static_cast<double>(p.num_nodes));
    std::size_t n_val = static_cast<std::size_t>(p.val_frac * static_cast<double>(p.num_nodes));
    for (std::size_t i = 0; i < p.num_nodes; ++i) {
        g.splits[order[i]] = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
    }
    return g;
}

// Six nodes in two identical triples: training, validation, and test copies
// of the same two perfectly separable nodes. Any model that memorizes the
// training pair generalizes to the copies.
inline TextualGraph make_separable_fixture() {
    TextualGraph g;
    g.num_nodes = 6;
    g.num_classes = 2;
    g.texts = {"alpha alpha alpha", "beta beta beta", "alpha alpha alpha",
               "beta beta beta",    "alpha alpha alpha", "beta beta beta"};
    g.labels = {0, 1, 0, 1, 0, 1};
    g.splits = {Split::Train, Split::Train, Split::Val, Split::Val, Split::Test, Split::Test};
    g.edges = {{0, 2}, {2, 4}, {1, 3}, {3, 5}};
    g.finalize();
    return g;
}

}  // namespace gladder
