#pragma once

// Reverse-mode differentiation over a closed operation set that covers
// exactly what the side network needs. A Tape is bound to one ParamStore at
// construction and can only reference parameters registered there; backbone
// outputs enter as constants. That makes "gradients never touch the
// backbone" a structural property rather than a numerical one.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gladder/errors.hpp"
#include "gladder/linalg.hpp"

namespace gladder {

enum class Act : int { Identity = 0, Relu = 1, Elu = 2 };

inline double apply_act(Act a, double x) {
    switch (a) {
        case Act::Relu: return x > 0.0 ? x : 0.0;
        case Act::Elu: return x > 0.0 ? x : std::expm1(x);
        default: return x;
    }
}

inline double act_grad(Act a, double x, double y) {
    switch (a) {
        case Act::Relu: return x > 0.0 ? 1.0 : 0.0;
        case Act::Elu: return x > 0.0 ? 1.0 : y + 1.0;
        default: return 1.0;
    }
}

// Numerically stable logistic.
inline double stable_sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

struct Param {
    std::string name;
    Matrix value;
    Matrix grad;
};

class ParamStore {
public:
    int add(std::string name, Matrix init) {
        for (const auto& p : params_) {
            if (p.name == name) throw ValidationError("param '" + name + "' registered twice");
        }
        params_.push_back(Param{std::move(name), init, Matrix(init.rows, init.cols)});
        return static_cast<int>(params_.size()) - 1;
    }

    Param& operator[](int id) { return params_[static_cast<std::size_t>(id)]; }
    const Param& operator[](int id) const { return params_[static_cast<std::size_t>(id)]; }

    std::size_t size() const { return params_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    void zero_grads() {
        for (auto& p : params_) p.grad.fill(0.0);
    }

    std::vector<Matrix> snapshot_values() const {
        std::vector<Matrix> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back(p.value);
        return out;
    }

    void restore_values(const std::vector<Matrix>& snap) {
        if (snap.size() != params_.size()) throw ValidationError("param snapshot size mismatch");
        for (std::size_t i = 0; i < snap.size(); ++i) params_[i].value = snap[i];
    }

    std::vector<Param>& all() { return params_; }
    const std::vector<Param>& all() const { return params_; }

private:
    std::vector<Param> params_;
};

enum class OpKind : int {
    ConstLeaf = 0,
    ParamLeaf = 1,
    Affine = 2,
    Add = 3,
    NeighborMean = 4,
    GcnAgg = 5,
    GatAgg = 6,
    Activation = 7,
    LayerNorm = 8,
    DropoutMask = 9,
    Detach = 10,
    SigmoidGate = 11,
    ConvexBlend = 12,
    SoftmaxCrossEntropy = 13,
    ScalarSum = 14,
    ReduceDot = 15,  // scalar = sum(x .* const), reduction for the check harness
};

constexpr double kGatLeakySlope = 0.2;
constexpr double kLayerNormEps = 1e-5;

class Tape {
public:
    explicit Tape(ParamStore& store) : store_(&store) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    const ParamStore* owner() const { return store_; }

    int constant(Matrix v) {
        Node n;
        n.kind = OpKind::ConstLeaf;
        n.value = std::move(v);
        return push(std::move(n));
    }

    int param(int param_id) {
        check_param(param_id);
        Node n;
        n.kind = OpKind::ParamLeaf;
        n.param = param_id;
        n.value = (*store_)[param_id].value;
        return push(std::move(n));
    }

    // y[r] = W x[r] + b. bias_param may be -1 for no bias.
    int affine(int x, int weight_param, int bias_param) {
        check_param(weight_param);
        if (bias_param >= 0) check_param(bias_param);
        Node n;
        n.kind = OpKind::Affine;
        n.inputs = {x};
        n.param = weight_param;
        n.param2 = bias_param;
        const Matrix& w = (*store_)[weight_param].value;
        const Matrix b = bias_param >= 0 ? (*store_)[bias_param].value : Matrix();
        n.value = gladder::affine(value(x), w, b);
        return push(std::move(n));
    }

    int add(int a, int b) {
        Node n;
        n.kind = OpKind::Add;
        n.inputs = {a, b};
        n.value = gladder::add(value(a), value(b));
        return push(std::move(n));
    }

    // y_i = mean of x over neighbors of i (zero vector when i has none).
    int neighbor_mean(int x, std::vector<std::pair<std::size_t, std::size_t>> edges) {
        const Matrix& xv = value(x);
        check_edges(edges, xv.rows);
        Node n;
        n.kind = OpKind::NeighborMean;
        n.inputs = {x};
        n.edges = std::move(edges);
        n.value = Matrix(xv.rows, xv.cols);
        std::vector<double> deg(xv.rows, 0.0);
        for (const auto& e : n.edges) {
            deg[e.first] += 1.0;
            deg[e.second] += 1.0;
        }
        for (const auto& e : n.edges) {
            for (std::size_t c = 0; c < xv.cols; ++c) {
                n.value.at(e.first, c) += xv.at(e.second, c);
                n.value.at(e.second, c) += xv.at(e.first, c);
            }
        }
        for (std::size_t r = 0; r < xv.rows; ++r) {
            if (deg[r] > 0.0) {
                for (std::size_t c = 0; c < xv.cols; ++c) n.value.at(r, c) /= deg[r];
            }
        }
        n.saved = std::move(deg);
        return push(std::move(n));
    }

    // Symmetric-normalized aggregation with self-loops:
    // y_i = sum_{j in N(i) + i} x_j / sqrt(dhat_i * dhat_j), dhat = degree + 1.
    int gcn_agg(int x, std::vector<std::pair<std::size_t, std::size_t>> edges) {
        const Matrix& xv = value(x);
        check_edges(edges, xv.rows);
        Node n;
        n.kind = OpKind::GcnAgg;
        n.inputs = {x};
        n.edges = std::move(edges);
        std::vector<double> dhat(xv.rows, 1.0);
        for (const auto& e : n.edges) {
            dhat[e.first] += 1.0;
            dhat[e.second] += 1.0;
        }
        n.value = Matrix(xv.rows, xv.cols);
        for (std::size_t r = 0; r < xv.rows; ++r) {
            for (std::size_t c = 0; c < xv.cols; ++c) n.value.at(r, c) = xv.at(r, c) / dhat[r];
        }
        for (const auto& e : n.edges) {
            double coeff = 1.0 / std::sqrt(dhat[e.first] * dhat[e.second]);
            for (std::size_t c = 0; c < xv.cols; ++c) {
                n.value.at(e.first, c) += coeff * xv.at(e.second, c);
                n.value.at(e.second, c) += coeff * xv.at(e.first, c);
            }
        }
        n.saved = std::move(dhat);
        return push(std::move(n));
    }

    // Single-head attention aggregation with self-loops over the projected
    // features x: e_ij = leakyrelu(a_src.x_i + a_dst.x_j), alpha = softmax_j,
    // y_i = sum_j alpha_ij x_j. a_src and a_dst are 1 x K parameters.
    int gat_agg(int x, int a_src_param, int a_dst_param, std::vector<std::pair<std::size_t, std::size_t>> edges) {
        check_param(a_src_param);
        check_param(a_dst_param);
        const Matrix& xv = value(x);
        check_edges(edges, xv.rows);
        Node n;
        n.kind = OpKind::GatAgg;
        n.inputs = {x};
        n.param = a_src_param;
        n.param2 = a_dst_param;
        n.edges = std::move(edges);
        const Matrix& a_src = (*store_)[a_src_param].value;
        const Matrix& a_dst = (*store_)[a_dst_param].value;
        if (a_src.size() != xv.cols || a_dst.size() != xv.cols) {
            throw ValidationError("gat: attention vectors must have the feature width");
        }
        auto nbrs = neighbor_lists(n.edges, xv.rows);  // includes self, position 0
        std::vector<double> s(xv.rows), t(xv.rows);
        for (std::size_t r = 0; r < xv.rows; ++r) {
            double sv = 0.0, tv = 0.0;
            for (std::size_t c = 0; c < xv.cols; ++c) {
                sv += a_src.data[c] * xv.at(r, c);
                tv += a_dst.data[c] * xv.at(r, c);
            }
            s[r] = sv;
            t[r] = tv;
        }
        n.value = Matrix(xv.rows, xv.cols);
        n.saved.clear();
        for (std::size_t i = 0; i < xv.rows; ++i) {
            const auto& js = nbrs[i];
            double emax = -1e300;
            std::vector<double> e(js.size());
            for (std::size_t k = 0; k < js.size(); ++k) {
                double raw = s[i] + t[js[k]];
                e[k] = raw > 0.0 ? raw : kGatLeakySlope * raw;
                emax = std::max(emax, e[k]);
            }
            double z = 0.0;
            for (double& ek : e) {
                ek = std::exp(ek - emax);
                z += ek;
            }
            for (std::size_t k = 0; k < js.size(); ++k) {
                double alpha = e[k] / z;
                n.saved.push_back(alpha);
                for (std::size_t c = 0; c < xv.cols; ++c) n.value.at(i, c) += alpha * xv.at(js[k], c);
            }
        }
        return push(std::move(n));
    }

    int activation(int x, Act a) {
        Node n;
        n.kind = OpKind::Activation;
        n.inputs = {x};
        n.act = a;
        n.value = value(x);
        for (double& v : n.value.data) v = apply_act(a, v);
        return push(std::move(n));
    }

    // Per-row normalization: y = (x - mean) / sqrt(var + eps), no scale/shift.
    int layer_norm(int x) {
        const Matrix& xv = value(x);
        Node n;
        n.kind = OpKind::LayerNorm;
        n.inputs = {x};
        n.value = Matrix(xv.rows, xv.cols);
        n.saved.resize(xv.rows);
        for (std::size_t r = 0; r < xv.rows; ++r) {
            double mean = 0.0;
            for (std::size_t c = 0; c < xv.cols; ++c) mean += xv.at(r, c);
            mean /= static_cast<double>(xv.cols);
            double var = 0.0;
            for (std::size_t c = 0; c < xv.cols; ++c) {
                double d = xv.at(r, c) - mean;
                var += d * d;
            }
            var /= static_cast<double>(xv.cols);
            double inv = 1.0 / std::sqrt(var + kLayerNormEps);
            n.saved[r] = inv;
            for (std::size_t c = 0; c < xv.cols; ++c) n.value.at(r, c) = (xv.at(r, c) - mean) * inv;
        }
        return push(std::move(n));
    }

    // Element-wise multiply by a fixed (already inverse-scaled) dropout mask.
    int dropout_mask(int x, std::vector<double> mask) {
        const Matrix& xv = value(x);
        if (mask.size() != xv.size()) throw ValidationError("dropout: mask size mismatch");
        Node n;
        n.kind = OpKind::DropoutMask;
        n.inputs = {x};
        n.saved = std::move(mask);
        n.value = xv;
        for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] *= n.saved[i];
        return push(std::move(n));
    }

    // Identity forward, blocks the gradient.
    int detach(int x) {
        Node n;
        n.kind = OpKind::Detach;
        n.inputs = {x};
        n.value = value(x);
        return push(std::move(n));
    }

    // lambda = sigmoid(omega / temperature), a 1x1 node from a 1x1 parameter.
    int sigmoid_gate(int omega_node, double temperature) {
        if (temperature <= 0.0) throw ValidationError("gate: temperature must be > 0");
        const Matrix& ov = value(omega_node);
        if (ov.size() != 1) throw ValidationError("gate: omega must be a scalar");
        Node n;
        n.kind = OpKind::SigmoidGate;
        n.inputs = {omega_node};
        n.scalar_const = temperature;
        n.value = Matrix(1, 1);
        n.value.data[0] = stable_sigmoid(ov.data[0] / temperature);
        return push(std::move(n));
    }

    // y = lambda * a + (1 - lambda) * b, with lambda a 1x1 node.
    int convex_blend(int lambda, int a, int b) {
        const Matrix& lv = value(lambda);
        if (lv.size() != 1) throw ValidationError("blend: lambda must be a scalar node");
        const Matrix& av = value(a);
        const Matrix& bv = value(b);
        if (!av.same_shape(bv)) throw ValidationError("blend: shape mismatch");
        Node n;
        n.kind = OpKind::ConvexBlend;
        n.inputs = {lambda, a, b};
        n.value = Matrix(av.rows, av.cols);
        double l = lv.data[0];
        for (std::size_t i = 0; i < av.data.size(); ++i) n.value.data[i] = l * av.data[i] + (1.0 - l) * bv.data[i];
        return push(std::move(n));
    }

    // loss = -log softmax(logits[row])[label], max-subtracted.
    int softmax_cross_entropy(int logits, std::size_t row, int label) {
        const Matrix& lv = value(logits);
        if (row >= lv.rows) throw ValidationError("cross_entropy: row out of range");
        if (label < 0 || static_cast<std::size_t>(label) >= lv.cols) {
            throw ValidationError("cross_entropy: label out of range");
        }
        Node n;
        n.kind = OpKind::SoftmaxCrossEntropy;
        n.inputs = {logits};
        n.row = static_cast<int>(row);
        n.label = label;
        double mx = -1e300;
        for (std::size_t c = 0; c < lv.cols; ++c) mx = std::max(mx, lv.at(row, c));
        double z = 0.0;
        n.saved.resize(lv.cols);
        for (std::size_t c = 0; c < lv.cols; ++c) {
            n.saved[c] = std::exp(lv.at(row, c) - mx);
            z += n.saved[c];
        }
        for (double& p : n.saved) p /= z;  // softmax probabilities
        Node out = std::move(n);
        out.value = Matrix(1, 1);
        out.value.data[0] = -std::log(out.saved[static_cast<std::size_t>(label)]);
        return push(std::move(out));
    }

    // y = sum_i coeffs[i] * scalars[i], all 1x1 nodes.
    int scalar_sum(std::vector<int> scalars, std::vector<double> coeffs) {
        if (scalars.size() != coeffs.size() || scalars.empty()) {
            throw ValidationError("scalar_sum: need matching non-empty terms");
        }
        Node n;
        n.kind = OpKind::ScalarSum;
        n.inputs = std::move(scalars);
        n.saved = std::move(coeffs);
        n.value = Matrix(1, 1);
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
            const Matrix& sv = value(n.inputs[i]);
            if (sv.size() != 1) throw ValidationError("scalar_sum: inputs must be scalars");
            n.value.data[0] += n.saved[i] * sv.data[0];
        }
        return push(std::move(n));
    }

    // scalar = sum(x .* weights), a fixed-weight reduction.
    int reduce_dot(int x, Matrix weights) {
        const Matrix& xv = value(x);
        if (!xv.same_shape(weights)) throw ValidationError("reduce_dot: shape mismatch");
        Node n;
        n.kind = OpKind::ReduceDot;
        n.inputs = {x};
        n.saved.assign(weights.data.begin(), weights.data.end());
        n.value = Matrix(1, 1);
        for (std::size_t i = 0; i < xv.data.size(); ++i) n.value.data[0] += xv.data[i] * n.saved[i];
        return push(std::move(n));
    }

    const Matrix& value(int node) const { return nodes_[check_node(node)].value; }

    std::size_t num_nodes() const { return nodes_.size(); }

    std::size_t num_param_leaves() const {
        std::size_t n = 0;
        for (const auto& node : nodes_) {
            if (node.kind == OpKind::ParamLeaf) ++n;
        }
        return n;
    }

    // Parameter ids referenced anywhere on the tape; all belong to owner().
    std::vector<int> referenced_params() const {
        std::vector<int> out;
        for (const auto& node : nodes_) {
            if (node.param >= 0) out.push_back(node.param);
            if (node.param2 >= 0) out.push_back(node.param2);
        }
        return out;
    }

    bool consumed() const { return consumed_; }

    // Accumulates dLoss/dtheta into the store's gradient slots, walking the
    // record in fixed reverse order. The caller zeroes gradients between
    // optimizer steps, so parameters the loss never touches stay exactly 0.
    void backward(int loss_node) {
        std::size_t loss = check_node(loss_node);
        if (nodes_[loss].value.size() != 1) throw ValidationError("backward: loss must be a scalar node");
        if (consumed_) throw ValidationError("backward: tape already consumed");
        consumed_ = true;
        for (auto& n : nodes_) n.grad = Matrix(n.value.rows, n.value.cols);
        nodes_[loss].grad.data[0] = 1.0;
        for (std::size_t idx = loss + 1; idx-- > 0;) {
            backprop_node(idx);
        }
    }

    static bool is_supported(int kind) { return kind >= 0 && kind <= static_cast<int>(OpKind::ReduceDot); }

    // Guard used by every builder; exposed so the closed-set contract is
    // testable directly.
    static void require_supported(int kind) {
        if (!is_supported(kind)) {
            throw ValidationError("tape: unsupported operation kind " + std::to_string(kind));
        }
    }

private:
    struct Node {
        OpKind kind = OpKind::ConstLeaf;
        Matrix value;
        Matrix grad;
        std::vector<int> inputs;
        int param = -1;
        int param2 = -1;
        Act act = Act::Identity;
        double scalar_const = 0.0;
        int row = 0;
        int label = -1;
        std::vector<std::pair<std::size_t, std::size_t>> edges;
        std::vector<double> saved;
    };

    int push(Node n) {
        require_supported(static_cast<int>(n.kind));
        for (int in : n.inputs) check_node(in);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::size_t check_node(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
            throw ValidationError("tape: node id out of range");
        }
        return static_cast<std::size_t>(id);
    }

    void check_param(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= store_->size()) {
            throw ValidationError("tape: parameter id does not belong to the bound store");
        }
    }

    static void check_edges(const std::vector<std::pair<std::size_t, std::size_t>>& edges, std::size_t n) {
        for (const auto& e : edges) {
            if (e.first >= n || e.second >= n) throw ValidationError("aggregation: edge index out of range");
            if (e.first == e.second) throw ValidationError("aggregation: self-loop in edge list");
        }
    }

    static std::vector<std::vector<std::size_t>> neighbor_lists(
        const std::vector<std::pair<std::size_t, std::size_t>>& edges, std::size_t n) {
        std::vector<std::vector<std::size_t>> nbrs(n);
        for (std::size_t i = 0; i < n; ++i) nbrs[i].push_back(i);  // self first
        for (const auto& e : edges) {
            nbrs[e.first].push_back(e.second);
            nbrs[e.second].push_back(e.first);
        }
        return nbrs;
    }

    void backprop_node(std::size_t idx) {
        Node& n = nodes_[idx];
        const Matrix& g = n.grad;
        bool all_zero = true;
        for (double v : g.data) {
            if (v != 0.0) {
                all_zero = false;
                break;
            }
        }
        if (all_zero && n.kind != OpKind::ParamLeaf) return;
        switch (n.kind) {
            case OpKind::ConstLeaf:
                return;
            case OpKind::ParamLeaf: {
                Matrix& pg = (*store_)[n.param].grad;
                for (std::size_t i = 0; i < pg.data.size(); ++i) pg.data[i] += g.data[i];
                return;
            }
            case OpKind::Affine: {
                Node& x = nodes_[static_cast<std::size_t>(n.inputs[0])];
                const Matrix& w = (*store_)[n.param].value;
                Matrix& wg = (*store_)[n.param].grad;
                for (std::size_t r = 0; r < x.value.rows; ++r) {
                    for (std::size_t i = 0; i < w.rows; ++i) {
                        double gi = g.at(r, i);
                        if (gi == 0.0) continue;
                        for (std::size_t j = 0; j < w.cols; ++j) {
                            x.grad.at(r, j) += gi * w.at(i, j);
                            wg.at(i, j) += gi * x.value.at(r, j);
                        }
                    }
                }
                if (n.param2 >= 0) {
                    Matrix& bg = (*store_)[n.param2].grad;
                    for (std::size_t r = 0; r < g.rows; ++r) {
                        for (std::size_t i = 0; i < g.cols; ++i) bg.data[i] += g.at(r, i);
                    }
                }
                return;
            }
            case OpKind::Add: {
                for (int in : n.inputs) {
                    Node& x = nodes_[static_cast<std::size_t>(in)];
                    for (std::size_t i = 0; i < g.data.size(); ++i) x.grad.data[i] += g.data[i];
                }
                return;
            }
            case OpKind::NeighborMean: {
                Node& x = nodes_[static_cast<std::size_t>(n.inputs[0])];
                const std::vector<double>& deg = n.saved;
                for (const auto& e : n.edges) {
                    for (std::size_t c = 0; c < g.cols; ++c) {
                        x.grad.at(e.second, c) += g.at(e.first, c) / deg[e.first];
                        x.grad.at(e.first, c) += g.at(e.second, c) / deg[e.second];
                    }
                }
                return;
            }
            case OpKind::GcnAgg: {
                Node& x = nodes_[static_cast<std::size_t>(n.inputs[0])];
                const std::vector<double>& dhat = n.saved;
                for (std::size_t r = 0; r < g.rows; ++r) {
                    for (std::size_t c = 0; c < g.cols; ++c) x.grad.at(r, c) += g.at(r, c) / dhat[r];
                }
                for (const auto& e : n.edges) {
                    double coeff = 1.0 / std::sqrt(dhat[e.first] * dhat[e.second]);
                    for (std::size_t c = 0; c < g.cols; ++c) {
                        x.grad.at(e.second, c) += coeff * g.at(e.first, c);
                        x.grad.at(e.first, c) += coeff * g.at(e.second, c);
                    }
                }
                return;
            }
            case OpKind::GatAgg:
                backprop_gat(n, g);
                return;
            case OpKind::Activation: {
                Node& x = nodes_[static_cast<std::size_t>(n.inputs[0])];
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    x.grad.data[i] += g.data[i] * act_grad(n.act, x.value.data[i], n.value.data[i]);
                }
                return;
            }
            case OpKind::LayerNorm: {
                Node& x = nodes_[static_cast<std::size_t>(n.inputs[0])];
                const std::size_t cols = g.cols;
                for (std::size_t r = 0; r < g.rows; ++r) {
                    double gmean = 0.0, gymean = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) {
                        gmean += g.at(r, c);
                        gymean += g.at(r, c) * n.value.at(r, c);
                    }
                    gmean /= static_cast<double>(cols);
                    gymean /= static_cast<double>(cols);
                    double inv = n.saved[r];
                    for (std::size_t c = 0; c < cols; ++c) {
                        x.grad.at(r, c) += inv * (g.at(r, c) - gmean - n.value.at(r, c) * gymean);
                    }
                }
                return;
            }
            case OpKind::DropoutMask: {
                Node& x = nodes_[static_cast<std::size_t>(n.inputs[0])];
                for (std::size_t i = 0; i < g.data.size(); ++i) x.grad.data[i] += g.data[i] * n.saved[i];
                return;
            }
            case OpKind::Detach:
                return;
            case OpKind::SigmoidGate: {
                Node& omega = nodes_[static_cast<std::size_t>(n.inputs[0])];
                double lambda = n.value.data[0];
                omega.grad.data[0] += g.data[0] * lambda * (1.0 - lambda) / n.scalar_const;
                return;
            }
            case OpKind::ConvexBlend: {
                Node& lam = nodes_[static_cast<std::size_t>(n.inputs[0])];
                Node& a = nodes_[static_cast<std::size_t>(n.inputs[1])];
                Node& b = nodes_[static_cast<std::size_t>(n.inputs[2])];
                double l = lam.value.data[0];
                double dl = 0.0;
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    a.grad.data[i] += l * g.data[i];
                    b.grad.data[i] += (1.0 - l) * g.data[i];
                    dl += g.data[i] * (a.value.data[i] - b.value.data[i]);
                }
                lam.grad.data[0] += dl;
                return;
            }
            case OpKind::SoftmaxCrossEntropy: {
                Node& logits = nodes_[static_cast<std::size_t>(n.inputs[0])];
                double gs = g.data[0];
                for (std::size_t c = 0; c < logits.value.cols; ++c) {
                    double delta = (static_cast<int>(c) == n.label) ? 1.0 : 0.0;
                    logits.grad.at(static_cast<std::size_t>(n.row), c) += gs * (n.saved[c] - delta);
                }
                return;
            }
            case OpKind::ScalarSum: {
                for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                    nodes_[static_cast<std::size_t>(n.inputs[i])].grad.data[0] += g.data[0] * n.saved[i];
                }
                return;
            }
            case OpKind::ReduceDot: {
                Node& x = nodes_[static_cast<std::size_t>(n.inputs[0])];
                for (std::size_t i = 0; i < x.grad.data.size(); ++i) x.grad.data[i] += g.data[0] * n.saved[i];
                return;
            }
        }
    }

    void backprop_gat(Node& n, const Matrix& g) {
        Node& x = nodes_[static_cast<std::size_t>(n.inputs[0])];
        const Matrix& xv = x.value;
        const Matrix& a_src = (*store_)[n.param].value;
        const Matrix& a_dst = (*store_)[n.param2].value;
        Matrix& a_src_g = (*store_)[n.param].grad;
        Matrix& a_dst_g = (*store_)[n.param2].grad;
        auto nbrs = neighbor_lists(n.edges, xv.rows);
        std::vector<double> s(xv.rows), t(xv.rows);
        for (std::size_t r = 0; r < xv.rows; ++r) {
            double sv = 0.0, tv = 0.0;
            for (std::size_t c = 0; c < xv.cols; ++c) {
                sv += a_src.data[c] * xv.at(r, c);
                tv += a_dst.data[c] * xv.at(r, c);
            }
            s[r] = sv;
            t[r] = tv;
        }
        std::vector<double> ds(xv.rows, 0.0), dt(xv.rows, 0.0);
        std::size_t alpha_off = 0;
        for (std::size_t i = 0; i < xv.rows; ++i) {
            const auto& js = nbrs[i];
            // dL/dalpha_ij = g_i . x_j, then through the softmax and leakyrelu
            std::vector<double> dalpha(js.size());
            double inner = 0.0;  // sum_k alpha_ik * dL/dalpha_ik
            for (std::size_t k = 0; k < js.size(); ++k) {
                double d = 0.0;
                for (std::size_t c = 0; c < xv.cols; ++c) d += g.at(i, c) * xv.at(js[k], c);
                dalpha[k] = d;
                inner += n.saved[alpha_off + k] * d;
            }
            for (std::size_t k = 0; k < js.size(); ++k) {
                double alpha = n.saved[alpha_off + k];
                // direct path y_i = sum alpha_ij x_j
                for (std::size_t c = 0; c < xv.cols; ++c) x.grad.at(js[k], c) += alpha * g.at(i, c);
                double de = alpha * (dalpha[k] - inner);
                double raw = s[i] + t[js[k]];
                double dr = de * (raw > 0.0 ? 1.0 : kGatLeakySlope);
                ds[i] += dr;
                dt[js[k]] += dr;
            }
            alpha_off += js.size();
        }
        for (std::size_t r = 0; r < xv.rows; ++r) {
            for (std::size_t c = 0; c < xv.cols; ++c) {
                a_src_g.data[c] += ds[r] * xv.at(r, c);
                a_dst_g.data[c] += dt[r] * xv.at(r, c);
                x.grad.at(r, c) += ds[r] * a_src.data[c] + dt[r] * a_dst.data[c];
            }
        }
    }

    ParamStore* store_;
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

// Max relative error between analytic gradients and central finite
// differences. `f(with_grads)` must rebuild its tape from the current
// parameter values, return the scalar loss, and populate gradients (after a
// zero) when with_grads is true. Dropout must be disabled so f is
// deterministic.
inline double grad_check_fd(const std::function<double(bool)>& f, ParamStore& params, double eps) {
    params.zero_grads();
    double base = f(true);
    if (!std::isfinite(base)) throw RuntimeFailure("grad_check_fd: non-finite loss");
    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params.all()) analytic.push_back(p.grad);

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Matrix& v = params[static_cast<int>(pi)].value;
        for (std::size_t i = 0; i < v.data.size(); ++i) {
            double orig = v.data[i];
            v.data[i] = orig + eps;
            double up = f(false);
            v.data[i] = orig - eps;
            double down = f(false);
            v.data[i] = orig;
            if (!std::isfinite(up) || !std::isfinite(down)) throw RuntimeFailure("grad_check_fd: non-finite loss");
            double numeric = (up - down) / (2.0 * eps);
            double a = analytic[pi].data[i];
            double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace gladder
