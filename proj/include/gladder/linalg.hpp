#pragma once

// Small dense row-major matrices. Double precision everywhere the side
// network computes; float32 only at the backbone readout boundary, which is
// also the precision of the on-disk embedding cache.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gladder/errors.hpp"
#include "gladder/rng.hpp"

namespace gladder {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major, rows*cols

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    std::size_t size() const { return data.size(); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

// Row-major float32 matrix for backbone embeddings and the cache file.
struct MatrixF {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    MatrixF() = default;
    MatrixF(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}

    float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    float* row(std::size_t r) { return data.data() + r * cols; }
    const float* row(std::size_t r) const { return data.data() + r * cols; }
};

inline Matrix widen(const MatrixF& m) {
    Matrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = static_cast<double>(m.data[i]);
    return out;
}

// y[r] = W * x[r] + b for every row r. W is out_dim x in_dim, b is 1 x out_dim
// (empty bias allowed).
inline Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    if (x.cols != w.cols) {
        throw ValidationError("affine: width mismatch, input has " + std::to_string(x.cols) +
                              " columns but weight expects " + std::to_string(w.cols));
    }
    Matrix y(x.rows, w.rows);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double* xr = x.row(r);
        double* yr = y.row(r);
        for (std::size_t i = 0; i < w.rows; ++i) {
            const double* wi = w.row(i);
            double acc = b.size() ? b.data[i] : 0.0;
            for (std::size_t j = 0; j < w.cols; ++j) acc += wi[j] * xr[j];
            yr[i] = acc;
        }
    }
    return y;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ValidationError("add: shape mismatch");
    Matrix out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

inline void axpy(double alpha, const Matrix& x, Matrix& y) {
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += alpha * x.data[i];
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

// Glorot-style uniform init, one substream per tensor.
inline void init_uniform(Matrix& m, Rng& rng, double bound) {
    for (double& v : m.data) v = rng.next_range(-bound, bound);
}

inline double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace gladder
