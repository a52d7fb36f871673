#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "macc/errors.hpp"

namespace macc {

// All parameter/gradient math runs on 64-bit floats. Vec64 is a plain
// std::vector<double>; Mat64 is a dense row-major matrix. Finiteness is
// enforced at module boundaries (loss/grad/optimizer outputs), not on every
// arithmetic helper.
using Vec64 = std::vector<double>;

struct Mat64 {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec64 data;  // row-major, rows*cols

    Mat64() = default;
    Mat64(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

inline bool all_finite(const Vec64& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

inline bool all_finite(const Mat64& m) { return all_finite(m.data); }

inline void require_same_length(const Vec64& a, const Vec64& b, const char* what) {
    if (a.size() != b.size()) {
        throw DimensionError(std::string(what) + ": length mismatch " + std::to_string(a.size()) +
                             " vs " + std::to_string(b.size()));
    }
}

// y = M x
inline Vec64 matvec(const Mat64& m, const Vec64& x) {
    if (x.size() != m.cols) {
        throw DimensionError("matvec: " + std::to_string(m.cols) + "-col matrix times length-" +
                             std::to_string(x.size()) + " vector");
    }
    Vec64 y(m.rows, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        double acc = 0.0;
        const double* row = m.data.data() + r * m.cols;
        for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
    return y;
}

// y = M^T x
inline Vec64 matvec_transposed(const Mat64& m, const Vec64& x) {
    if (x.size() != m.rows) {
        throw DimensionError("matvec_transposed: " + std::to_string(m.rows) + "-row matrix times length-" +
                             std::to_string(x.size()) + " vector");
    }
    Vec64 y(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* row = m.data.data() + r * m.cols;
        for (std::size_t c = 0; c < m.cols; ++c) y[c] += row[c] * x[r];
    }
    return y;
}

inline void axpy(double a, const Vec64& x, Vec64& y) {
    require_same_length(x, y, "axpy");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline double dot(const Vec64& a, const Vec64& b) {
    require_same_length(a, b, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double norm2(const Vec64& v) { return std::sqrt(dot(v, v)); }

}  // namespace macc
