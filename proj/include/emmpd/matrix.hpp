#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "emmpd/errors.hpp"
#include "emmpd/rng.hpp"

namespace emmpd {

// Dense row-major double matrix. The generic carrier for patch features,
// attention weights and all trainable parameters.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}
    Matrix(int r, int c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
        if (data.size() != static_cast<size_t>(r) * c)
            throw ShapeError("Matrix init: payload size " + std::to_string(data.size()) +
                             " does not match " + shape_str());
    }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
    double* row_ptr(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const double* row_ptr(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return data.size(); }
    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    void fill_uniform(Rng& rng, double lo, double hi) {
        for (auto& v : data) v = rng.uniform(lo, hi);
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }
};

inline void require_finite(const Matrix& m, const std::string& where) {
    if (!m.all_finite())
        throw NumericError(where + ": non-finite entry in " + m.shape_str() + " matrix");
}

}  // namespace emmpd
