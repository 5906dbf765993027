#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "recformer/errors.hpp"

namespace recformer {

// Dense row-major matrix of doubles. The plain value type shared by the
// data, graph and clustering code; the autodiff module has its own Tensor.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0)
        : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}
    Matrix(int r, int c, std::vector<double> data) : rows(r), cols(c), v(std::move(data)) {
        if (v.size() != static_cast<std::size_t>(r) * c)
            throw ShapeError("Matrix: data size " + std::to_string(v.size()) +
                             " does not match " + std::to_string(r) + "x" + std::to_string(c));
    }

    double& at(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
    double at(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }

    const double* row_ptr(int i) const { return v.data() + static_cast<std::size_t>(i) * cols; }
    double* row_ptr(int i) { return v.data() + static_cast<std::size_t>(i) * cols; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

inline double squared_distance(const double* a, const double* b, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

}  // namespace recformer
