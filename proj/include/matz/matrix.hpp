#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace matz {

/// Dense row-major matrix of 64-bit floats. The one value type every other
/// module builds on; vectors are 1xN or Nx1 matrices.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    Matrix(std::initializer_list<std::initializer_list<double>> init) {
        rows = init.size();
        cols = rows ? init.begin()->size() : 0;
        data.reserve(rows * cols);
        for (const auto& row : init) {
            if (row.size() != cols) {
                throw std::invalid_argument("Matrix: ragged initializer");
            }
            data.insert(data.end(), row.begin(), row.end());
        }
    }

    static Matrix row_vector(std::vector<double> v) {
        Matrix m;
        m.rows = 1;
        m.cols = v.size();
        m.data = std::move(v);
        return m;
    }

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row_ptr(std::size_t i) { return data.data() + i * cols; }
    const double* row_ptr(std::size_t i) const { return data.data() + i * cols; }

    std::size_t size() const { return data.size(); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    /// Index of the first non-finite entry's row, or rows if all finite.
    std::size_t first_non_finite_row() const {
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (!std::isfinite(data[i])) return cols ? i / cols : 0;
        }
        return rows;
    }

    bool operator==(const Matrix& o) const {
        return rows == o.rows && cols == o.cols && data == o.data;
    }
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

// a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols == b.rows,
            "matmul: inner dimensions differ (" + shape_str(a) + " vs " + shape_str(b) + ")");
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.row_ptr(k);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

// a * b^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    require(a.cols == b.cols,
            "matmul_nt: column counts differ (" + shape_str(a) + " vs " + shape_str(b) + ")");
    Matrix out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.row_ptr(j);
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            out.at(i, j) = s;
        }
    }
    return out;
}

// a^T * b
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    require(a.rows == b.rows,
            "matmul_tn: row counts differ (" + shape_str(a) + " vs " + shape_str(b) + ")");
    Matrix out(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* arow = a.row_ptr(k);
        const double* brow = b.row_ptr(k);
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* orow = out.row_ptr(i);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& m) {
    Matrix out(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) out.at(j, i) = m.at(i, j);
    return out;
}

inline double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline double trace(const Matrix& m) {
    require(m.rows == m.cols, "trace: matrix not square");
    double t = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) t += m.at(i, i);
    return t;
}

}  // namespace matz
