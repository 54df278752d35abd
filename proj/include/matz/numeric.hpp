#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "matz/matrix.hpp"

namespace matz {

/// Row-wise softmax, stabilized by per-row max subtraction.
/// Rejects non-finite input, naming the offending row.
inline Matrix softmax_rows(const Matrix& m) {
    if (!m.all_finite()) {
        throw std::invalid_argument("softmax_rows: non-finite entry in row " +
                                    std::to_string(m.first_non_finite_row()));
    }
    Matrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* x = m.row_ptr(i);
        double* y = out.row_ptr(i);
        double mx = x[0];
        for (std::size_t j = 1; j < m.cols; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (std::size_t j = 0; j < m.cols; ++j) y[j] /= sum;
    }
    return out;
}

struct NormalizeResult {
    Matrix value;
    std::vector<std::size_t> zero_rows;  // rows left as zeros
};

/// Scale every row to unit Euclidean norm. All-zero rows are returned
/// unchanged and reported in zero_rows instead of raising: degenerate
/// embeddings should surface in evaluation, not crash a run.
inline NormalizeResult l2_normalize_rows(const Matrix& m) {
    NormalizeResult res;
    res.value = m;
    for (std::size_t i = 0; i < m.rows; ++i) {
        double* x = res.value.row_ptr(i);
        double sq = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) sq += x[j] * x[j];
        if (sq == 0.0) {
            res.zero_rows.push_back(i);
            continue;
        }
        const double inv = 1.0 / std::sqrt(sq);
        for (std::size_t j = 0; j < m.cols; ++j) x[j] *= inv;
    }
    return res;
}

/// out[i][j] = dot(q_i, d_j). With unit-norm inputs this is the cosine
/// similarity matrix used for in-batch logits.
inline Matrix similarity_matrix(const Matrix& q, const Matrix& d) {
    require(q.cols == d.cols, "similarity_matrix: dimension mismatch (" + shape_str(q) +
                                  " vs " + shape_str(d) + ")");
    return matmul_nt(q, d);
}

/// Eigenvalues of a symmetric matrix, sorted descending.
struct EigenSpectrum {
    std::vector<double> values;
};

namespace detail {

inline double off_diagonal_frobenius(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j)
            if (i != j) s += a.at(i, j) * a.at(i, j);
    return std::sqrt(s);
}

}  // namespace detail

/// Symmetric eigenvalues via cyclic Jacobi rotations. Dependency-free and
/// exact enough for covariance analysis at d <= 1024.
///
/// Convergence: off-diagonal Frobenius norm below 1e-12 relative to the
/// matrix norm, capped at 100 sweeps.
inline EigenSpectrum sym_eigenvalues(const Matrix& cov, double symmetry_tol = 1e-9) {
    require(cov.rows == cov.cols, "sym_eigenvalues: matrix not square (" + shape_str(cov) + ")");
    require(cov.all_finite(), "sym_eigenvalues: non-finite entry");
    const std::size_t n = cov.rows;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (std::abs(cov.at(i, j) - cov.at(j, i)) > symmetry_tol) {
                throw std::invalid_argument(
                    "sym_eigenvalues: asymmetric beyond tolerance at (" + std::to_string(i) +
                    "," + std::to_string(j) + ")");
            }
        }
    }

    Matrix a = cov;
    // Symmetrize exactly so rotations keep the matrix symmetric bit-for-bit.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = 0.5 * (a.at(i, j) + a.at(j, i));
            a.at(i, j) = v;
            a.at(j, i) = v;
        }

    double norm = 0.0;
    for (double v : a.data) norm += v * v;
    norm = std::sqrt(norm);
    const double stop = 1e-12 * (norm > 0.0 ? norm : 1.0);

    for (int sweep = 0; sweep < 100; ++sweep) {
        if (detail::off_diagonal_frobenius(a) <= stop) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (apq == 0.0) continue;
                const double app = a.at(p, p);
                const double aqq = a.at(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0)
                                     ? 1.0 / (theta + std::sqrt(1.0 + theta * theta))
                                     : 1.0 / (theta - std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;

                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a.at(k, p);
                    const double akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a.at(p, k);
                    const double aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
            }
        }
    }

    EigenSpectrum spec;
    spec.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) spec.values[i] = a.at(i, i);
    std::sort(spec.values.begin(), spec.values.end(), std::greater<double>());
    return spec;
}

}  // namespace matz
