#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "matz/matrix.hpp"
#include "matz/numeric.hpp"

namespace matz::ad {

/// Reverse-mode tape over Matrix values. Nodes are appended in forward
/// order, so parents always precede children and backward is a single
/// reverse scan over the reachable subgraph. Single-threaded by design.
class Tape {
public:
    struct Node {
        Matrix value;
        Matrix grad;                              // allocated lazily
        std::vector<std::size_t> parents;
        std::function<void(Tape&, std::size_t)> backward;  // empty for leaves
        bool needs_grad = true;
    };

    std::size_t push(Matrix value, std::vector<std::size_t> parents = {},
                     std::function<void(Tape&, std::size_t)> backward = {}) {
        bool needs = parents.empty();  // leaves default to trainable
        for (std::size_t p : parents) needs = needs || nodes_[p].needs_grad;
        nodes_.push_back(
            Node{std::move(value), Matrix(), std::move(parents), std::move(backward), needs});
        return nodes_.size() - 1;
    }

    /// Leaf that no gradient will ever be requested for (inputs, frozen
    /// weights). Subgraphs built purely from such leaves skip backward.
    std::size_t push_input(Matrix value) {
        nodes_.push_back(Node{std::move(value), Matrix(), {}, {}, false});
        return nodes_.size() - 1;
    }

    bool needs(std::size_t id) const { return nodes_[id].needs_grad; }

    /// Note: the reference is invalidated by the next push; copy what you
    /// need before building further ops.
    const Matrix& value(std::size_t id) const { return nodes_[id].value; }

    Matrix& grad(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.data.empty()) n.grad = Matrix(n.value.rows, n.value.cols);
        return n.grad;
    }

    bool has_grad(std::size_t id) const { return !nodes_[id].grad.data.empty(); }

    std::size_t size() const { return nodes_.size(); }

    /// Seed d(loss)/d(loss) = 1 and propagate to every reachable ancestor.
    /// The loss node must be 1x1.
    void backward(std::size_t loss_id) {
        require(value(loss_id).rows == 1 && value(loss_id).cols == 1,
                "backward: loss node must be a 1x1 scalar");
        std::vector<char> reachable(nodes_.size(), 0);
        reachable[loss_id] = 1;
        for (std::size_t i = loss_id + 1; i-- > 0;) {
            if (!reachable[i]) continue;
            for (std::size_t p : nodes_[i].parents) reachable[p] = 1;
        }
        grad(loss_id).at(0, 0) = 1.0;
        for (std::size_t i = loss_id + 1; i-- > 0;) {
            if (!reachable[i] || !nodes_[i].needs_grad || !nodes_[i].backward || !has_grad(i))
                continue;
            nodes_[i].backward(*this, i);
        }
    }

private:
    std::vector<Node> nodes_;
};

/// Handle to a tape node.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Matrix& val() const { return tape->value(id); }
    double scalar() const { return tape->value(id).at(0, 0); }
};

inline Var leaf(Tape& t, Matrix m) { return Var{&t, t.push(std::move(m))}; }

/// Constant input: participates in the forward pass only.
inline Var input(Tape& t, Matrix m) { return Var{&t, t.push_input(std::move(m))}; }

namespace detail {

inline void accumulate(Matrix& dst, const Matrix& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace detail

// ---- primitive ops -------------------------------------------------------

inline Var matmul(Var a, Var b) {
    Tape& t = *a.tape;
    const std::size_t ia = a.id, ib = b.id;
    Matrix out = matz::matmul(t.value(ia), t.value(ib));
    const std::size_t id = t.push(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        // dA = g * B^T ; dB = A^T * g
        if (t.needs(ia)) detail::accumulate(t.grad(ia), matz::matmul_nt(g, t.value(ib)));
        if (t.needs(ib)) detail::accumulate(t.grad(ib), matz::matmul_tn(t.value(ia), g));
    });
    return Var{&t, id};
}

// a * b^T
inline Var matmul_nt(Var a, Var b) {
    Tape& t = *a.tape;
    const std::size_t ia = a.id, ib = b.id;
    Matrix out = matz::matmul_nt(t.value(ia), t.value(ib));
    const std::size_t id = t.push(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        // out = A B^T : dA = g * B ; dB = g^T * A
        if (t.needs(ia)) detail::accumulate(t.grad(ia), matz::matmul(g, t.value(ib)));
        if (t.needs(ib)) detail::accumulate(t.grad(ib), matz::matmul_tn(g, t.value(ia)));
    });
    return Var{&t, id};
}

inline Var add(Var a, Var b) {
    Tape& t = *a.tape;
    require(t.value(a.id).same_shape(t.value(b.id)), "ad::add: shape mismatch");
    Matrix out = t.value(a.id);
    detail::accumulate(out, t.value(b.id));
    const std::size_t ia = a.id, ib = b.id;
    const std::size_t id = t.push(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        if (t.needs(ia)) detail::accumulate(t.grad(ia), t.grad(self));
        if (t.needs(ib)) detail::accumulate(t.grad(ib), t.grad(self));
    });
    return Var{&t, id};
}

inline Var sub(Var a, Var b) {
    Tape& t = *a.tape;
    require(t.value(a.id).same_shape(t.value(b.id)), "ad::sub: shape mismatch");
    Matrix out = t.value(a.id);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= t.value(b.id).data[i];
    const std::size_t ia = a.id, ib = b.id;
    const std::size_t id = t.push(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        if (t.needs(ia)) detail::accumulate(t.grad(ia), g);
        if (t.needs(ib)) {
            Matrix& gb = t.grad(ib);
            for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= g.data[i];
        }
    });
    return Var{&t, id};
}

inline Var hadamard(Var a, Var b) {
    Tape& t = *a.tape;
    require(t.value(a.id).same_shape(t.value(b.id)), "ad::hadamard: shape mismatch");
    Matrix out = t.value(a.id);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= t.value(b.id).data[i];
    const std::size_t ia = a.id, ib = b.id;
    const std::size_t id = t.push(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& va = t.value(ia);
        const Matrix& vb = t.value(ib);
        if (t.needs(ia)) {
            Matrix& ga = t.grad(ia);
            for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * vb.data[i];
        }
        if (t.needs(ib)) {
            Matrix& gb = t.grad(ib);
            for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * va.data[i];
        }
    });
    return Var{&t, id};
}

inline Var scale(Var a, double c) {
    Tape& t = *a.tape;
    Matrix out = t.value(a.id);
    for (double& v : out.data) v *= c;
    const std::size_t ia = a.id;
    const std::size_t id = t.push(std::move(out), {ia}, [ia, c](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Matrix& ga = t.grad(ia);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += c * g.data[i];
    });
    return Var{&t, id};
}

inline Var add_const(Var a, double c) {
    Tape& t = *a.tape;
    Matrix out = t.value(a.id);
    for (double& v : out.data) v += c;
    const std::size_t ia = a.id;
    const std::size_t id = t.push(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        detail::accumulate(t.grad(ia), t.grad(self));
    });
    return Var{&t, id};
}

/// Broadcast-add a 1xC row (e.g. a bias) to every row of a.
inline Var add_row(Var a, Var row) {
    Tape& t = *a.tape;
    const Matrix& r = t.value(row.id);
    require(r.rows == 1 && r.cols == t.value(a.id).cols, "ad::add_row: bad row shape");
    Matrix out = t.value(a.id);
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) += r.at(0, j);
    const std::size_t ia = a.id, ir = row.id;
    const std::size_t id = t.push(std::move(out), {ia, ir}, [ia, ir](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        if (t.needs(ia)) detail::accumulate(t.grad(ia), g);
        if (t.needs(ir)) {
            Matrix& gr = t.grad(ir);
            for (std::size_t i = 0; i < g.rows; ++i)
                for (std::size_t j = 0; j < g.cols; ++j) gr.at(0, j) += g.at(i, j);
        }
    });
    return Var{&t, id};
}

/// GELU (tanh approximation), applied elementwise.
inline Var gelu(Var a) {
    Tape& t = *a.tape;
    static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    static constexpr double kA = 0.044715;
    Matrix out = t.value(a.id);
    for (double& v : out.data) {
        const double u = kC * (v + kA * v * v * v);
        v = 0.5 * v * (1.0 + std::tanh(u));
    }
    const std::size_t ia = a.id;
    const std::size_t id = t.push(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& x = t.value(ia);
        Matrix& gx = t.grad(ia);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            const double v = x.data[i];
            const double u = kC * (v + kA * v * v * v);
            const double th = std::tanh(u);
            const double sech2 = 1.0 - th * th;
            const double du = kC * (1.0 + 3.0 * kA * v * v);
            gx.data[i] += g.data[i] * (0.5 * (1.0 + th) + 0.5 * v * sech2 * du);
        }
    });
    return Var{&t, id};
}

inline Var relu(Var a) {
    Tape& t = *a.tape;
    Matrix out = t.value(a.id);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    const std::size_t ia = a.id;
    const std::size_t id = t.push(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& x = t.value(ia);
        Matrix& gx = t.grad(ia);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            if (x.data[i] > 0.0) gx.data[i] += g.data[i];
    });
    return Var{&t, id};
}

inline Var square(Var a) {
    Tape& t = *a.tape;
    Matrix out = t.value(a.id);
    for (double& v : out.data) v = v * v;
    const std::size_t ia = a.id;
    const std::size_t id = t.push(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& x = t.value(ia);
        Matrix& gx = t.grad(ia);
        for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += 2.0 * x.data[i] * g.data[i];
    });
    return Var{&t, id};
}

inline Var abs_elems(Var a) {
    Tape& t = *a.tape;
    Matrix out = t.value(a.id);
    for (double& v : out.data) v = std::abs(v);
    const std::size_t ia = a.id;
    const std::size_t id = t.push(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& x = t.value(ia);
        Matrix& gx = t.grad(ia);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            const double s = x.data[i] > 0.0 ? 1.0 : (x.data[i] < 0.0 ? -1.0 : 0.0);
            gx.data[i] += s * g.data[i];
        }
    });
    return Var{&t, id};
}

/// Row-wise stabilized softmax.
inline Var row_softmax(Var a) {
    Tape& t = *a.tape;
    Matrix out = softmax_rows(t.value(a.id));
    const std::size_t ia = a.id;
    const std::size_t id = t.push(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& y = t.value(self);
        Matrix& gx = t.grad(ia);
        for (std::size_t i = 0; i < y.rows; ++i) {
            double dot_gy = 0.0;
            for (std::size_t j = 0; j < y.cols; ++j) dot_gy += g.at(i, j) * y.at(i, j);
            for (std::size_t j = 0; j < y.cols; ++j)
                gx.at(i, j) += y.at(i, j) * (g.at(i, j) - dot_gy);
        }
    });
    return Var{&t, id};
}

/// Row-wise log-sum-exp, returns Nx1.
inline Var row_logsumexp(Var a) {
    Tape& t = *a.tape;
    const Matrix& x = t.value(a.id);
    Matrix out(x.rows, 1);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* row = x.row_ptr(i);
        double mx = row[0];
        for (std::size_t j = 1; j < x.cols; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) s += std::exp(row[j] - mx);
        out.at(i, 0) = mx + std::log(s);
    }
    const std::size_t ia = a.id;
    const std::size_t id = t.push(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& x = t.value(ia);
        const Matrix& lse = t.value(self);
        Matrix& gx = t.grad(ia);
        for (std::size_t i = 0; i < x.rows; ++i)
            for (std::size_t j = 0; j < x.cols; ++j)
                gx.at(i, j) += g.at(i, 0) * std::exp(x.at(i, j) - lse.at(i, 0));
    });
    return Var{&t, id};
}

/// Diagonal of a square matrix as Nx1.
inline Var take_diag(Var a) {
    Tape& t = *a.tape;
    const Matrix& x = t.value(a.id);
    require(x.rows == x.cols, "ad::take_diag: matrix not square");
    Matrix out(x.rows, 1);
    for (std::size_t i = 0; i < x.rows; ++i) out.at(i, 0) = x.at(i, i);
    const std::size_t ia = a.id;
    const std::size_t id = t.push(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Matrix& gx = t.grad(ia);
        for (std::size_t i = 0; i < g.rows; ++i) gx.at(i, i) += g.at(i, 0);
    });
    return Var{&t, id};
}

/// Mean of all entries, returns 1x1.
inline Var mean_all(Var a) {
    Tape& t = *a.tape;
    const Matrix& x = t.value(a.id);
    require(!x.data.empty(), "ad::mean_all: empty matrix");
    double s = 0.0;
    for (double v : x.data) s += v;
    Matrix out(1, 1);
    out.at(0, 0) = s / static_cast<double>(x.data.size());
    const std::size_t ia = a.id;
    const std::size_t id = t.push(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        const double g = t.grad(self).at(0, 0);
        Matrix& gx = t.grad(ia);
        const double inv = 1.0 / static_cast<double>(gx.data.size());
        for (double& v : gx.data) v += g * inv;
    });
    return Var{&t, id};
}

inline Var sum_all(Var a) {
    Tape& t = *a.tape;
    double s = 0.0;
    for (double v : t.value(a.id).data) s += v;
    Matrix out(1, 1);
    out.at(0, 0) = s;
    const std::size_t ia = a.id;
    const std::size_t id = t.push(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        const double g = t.grad(self).at(0, 0);
        Matrix& gx = t.grad(ia);
        for (double& v : gx.data) v += g;
    });
    return Var{&t, id};
}

/// Row-wise dot product of equally shaped matrices, returns Nx1.
inline Var row_dot(Var a, Var b) {
    Tape& t = *a.tape;
    require(t.value(a.id).same_shape(t.value(b.id)), "ad::row_dot: shape mismatch");
    const Matrix& x = t.value(a.id);
    const Matrix& y = t.value(b.id);
    Matrix out(x.rows, 1);
    for (std::size_t i = 0; i < x.rows; ++i)
        out.at(i, 0) = dot(x.row_ptr(i), y.row_ptr(i), x.cols);
    const std::size_t ia = a.id, ib = b.id;
    const std::size_t id = t.push(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& x = t.value(ia);
        const Matrix& y = t.value(ib);
        if (t.needs(ia)) {
            Matrix& gx = t.grad(ia);
            for (std::size_t i = 0; i < x.rows; ++i)
                for (std::size_t j = 0; j < x.cols; ++j) gx.at(i, j) += g.at(i, 0) * y.at(i, j);
        }
        if (t.needs(ib)) {
            Matrix& gy = t.grad(ib);
            for (std::size_t i = 0; i < x.rows; ++i)
                for (std::size_t j = 0; j < x.cols; ++j) gy.at(i, j) += g.at(i, 0) * x.at(i, j);
        }
    });
    return Var{&t, id};
}

/// Elementwise x / (y + eps_free). Caller guarantees y bounded away from 0.
inline Var div_elems(Var a, Var b) {
    Tape& t = *a.tape;
    require(t.value(a.id).same_shape(t.value(b.id)), "ad::div_elems: shape mismatch");
    Matrix out = t.value(a.id);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] /= t.value(b.id).data[i];
    const std::size_t ia = a.id, ib = b.id;
    const std::size_t id = t.push(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& x = t.value(ia);
        const Matrix& y = t.value(ib);
        if (t.needs(ia)) {
            Matrix& gx = t.grad(ia);
            for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i] / y.data[i];
        }
        if (t.needs(ib)) {
            Matrix& gy = t.grad(ib);
            for (std::size_t i = 0; i < g.data.size(); ++i)
                gy.data[i] -= g.data[i] * x.data[i] / (y.data[i] * y.data[i]);
        }
    });
    return Var{&t, id};
}

inline Var sqrt_elems(Var a) {
    Tape& t = *a.tape;
    Matrix out = t.value(a.id);
    for (double& v : out.data) v = std::sqrt(v);
    const std::size_t ia = a.id;
    const std::size_t id = t.push(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& y = t.value(self);
        Matrix& gx = t.grad(ia);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            gx.data[i] += g.data[i] * 0.5 / y.data[i];
    });
    return Var{&t, id};
}

/// L2-normalize each row. Rows must be nonzero; training paths guarantee it.
inline Var normalize_rows(Var a) {
    Tape& t = *a.tape;
    const Matrix& x = t.value(a.id);
    Matrix out(x.rows, x.cols);
    std::vector<double> norms(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double sq = dot(x.row_ptr(i), x.row_ptr(i), x.cols);
        require(sq > 0.0, "ad::normalize_rows: zero row " + std::to_string(i));
        norms[i] = std::sqrt(sq);
        for (std::size_t j = 0; j < x.cols; ++j) out.at(i, j) = x.at(i, j) / norms[i];
    }
    const std::size_t ia = a.id;
    const std::size_t id = t.push(
        std::move(out), {ia}, [ia, norms = std::move(norms)](Tape& t, std::size_t self) {
            const Matrix& g = t.grad(self);
            const Matrix& y = t.value(self);  // already normalized
            Matrix& gx = t.grad(ia);
            for (std::size_t i = 0; i < y.rows; ++i) {
                double gy = 0.0;
                for (std::size_t j = 0; j < y.cols; ++j) gy += g.at(i, j) * y.at(i, j);
                const double inv = 1.0 / norms[i];
                for (std::size_t j = 0; j < y.cols; ++j)
                    gx.at(i, j) += inv * (g.at(i, j) - gy * y.at(i, j));
            }
        });
    return Var{&t, id};
}

/// RMSNorm with a learnable 1xC gain: y_ij = g_j * x_ij / rms(x_i).
inline Var rmsnorm(Var a, Var gain, double eps = 1e-6) {
    Tape& t = *a.tape;
    const Matrix& x = t.value(a.id);
    const Matrix& g = t.value(gain.id);
    require(g.rows == 1 && g.cols == x.cols, "ad::rmsnorm: bad gain shape");
    Matrix out(x.rows, x.cols);
    std::vector<double> rms(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double ms = dot(x.row_ptr(i), x.row_ptr(i), x.cols) / static_cast<double>(x.cols);
        rms[i] = std::sqrt(ms + eps);
        for (std::size_t j = 0; j < x.cols; ++j) out.at(i, j) = g.at(0, j) * x.at(i, j) / rms[i];
    }
    const std::size_t ia = a.id, ig = gain.id;
    const std::size_t id = t.push(
        std::move(out), {ia, ig}, [ia, ig, rms = std::move(rms)](Tape& t, std::size_t self) {
            const Matrix& go = t.grad(self);
            const Matrix& x = t.value(ia);
            const Matrix& g = t.value(ig);
            const bool want_x = t.needs(ia);
            const bool want_g = t.needs(ig);
            const double n = static_cast<double>(x.cols);
            for (std::size_t i = 0; i < x.rows; ++i) {
                const double r = rms[i];
                double s = 0.0;  // sum_j go_ij * g_j * x_ij
                for (std::size_t j = 0; j < x.cols; ++j) {
                    s += go.at(i, j) * g.at(0, j) * x.at(i, j);
                    if (want_g) t.grad(ig).at(0, j) += go.at(i, j) * x.at(i, j) / r;
                }
                if (want_x) {
                    Matrix& gx = t.grad(ia);
                    for (std::size_t j = 0; j < x.cols; ++j) {
                        gx.at(i, j) += go.at(i, j) * g.at(0, j) / r -
                                       x.at(i, j) * s / (n * r * r * r);
                    }
                }
            }
        });
    return Var{&t, id};
}

/// Gather rows of an embedding table: out_i = table[ids[i]].
inline Var embed_rows(Var table, const std::vector<int>& ids) {
    Tape& t = *table.tape;
    const Matrix& tab = t.value(table.id);
    Matrix out(ids.size(), tab.cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < tab.rows,
                "ad::embed_rows: id out of range: " + std::to_string(ids[i]));
        for (std::size_t j = 0; j < tab.cols; ++j) out.at(i, j) = tab.at(ids[i], j);
    }
    const std::size_t it = table.id;
    const std::size_t id = t.push(std::move(out), {it}, [it, ids](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Matrix& gt = t.grad(it);
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < g.cols; ++j) gt.at(ids[i], j) += g.at(i, j);
    });
    return Var{&t, id};
}

/// Stack several matrices with equal column counts on top of each other.
inline Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), "ad::concat_rows: empty input");
    Tape& t = *parts[0].tape;
    std::size_t rows = 0;
    const std::size_t cols = t.value(parts[0].id).cols;
    std::vector<std::size_t> ids;
    for (const Var& p : parts) {
        require(t.value(p.id).cols == cols, "ad::concat_rows: column mismatch");
        rows += t.value(p.id).rows;
        ids.push_back(p.id);
    }
    Matrix out(rows, cols);
    std::size_t r = 0;
    for (const Var& p : parts) {
        const Matrix& m = t.value(p.id);
        std::copy(m.data.begin(), m.data.end(), out.data.begin() + r * cols);
        r += m.rows;
    }
    const std::size_t id = t.push(std::move(out), ids, [ids](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        std::size_t r = 0;
        for (std::size_t pid : ids) {
            const std::size_t prows = t.value(pid).rows;
            if (t.needs(pid)) {
                Matrix& gp = t.grad(pid);
                for (std::size_t i = 0; i < prows; ++i)
                    for (std::size_t j = 0; j < gp.cols; ++j) gp.at(i, j) += g.at(r + i, j);
            }
            r += prows;
        }
    });
    return Var{&t, id};
}

/// First d columns of a (the Matryoshka prefix).
inline Var slice_cols(Var a, std::size_t d) {
    Tape& t = *a.tape;
    const Matrix& x = t.value(a.id);
    require(d >= 1 && d <= x.cols, "ad::slice_cols: prefix width out of range");
    Matrix out(x.rows, d);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = x.at(i, j);
    const std::size_t ia = a.id;
    const std::size_t id = t.push(std::move(out), {ia}, [ia, d](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Matrix& gx = t.grad(ia);
        for (std::size_t i = 0; i < g.rows; ++i)
            for (std::size_t j = 0; j < d; ++j) gx.at(i, j) += g.at(i, j);
    });
    return Var{&t, id};
}

/// Single row of a as 1xC.
inline Var select_row(Var a, std::size_t row) {
    Tape& t = *a.tape;
    const Matrix& x = t.value(a.id);
    require(row < x.rows, "ad::select_row: row out of range");
    Matrix out(1, x.cols);
    for (std::size_t j = 0; j < x.cols; ++j) out.at(0, j) = x.at(row, j);
    const std::size_t ia = a.id;
    const std::size_t id = t.push(std::move(out), {ia}, [ia, row](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Matrix& gx = t.grad(ia);
        for (std::size_t j = 0; j < g.cols; ++j) gx.at(row, j) += g.at(0, j);
    });
    return Var{&t, id};
}

/// Patch extraction for a kernel-3 stride-2 zero-padded 1-D convolution over
/// rows: output position p gathers rows {2p-1, 2p, 2p+1} into a 1x(3C) slab,
/// so out has ceil(S/2) rows. Composes with matmul for the actual filter.
inline Var im2col_k3s2(Var a) {
    Tape& t = *a.tape;
    const Matrix& x = t.value(a.id);
    const std::size_t s = x.rows, c = x.cols;
    require(s >= 1, "ad::im2col_k3s2: empty sequence");
    const std::size_t out_len = (s + 1) / 2;
    Matrix out(out_len, 3 * c);
    for (std::size_t p = 0; p < out_len; ++p) {
        for (int kk = -1; kk <= 1; ++kk) {
            const long src = static_cast<long>(2 * p) + kk;
            if (src < 0 || src >= static_cast<long>(s)) continue;
            for (std::size_t j = 0; j < c; ++j)
                out.at(p, static_cast<std::size_t>(kk + 1) * c + j) =
                    x.at(static_cast<std::size_t>(src), j);
        }
    }
    const std::size_t ia = a.id;
    const std::size_t id = t.push(std::move(out), {ia}, [ia, s, c](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Matrix& gx = t.grad(ia);
        for (std::size_t p = 0; p < g.rows; ++p) {
            for (int kk = -1; kk <= 1; ++kk) {
                const long src = static_cast<long>(2 * p) + kk;
                if (src < 0 || src >= static_cast<long>(s)) continue;
                for (std::size_t j = 0; j < c; ++j)
                    gx.at(static_cast<std::size_t>(src), j) +=
                        g.at(p, static_cast<std::size_t>(kk + 1) * c + j);
            }
        }
    });
    return Var{&t, id};
}

}  // namespace matz::ad
