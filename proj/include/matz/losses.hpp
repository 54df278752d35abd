#pragma once

#include <string>
#include <vector>

#include "matz/autodiff.hpp"
#include "matz/params.hpp"

namespace matz {

enum class Objective { kRetrieval, kQueryAlignment };

/// Shared loss settings. `dims` are the Matryoshka prefix widths the joint
/// loss sums over; `normalize_prefix` re-normalizes each sliced prefix so
/// scores stay cosines at every width (the unnormalized variant remains
/// available behind the flag).
struct LossConfig {
    double temperature = 0.05;
    std::vector<std::size_t> dims;
    Objective objective = Objective::kRetrieval;
    bool normalize_prefix = true;

    void validate() const {
        require(temperature > 0.0, "LossConfig: temperature must be > 0");
        require(!dims.empty(), "LossConfig: dims must be nonempty");
        for (std::size_t i = 1; i < dims.size(); ++i)
            require(dims[i] > dims[i - 1], "LossConfig: dims must be strictly increasing");
    }
};

namespace ad {

/// InfoNCE with in-batch negatives on the tape:
///   loss = -(1/n) sum_i log( exp(s_ii/tau) / sum_j exp(s_ij/tau) )
/// where s = q * docs^T. A single-row batch yields exactly zero.
inline Var info_nce(Var queries, Var docs, double tau) {
    Tape& t = *queries.tape;
    require(t.value(queries.id).rows == t.value(docs.id).rows,
            "info_nce: query/document row counts differ");
    require(t.value(queries.id).rows >= 1, "info_nce: empty batch");
    Var logits = scale(matmul_nt(queries, docs), 1.0 / tau);
    Var lse = row_logsumexp(logits);
    Var diag = take_diag(logits);
    return mean_all(sub(lse, diag));
}

/// Matryoshka joint loss: unweighted sum of InfoNCE over every configured
/// prefix width. Returns the total plus each per-dimension term (for loss
/// curves). Inputs are full-width embeddings.
struct MrlTerms {
    Var total;
    std::vector<std::pair<std::size_t, Var>> per_dim;
};

inline MrlTerms mrl_loss(Var q_full, Var d_full, const LossConfig& cfg) {
    cfg.validate();
    Tape& t = *q_full.tape;
    require(cfg.dims.back() <= t.value(q_full.id).cols,
            "mrl_loss: largest dim exceeds embedding width");
    const std::size_t full = t.value(q_full.id).cols;
    MrlTerms out;
    bool first = true;
    for (std::size_t d : cfg.dims) {
        Var q = q_full;
        Var k = d_full;
        if (d < full) {
            q = slice_cols(q_full, d);
            k = slice_cols(d_full, d);
            // The full-width term is left untouched: inputs are unit norm
            // already, so the single-dim case reduces to plain InfoNCE
            // bit-for-bit.
            if (cfg.normalize_prefix) {
                q = normalize_rows(q);
                k = normalize_rows(k);
            }
        }
        Var term = info_nce(q, k, cfg.temperature);
        out.per_dim.emplace_back(d, term);
        out.total = first ? term : add(out.total, term);
        first = false;
    }
    return out;
}

/// Distillation loss for speech-to-text alignment: per row,
/// (1 - cos(s_i, t_i)) + mean_j |s_ij - t_ij|, averaged over rows.
inline Var query_alignment(Var speech, Var text) {
    Tape& t = *speech.tape;
    std::size_t rows = 0, cols = 0;
    {
        // Scoped: pushes below invalidate references into the tape.
        const Matrix& s = t.value(speech.id);
        const Matrix& x = t.value(text.id);
        require(s.same_shape(x), "query_alignment: shape mismatch");
        rows = s.rows;
        cols = s.cols;
        for (std::size_t i = 0; i < rows; ++i) {
            require(dot(s.row_ptr(i), s.row_ptr(i), cols) > 0.0,
                    "query_alignment: zero-norm speech row " + std::to_string(i));
            require(dot(x.row_ptr(i), x.row_ptr(i), cols) > 0.0,
                    "query_alignment: zero-norm text row " + std::to_string(i));
        }
    }
    Var cos = div_elems(row_dot(speech, text),
                        hadamard(sqrt_elems(row_dot(speech, speech)),
                                 sqrt_elems(row_dot(text, text))));
    Var cos_term = sub(input(t, Matrix(rows, 1, 1.0)), cos);
    // Row-wise mean absolute error via matmul with a constant column.
    Var mae = matmul(abs_elems(sub(speech, text)),
                     input(t, Matrix(cols, 1, 1.0 / static_cast<double>(cols))));
    return mean_all(add(cos_term, mae));
}

}  // namespace ad

/// Value-level results for the public loss API: scalar loss, gradients with
/// respect to both embedding matrices, and any degeneracy warnings.
struct LossValue {
    double loss = 0.0;
    Matrix grad_queries;
    Matrix grad_docs;
    std::vector<std::pair<std::size_t, double>> per_dim;  // empty for plain InfoNCE
    std::vector<std::string> warnings;
};

inline LossValue info_nce(const Matrix& queries, const Matrix& docs, double tau) {
    require(tau > 0.0, "info_nce: temperature must be > 0");
    require(queries.rows >= 1, "info_nce: batch must contain at least one row");
    require(queries.rows == docs.rows, "info_nce: query/document row counts differ");
    require(queries.all_finite() && docs.all_finite(), "info_nce: non-finite input");
    LossValue out;
    if (queries.rows == 1) {
        out.warnings.push_back("info_nce: degenerate batch of size 1, loss is 0");
    }
    ad::Tape tape;
    ad::Var q = ad::leaf(tape, queries);
    ad::Var d = ad::leaf(tape, docs);
    ad::Var loss = ad::info_nce(q, d, tau);
    tape.backward(loss.id);
    out.loss = loss.scalar();
    out.grad_queries = tape.grad(q.id);
    out.grad_docs = tape.grad(d.id);
    return out;
}

inline LossValue mrl_loss(const Matrix& q_full, const Matrix& d_full, const LossConfig& cfg) {
    require(q_full.rows == d_full.rows, "mrl_loss: query/document row counts differ");
    require(q_full.rows >= 1, "mrl_loss: batch must contain at least one row");
    LossValue out;
    if (q_full.rows == 1) {
        out.warnings.push_back("mrl_loss: degenerate batch of size 1, loss is 0");
    }
    ad::Tape tape;
    ad::Var q = ad::leaf(tape, q_full);
    ad::Var d = ad::leaf(tape, d_full);
    ad::MrlTerms terms = ad::mrl_loss(q, d, cfg);
    tape.backward(terms.total.id);
    out.loss = terms.total.scalar();
    for (const auto& [dim, var] : terms.per_dim) out.per_dim.emplace_back(dim, var.scalar());
    out.grad_queries = tape.grad(q.id);
    out.grad_docs = tape.grad(d.id);
    return out;
}

inline LossValue query_alignment_loss(const Matrix& speech, const Matrix& text) {
    ad::Tape tape;
    ad::Var s = ad::leaf(tape, speech);
    ad::Var t = ad::leaf(tape, text);
    ad::Var loss = ad::query_alignment(s, t);
    tape.backward(loss.id);
    LossValue out;
    out.loss = loss.scalar();
    out.grad_queries = tape.grad(s.id);
    out.grad_docs = tape.grad(t.id);
    return out;
}

}  // namespace matz
