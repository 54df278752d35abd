#pragma once

#include <cstdint>
#include <deque>
#include <set>
#include <string>
#include <vector>

#include "matz/checkpoint.hpp"
#include "matz/losses.hpp"
#include "matz/model.hpp"
#include "matz/sha256.hpp"
#include "matz/synth.hpp"

namespace matz {

struct TrainRunConfig {
    std::size_t epochs = 1;
    std::size_t batch_size = 16;
    double lr = 3e-4;
    std::uint64_t seed = 42;
    /// Parameter-name prefixes that stay trainable; empty means everything.
    std::vector<std::string> trainable_prefixes;

    void validate() const {
        require(epochs >= 1, "TrainRunConfig: epochs must be >= 1");
        require(batch_size >= 2, "TrainRunConfig: batch size must be >= 2 for in-batch negatives");
        require(lr >= 0.0, "TrainRunConfig: negative learning rate");
    }
};

struct StepRecord {
    std::size_t step = 0;
    std::vector<std::pair<std::size_t, double>> per_dim;
    double total = 0.0;
};

struct TrainResult {
    std::vector<StepRecord> curve;
    std::size_t steps = 0;
};

/// Default trainable-parameter filters per variant: late fusion trains only
/// the frontend; dual paths train every speech module; the text model
/// trains end to end.
inline std::vector<std::string> default_trainable_prefixes(Variant v) {
    switch (v) {
        case Variant::kTextOnly: return {"text."};
        case Variant::kLateFusion: return {"frontend."};
        case Variant::kDualRetrieval:
        case Variant::kDualAlignment: return {"frontend.", "pooler.", "head."};
    }
    return {};
}

inline std::function<bool(const std::string&)> prefix_filter(std::vector<std::string> prefixes) {
    if (prefixes.empty()) return [](const std::string&) { return true; };
    return [prefixes = std::move(prefixes)](const std::string& name) {
        for (const auto& p : prefixes) {
            if (name.rfind(p, 0) == 0) return true;
        }
        return false;
    };
}

/// Hash of the serialized bytes of every parameter matching the prefix;
/// used to verify freeze contracts.
inline std::string param_bytes_hash(const ParamSet& params, const std::string& prefix = "") {
    ByteWriter w;
    for (const auto& [name, m] : params) {
        if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.str(name);
        for (double v : m.data) w.f64(v);
    }
    return sha256_hex(w.buffer());
}

namespace detail {

/// Content key for in-batch deduplication: two examples with the same
/// target tokens would be false negatives for each other.
inline std::uint64_t document_key(const PairedExample& ex) {
    std::uint64_t h = 1469598103934665603ULL;
    for (int tok : ex.document) {
        h ^= static_cast<std::uint64_t>(tok) + 0x9e37;
        h *= 1099511628211ULL;
    }
    return h;
}

/// Deterministic batches: shuffled order, duplicates of a document key
/// deferred to later batches.
inline std::vector<std::vector<std::size_t>> assemble_batches(
    const std::vector<const PairedExample*>& data, std::size_t batch_size, Rng& rng) {
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    std::vector<std::vector<std::size_t>> batches;
    std::vector<std::size_t> remaining = std::move(order);
    while (!remaining.empty()) {
        std::vector<std::size_t> batch;
        std::vector<std::size_t> rest;
        std::set<std::uint64_t> keys;
        for (std::size_t idx : remaining) {
            if (batch.size() == batch_size || !keys.insert(document_key(*data[idx])).second) {
                rest.push_back(idx);
            } else {
                batch.push_back(idx);
            }
        }
        batches.push_back(std::move(batch));
        remaining = std::move(rest);
    }
    return batches;
}

struct BatchLoss {
    ad::Var total;
    std::vector<std::pair<std::size_t, ad::Var>> per_dim;
};

inline BatchLoss batch_loss(ad::Tape& tape, const ad::VarMap& vars, const Model& model,
                            const std::vector<const PairedExample*>& batch,
                            const LossConfig& loss_cfg) {
    const ModelConfig& cfg = model.cfg;
    BatchLoss out;

    if (model.variant == Variant::kTextOnly || model.variant == Variant::kLateFusion) {
        std::vector<ad::Var> q_rows, d_rows;
        for (const PairedExample* ex : batch) {
            if (model.variant == Variant::kTextOnly) {
                q_rows.push_back(
                    ad::encode_text(tape, vars, cfg, ex->query_tokens, task_prompt(ex->task)));
            } else {
                q_rows.push_back(ad::encode_speech_late_fusion(tape, vars, cfg, ex->frames,
                                                               task_prompt(ex->task)));
            }
            d_rows.push_back(ad::encode_text(tape, vars, cfg, ex->document, TaskPrompt::kNone));
        }
        ad::Var q = ad::concat_rows(q_rows);
        ad::Var d = ad::concat_rows(d_rows);
        ad::MrlTerms terms = ad::mrl_loss(q, d, loss_cfg);
        out.total = terms.total;
        out.per_dim = std::move(terms.per_dim);
        return out;
    }

    // Dual paths: per-dimension heads against the frozen text encoder.
    const bool alignment = model.variant == Variant::kDualAlignment;
    std::vector<ad::Var> pooled;
    std::vector<ad::Var> target_rows;
    for (const PairedExample* ex : batch) {
        pooled.push_back(ad::dual_pooled(tape, vars, cfg, ex->frames));
        const std::vector<int>& target = alignment ? ex->transcription : ex->document;
        target_rows.push_back(ad::encode_text(tape, vars, cfg, target, TaskPrompt::kNone));
    }
    ad::Var targets = ad::concat_rows(target_rows);

    bool first = true;
    for (std::size_t d : loss_cfg.dims) {
        std::vector<ad::Var> head_rows;
        head_rows.reserve(pooled.size());
        for (ad::Var p : pooled) head_rows.push_back(ad::dual_head(p, vars, d));
        ad::Var q_d = ad::concat_rows(head_rows);
        ad::Var t_d = targets;
        if (d < cfg.hidden) {
            t_d = ad::normalize_rows(ad::slice_cols(targets, d));
        }
        ad::Var term = alignment ? ad::query_alignment(q_d, t_d)
                                 : ad::info_nce(q_d, t_d, loss_cfg.temperature);
        out.per_dim.emplace_back(d, term);
        out.total = first ? term : ad::add(out.total, term);
        first = false;
    }
    return out;
}

}  // namespace detail

/// Train a model variant in place. Only parameters passing the trainable
/// filter move; the loss curve carries one record per optimizer step.
/// Aborts with step and batch ids if the loss turns non-finite.
inline TrainResult train(Model& model, const std::vector<const PairedExample*>& data,
                         const TrainRunConfig& run, const LossConfig& loss_cfg) {
    run.validate();
    loss_cfg.validate();
    require(!data.empty(), "train: empty dataset");
    for (const PairedExample* ex : data) {
        require(ex->frames.rows >= 1 || model.variant == Variant::kTextOnly,
                "train: example " + std::to_string(ex->id) + " has no frames");
    }

    const auto trainable =
        prefix_filter(run.trainable_prefixes.empty() ? default_trainable_prefixes(model.variant)
                                                     : run.trainable_prefixes);

    TrainResult result;
    Rng root(run.seed);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < run.epochs; ++epoch) {
        Rng epoch_rng = root.fork(epoch + 1);
        const auto batches = detail::assemble_batches(data, run.batch_size, epoch_rng);
        for (const auto& batch_idx : batches) {
            std::vector<const PairedExample*> batch;
            batch.reserve(batch_idx.size());
            for (std::size_t i : batch_idx) batch.push_back(data[i]);

            auto batch_ids = [&batch]() {
                std::string ids;
                for (const PairedExample* ex : batch)
                    ids += (ids.empty() ? "" : ",") + std::to_string(ex->id);
                return ids;
            };

            ad::Tape tape;
            ad::VarMap vars = ad::bind_params(tape, model.params, trainable);
            StepRecord rec;
            rec.step = step;
            std::size_t loss_node = 0;
            try {
                detail::BatchLoss loss = detail::batch_loss(tape, vars, model, batch, loss_cfg);
                rec.total = loss.total.scalar();
                for (const auto& [d, var] : loss.per_dim)
                    rec.per_dim.emplace_back(d, var.scalar());
                loss_node = loss.total.id;
            } catch (const std::invalid_argument& e) {
                // Non-finite intermediates surface here from the op layer.
                throw std::runtime_error("train: aborted at step " + std::to_string(step) +
                                         " (batch example ids: " + batch_ids() +
                                         "): " + e.what());
            }
            if (!std::isfinite(rec.total)) {
                throw std::runtime_error("train: non-finite loss at step " +
                                         std::to_string(step) +
                                         " (batch example ids: " + batch_ids() + ")");
            }

            tape.backward(loss_node);
            if (run.lr > 0.0) {
                for (auto& [name, value] : model.params) {
                    if (!trainable(name)) continue;
                    const ad::Var v = vars.at(name);
                    if (!tape.has_grad(v.id)) continue;
                    const Matrix& g = tape.grad(v.id);
                    for (std::size_t i = 0; i < value.data.size(); ++i)
                        value.data[i] -= run.lr * g.data[i];
                }
            }
            result.curve.push_back(std::move(rec));
            ++step;
        }
    }
    result.steps = step;
    return result;
}

/// Loss curve as plot-ready delimited text: step, one column per
/// Matryoshka dimension, then the total.
inline std::string curve_to_tsv(const std::vector<StepRecord>& curve) {
    std::string out = "step";
    if (!curve.empty()) {
        for (const auto& [d, _] : curve.front().per_dim) out += "\tdim" + std::to_string(d);
    }
    out += "\ttotal\n";
    for (const auto& rec : curve) {
        out += std::to_string(rec.step);
        char buf[32];
        for (const auto& [d, v] : rec.per_dim) {
            std::snprintf(buf, sizeof(buf), "\t%.9g", v);
            out += buf;
        }
        std::snprintf(buf, sizeof(buf), "\t%.9g", rec.total);
        out += buf;
        out.push_back('\n');
    }
    return out;
}

// ---- few-shot adaptation (contrastive stage + logistic head) ----------------

struct FewShotConfig {
    std::size_t n_shot = 0;
    std::size_t stage1_epochs = 1;
    double stage1_lr = 0.05;
    std::size_t stage1_batch_pairs = 32;
    std::size_t stage1_max_pairs = 400;
    double margin = 0.0;
    std::size_t head_iters = 300;
    double head_lr = 0.5;
    double head_l2 = 1e-4;
    std::uint64_t seed = 7;

    void validate() const {
        const std::size_t allowed[] = {0, 1, 2, 4, 8, 16};
        bool ok = false;
        for (std::size_t n : allowed) ok = ok || n == n_shot;
        require(ok, "FewShotConfig: n_shot must be one of {0,1,2,4,8,16}");
    }
};

/// Stage-1 pair construction: every example, as an anchor, against every
/// example of every other class. Returns unordered index pairs.
inline std::vector<std::pair<std::size_t, std::size_t>> setfit_pairs(
    const std::vector<int>& labels, std::size_t classes) {
    require(classes >= 2, "setfit_pairs: need at least 2 classes");
    std::vector<std::size_t> per_class(classes, 0);
    for (int l : labels) {
        require(l >= 0 && static_cast<std::size_t>(l) < classes, "setfit_pairs: bad label");
        ++per_class[l];
    }
    for (std::size_t c = 0; c < classes; ++c) {
        require(per_class[c] > 0,
                "setfit_pairs: class " + std::to_string(c) + " has 0 examples");
    }
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (std::size_t j = i + 1; j < labels.size(); ++j) {
            if (labels[i] != labels[j]) pairs.emplace_back(i, j);
        }
    }
    return pairs;
}

/// Multiclass logistic regression head, trained full-batch with plain
/// gradient descent. Deterministic: zero init, fixed iteration count.
struct LogisticHead {
    Matrix w;  // d x classes
    Matrix b;  // 1 x classes

    static double loss_and_grads(const Matrix& x, const std::vector<int>& labels,
                                 const Matrix& w, const Matrix& b, double l2, Matrix* gw,
                                 Matrix* gb) {
        const std::size_t n = x.rows, classes = w.cols;
        Matrix logits = matmul(x, w);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < classes; ++c) logits.at(i, c) += b.at(0, c);
        Matrix p = softmax_rows(logits);
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) loss -= std::log(std::max(p.at(i, labels[i]), 1e-300));
        loss /= static_cast<double>(n);
        double reg = 0.0;
        for (double v : w.data) reg += v * v;
        loss += 0.5 * l2 * reg;
        if (gw && gb) {
            Matrix delta = p;  // p - onehot
            for (std::size_t i = 0; i < n; ++i) delta.at(i, labels[i]) -= 1.0;
            *gw = matmul_tn(x, delta);
            for (double& v : gw->data) v /= static_cast<double>(n);
            for (std::size_t i = 0; i < gw->data.size(); ++i) gw->data[i] += l2 * w.data[i];
            *gb = Matrix(1, classes);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < classes; ++c)
                    gb->at(0, c) += delta.at(i, c) / static_cast<double>(n);
        }
        return loss;
    }

    void fit(const Matrix& x, const std::vector<int>& labels, std::size_t classes,
             std::size_t iters, double lr, double l2) {
        require(x.rows == labels.size(), "LogisticHead: feature/label size mismatch");
        w = Matrix(x.cols, classes);
        b = Matrix(1, classes);
        for (std::size_t it = 0; it < iters; ++it) {
            Matrix gw, gb;
            loss_and_grads(x, labels, w, b, l2, &gw, &gb);
            for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] -= lr * gw.data[i];
            for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] -= lr * gb.data[i];
        }
    }

    int predict_row(const double* row) const {
        int best = 0;
        double best_score = -1e300;
        for (std::size_t c = 0; c < w.cols; ++c) {
            double s = b.at(0, c);
            for (std::size_t j = 0; j < w.rows; ++j) s += row[j] * w.at(j, c);
            if (s > best_score) {
                best_score = s;
                best = static_cast<int>(c);
            }
        }
        return best;
    }
};

/// Classifier produced by setfit_train. Zero-shot mode scores against label
/// prototypes; trained mode runs the stage-1 fine-tuned encoder and the
/// stage-2 logistic head.
struct IntentClassifier {
    Model model;
    std::size_t dim = 0;
    bool zero_shot = true;
    Matrix prototypes;  // classes x dim (zero-shot)
    LogisticHead head;  // trained mode
    TaskPrompt speech_prompt = TaskPrompt::kTranscription;

    std::vector<double> embed(const Matrix& frames) const {
        const auto full = encode_speech_late_fusion(model, frames, speech_prompt);
        return slice_prefix(full, dim, model.cfg);
    }

    int predict(const Matrix& frames) const {
        const auto e = embed(frames);
        if (zero_shot) {
            int best = 0;
            double best_score = -1e300;
            for (std::size_t c = 0; c < prototypes.rows; ++c) {
                const double s = dot(e.data(), prototypes.row_ptr(c), dim);
                if (s > best_score) {
                    best_score = s;
                    best = static_cast<int>(c);
                }
            }
            return best;
        }
        return head.predict_row(e.data());
    }
};

namespace detail {

/// Stage-1 contrastive pass: push cross-class pairs apart with a squared
/// hinge on the cosine at the evaluated prefix width. Trains the speech
/// frontend only, mirroring the late-fusion freeze contract.
inline void setfit_stage1(Model& model, const std::vector<const PairedExample*>& shots,
                          const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                          std::size_t dim, const FewShotConfig& cfg, TaskPrompt prompt) {
    if (pairs.empty() || cfg.stage1_epochs == 0) return;
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    if (order.size() > cfg.stage1_max_pairs) order.resize(cfg.stage1_max_pairs);

    const auto trainable = prefix_filter({"frontend."});
    for (std::size_t epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
        for (std::size_t start = 0; start < order.size(); start += cfg.stage1_batch_pairs) {
            const std::size_t end = std::min(order.size(), start + cfg.stage1_batch_pairs);
            ad::Tape tape;
            ad::VarMap vars = ad::bind_params(tape, model.params, trainable);
            ad::Var loss{};
            bool first = true;
            for (std::size_t oi = start; oi < end; ++oi) {
                const auto& [i, j] = pairs[order[oi]];
                ad::Var a = ad::encode_speech_late_fusion(tape, vars, model.cfg,
                                                          shots[i]->frames, prompt);
                ad::Var b = ad::encode_speech_late_fusion(tape, vars, model.cfg,
                                                          shots[j]->frames, prompt);
                if (dim < model.cfg.hidden) {
                    a = ad::normalize_rows(ad::slice_cols(a, dim));
                    b = ad::normalize_rows(ad::slice_cols(b, dim));
                }
                ad::Var cos = ad::row_dot(a, b);
                ad::Var hinge = ad::square(ad::relu(ad::add_const(cos, -cfg.margin)));
                loss = first ? hinge : ad::add(loss, hinge);
                first = false;
            }
            ad::Var mean = ad::scale(loss, 1.0 / static_cast<double>(end - start));
            tape.backward(mean.id);
            for (auto& [name, value] : model.params) {
                if (!trainable(name)) continue;
                const ad::Var v = vars.at(name);
                if (!tape.has_grad(v.id)) continue;
                const Matrix& g = tape.grad(v.id);
                for (std::size_t k = 0; k < value.data.size(); ++k)
                    value.data[k] -= cfg.stage1_lr * g.data[k];
            }
        }
    }
}

}  // namespace detail

/// Two-stage few-shot adaptation. With n_shot = 0 the result is the pure
/// zero-shot label-similarity classifier over `label_prototypes`; otherwise
/// stage 1 fine-tunes contrastively on the shot pairs and stage 2 fits a
/// logistic head on the frozen stage-1 embeddings.
inline IntentClassifier setfit_train(const Model& base,
                                     const std::vector<const PairedExample*>& shots,
                                     std::size_t classes, std::size_t dim,
                                     const FewShotConfig& cfg, const Matrix& label_prototypes,
                                     TaskPrompt speech_prompt = TaskPrompt::kTranscription) {
    cfg.validate();
    require(base.has("frontend.proj"), "setfit_train: model has no speech frontend");
    require(base.cfg.dim_configured(dim), "setfit_train: dim not configured");

    IntentClassifier clf;
    clf.model = base;
    clf.dim = dim;
    clf.speech_prompt = speech_prompt;

    if (cfg.n_shot == 0) {
        require(label_prototypes.rows == classes && label_prototypes.cols == dim,
                "setfit_train: zero-shot needs classes x dim label prototypes");
        clf.zero_shot = true;
        clf.prototypes = label_prototypes;
        return clf;
    }

    require(!shots.empty(), "setfit_train: no shots for n > 0");
    std::vector<int> labels;
    labels.reserve(shots.size());
    for (const PairedExample* ex : shots) labels.push_back(ex->intent_label);
    const auto pairs = setfit_pairs(labels, classes);

    detail::setfit_stage1(clf.model, shots, pairs, dim, cfg, speech_prompt);

    Matrix features(shots.size(), dim);
    for (std::size_t i = 0; i < shots.size(); ++i) {
        const auto e = clf.embed(shots[i]->frames);
        for (std::size_t j = 0; j < dim; ++j) features.at(i, j) = e[j];
    }
    clf.zero_shot = false;
    clf.head.fit(features, labels, classes, cfg.head_iters, cfg.head_lr, cfg.head_l2);
    return clf;
}

}  // namespace matz
