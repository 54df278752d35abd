#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "matz/corpus_io.hpp"
#include "matz/index.hpp"
#include "matz/metrics.hpp"
#include "matz/model.hpp"
#include "matz/synth.hpp"
#include "matz/train.hpp"

namespace matz {

// ---- evaluation report -------------------------------------------------------

struct EvalReportRow {
    std::string task;
    std::string variant;
    std::size_t dim = 0;
    std::string metric;
    double value = 0.0;

    bool operator<(const EvalReportRow& o) const {
        return std::tie(task, variant, dim, metric) < std::tie(o.task, o.variant, o.dim, o.metric);
    }
    bool operator==(const EvalReportRow& o) const {
        return task == o.task && variant == o.variant && dim == o.dim && metric == o.metric &&
               value == o.value;
    }
};

struct EvalReport {
    std::vector<EvalReportRow> rows;
    std::map<std::string, std::string> metadata;
    std::vector<std::string> warnings;

    void add(std::string task, std::string variant, std::size_t dim, std::string metric,
             double value) {
        rows.push_back({std::move(task), std::move(variant), dim, std::move(metric), value});
    }

    void merge(const EvalReport& other) {
        rows.insert(rows.end(), other.rows.begin(), other.rows.end());
        warnings.insert(warnings.end(), other.warnings.begin(), other.warnings.end());
        for (const auto& [k, v] : other.metadata) metadata.emplace(k, v);
    }

    /// Report assembly is order-independent; serialize sorted.
    void sort() { std::sort(rows.begin(), rows.end()); }

    double get(const std::string& task, const std::string& variant, std::size_t dim,
               const std::string& metric) const {
        for (const auto& r : rows) {
            if (r.task == task && r.variant == variant && r.dim == dim && r.metric == metric)
                return r.value;
        }
        throw std::invalid_argument("EvalReport: missing cell " + task + "/" + variant + "/d" +
                                    std::to_string(dim) + "/" + metric);
    }

    bool has(const std::string& task, const std::string& variant, std::size_t dim,
             const std::string& metric) const {
        for (const auto& r : rows) {
            if (r.task == task && r.variant == variant && r.dim == dim && r.metric == metric)
                return true;
        }
        return false;
    }
};

inline std::string report_to_jsonl(const EvalReport& report) {
    nlohmann::json header;
    header["schema"] = "matz-eval";
    header["version"] = 1;
    header["metadata"] = report.metadata;
    header["warnings"] = report.warnings;
    std::string out = header.dump();
    out.push_back('\n');
    for (const auto& r : report.rows) {
        nlohmann::json j;
        j["task"] = r.task;
        j["variant"] = r.variant;
        j["dim"] = r.dim;
        j["metric"] = r.metric;
        j["value"] = r.value;
        out += j.dump();
        out.push_back('\n');
    }
    return out;
}

inline EvalReport report_from_jsonl(const std::string& text) {
    EvalReport report;
    std::size_t pos = 0;
    bool first = true;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        const std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        if (first) {
            require(j.value("schema", "") == std::string("matz-eval"),
                    "eval report: bad schema header");
            report.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
            report.warnings = j.at("warnings").get<std::vector<std::string>>();
            first = false;
            continue;
        }
        report.rows.push_back({j.at("task").get<std::string>(), j.at("variant").get<std::string>(),
                               j.at("dim").get<std::size_t>(), j.at("metric").get<std::string>(),
                               j.at("value").get<double>()});
    }
    require(!first, "eval report: empty file");
    return report;
}

// ---- embedding assembly ------------------------------------------------------

/// Per-dimension query embeddings, rows parallel to the evaluated examples.
/// Full-width models contribute re-normalized prefixes; the dual encoder
/// contributes its per-dimension heads directly.
struct QueryEmbeddings {
    std::map<std::size_t, Matrix> by_dim;
    std::vector<std::uint64_t> ids;
};

/// Evaluation-time query paths, including the pipelined ASR baseline.
enum class QueryMode { kTextQuery, kTextTranscription, kPipelined, kLateFusion, kDual };

struct PipelineNoise {
    double rate = 0.0;
    std::uint64_t seed = 0;
};

inline QueryEmbeddings embed_queries(const Model& model,
                                     const std::vector<PairedExample>& examples, QueryMode mode,
                                     const std::vector<std::size_t>& dims, TaskPrompt prompt,
                                     const PipelineNoise& noise = {}) {
    QueryEmbeddings out;
    for (std::size_t d : dims) out.by_dim.emplace(d, Matrix(examples.size(), d));
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const PairedExample& ex = examples[i];
        out.ids.push_back(ex.id);
        if (mode == QueryMode::kDual) {
            const auto by_dim = encode_speech_dual(model, ex.frames);
            for (std::size_t d : dims) {
                const auto& e = by_dim.at(d);
                for (std::size_t j = 0; j < d; ++j) out.by_dim.at(d).at(i, j) = e[j];
            }
            continue;
        }
        std::vector<double> full;
        switch (mode) {
            case QueryMode::kTextQuery:
                full = encode_text(model, ex.query_tokens, prompt);
                break;
            case QueryMode::kTextTranscription:
                full = encode_text(model, ex.transcription, prompt);
                break;
            case QueryMode::kPipelined: {
                const auto noisy = corrupt_transcription(ex.transcription, noise.rate,
                                                         noise.seed + ex.id, model.cfg.vocab);
                full = encode_text(model, noisy, prompt);
                break;
            }
            case QueryMode::kLateFusion:
                full = encode_speech_late_fusion(model, ex.frames, prompt);
                break;
            case QueryMode::kDual:
                break;  // handled above
        }
        for (std::size_t d : dims) {
            const auto prefix = slice_prefix(full, d, model.cfg);
            for (std::size_t j = 0; j < d; ++j) out.by_dim.at(d).at(i, j) = prefix[j];
        }
    }
    return out;
}

/// Documents are always embedded by the text encoder, promptless.
inline std::pair<std::vector<std::uint64_t>, Matrix> embed_documents(
    const Model& model, const std::vector<PairedExample>& examples) {
    Matrix docs(examples.size(), model.cfg.hidden);
    std::vector<std::uint64_t> ids;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        ids.push_back(examples[i].id);
        const auto e = encode_text(model, examples[i].document, TaskPrompt::kNone);
        for (std::size_t j = 0; j < e.size(); ++j) docs.at(i, j) = e[j];
    }
    return {ids, docs};
}

/// Relevance judgments implied by the corpus: each query's positive is its
/// own paired document at the example's grade.
inline Judgments corpus_judgments(const std::vector<PairedExample>& examples) {
    Judgments j;
    for (const auto& ex : examples) j[ex.id][ex.id] = ex.relevance;
    return j;
}

// ---- retrieval evaluation -----------------------------------------------------

/// Rank documents for every query at every dimension through the vector
/// index and average nDCG@k. Queries without judgments are skipped and
/// logged.
inline EvalReport eval_retrieval(const QueryEmbeddings& queries,
                                 const std::vector<std::uint64_t>& doc_ids, const Matrix& docs,
                                 const Judgments& judgments,
                                 const std::vector<std::size_t>& dims,
                                 const std::vector<std::size_t>& k_list,
                                 const std::string& variant_label,
                                 const std::string& task_label = "doc-retrieval") {
    EvalReport report;
    require(!k_list.empty(), "eval_retrieval: empty k list");
    const std::size_t k_max = *std::max_element(k_list.begin(), k_list.end());
    IndexShard shard = build_shard(doc_ids, docs, dims);
    for (std::size_t d : dims) {
        std::map<std::size_t, double> sums;
        std::size_t counted = 0;
        const Matrix& q = queries.by_dim.at(d);
        for (std::size_t i = 0; i < q.rows; ++i) {
            const auto jt = judgments.find(queries.ids[i]);
            if (jt == judgments.end()) {
                report.warnings.push_back("query " + std::to_string(queries.ids[i]) +
                                          " has no judgments; skipped");
                continue;
            }
            std::vector<double> row(q.row_ptr(i), q.row_ptr(i) + d);
            const SearchResult res = search_prefix(shard, row, std::min(k_max, shard.size()));
            std::vector<std::uint64_t> ranking;
            ranking.reserve(res.hits.size());
            for (const auto& [id, score] : res.hits) ranking.push_back(id);
            for (std::size_t k : k_list) sums[k] += ndcg_at_k(ranking, jt->second, k).value;
            ++counted;
        }
        require(counted > 0, "eval_retrieval: no evaluable queries");
        for (std::size_t k : k_list) {
            report.add(task_label, variant_label, d, "ndcg@" + std::to_string(k),
                       sums[k] / static_cast<double>(counted));
        }
    }
    return report;
}

// ---- keyword spotting -----------------------------------------------------------

/// Nearest-keyword classification over precomputed embeddings: each spoken
/// query predicts the keyword with the highest prefix cosine.
inline EvalReport eval_kws_from_embeddings(const QueryEmbeddings& queries,
                                           const std::vector<int>& truth,
                                           const Matrix& keywords_full, const ModelConfig& cfg,
                                           const std::vector<std::size_t>& dims,
                                           const std::string& variant_label) {
    require(keywords_full.rows >= 2, "eval_keyword_spotting: need at least 2 keywords");
    require(!truth.empty(), "eval_keyword_spotting: no spoken queries");
    EvalReport report;
    for (std::size_t d : dims) {
        Matrix kw_prefix(keywords_full.rows, d);
        for (std::size_t k = 0; k < keywords_full.rows; ++k) {
            std::vector<double> row(keywords_full.row_ptr(k),
                                    keywords_full.row_ptr(k) + keywords_full.cols);
            const auto p = slice_prefix(row, d, cfg);
            for (std::size_t j = 0; j < d; ++j) kw_prefix.at(k, j) = p[j];
        }
        const Matrix& q = queries.by_dim.at(d);
        std::vector<int> predicted(q.rows, 0);
        for (std::size_t i = 0; i < q.rows; ++i) {
            int best = 0;
            double best_score = -1e300;
            for (std::size_t k = 0; k < kw_prefix.rows; ++k) {
                const double s = dot(q.row_ptr(i), kw_prefix.row_ptr(k), d);
                if (s > best_score) {
                    best_score = s;
                    best = static_cast<int>(k);
                }
            }
            predicted[i] = best;
        }
        const auto scores = macro_scores(truth, predicted, keywords_full.rows);
        report.add("kws", variant_label, d, "f1", scores.macro_f1);
        report.add("kws", variant_label, d, "recall", scores.macro_recall);
    }
    report.metadata["kws_averaging"] = "macro";
    return report;
}

/// Classify each spoken query as the keyword whose text embedding is most
/// similar; macro-averaged F1 and recall per dimension.
inline EvalReport eval_keyword_spotting(const Model& model,
                                        const std::vector<PairedExample>& spoken,
                                        const std::vector<std::vector<int>>& keyword_phrases,
                                        const std::vector<std::size_t>& dims, QueryMode mode,
                                        const std::string& variant_label) {
    require(keyword_phrases.size() >= 2, "eval_keyword_spotting: need at least 2 keywords");
    require(!spoken.empty(), "eval_keyword_spotting: no spoken queries");
    require(mode == QueryMode::kLateFusion || mode == QueryMode::kDual,
            "eval_keyword_spotting: keyword spotting evaluates speech paths");

    // Keyword texts, embedded promptless as retrieval targets.
    Matrix keywords(keyword_phrases.size(), model.cfg.hidden);
    for (std::size_t k = 0; k < keyword_phrases.size(); ++k) {
        const auto e = encode_text(model, keyword_phrases[k], TaskPrompt::kNone);
        for (std::size_t j = 0; j < e.size(); ++j) keywords.at(k, j) = e[j];
    }

    // Spoken queries use the transcription-retrieval prompt where prompts
    // exist; the dual path cannot be prompted.
    const QueryEmbeddings queries =
        embed_queries(model, spoken, mode, dims, TaskPrompt::kTranscription);

    std::vector<int> truth;
    truth.reserve(spoken.size());
    for (const auto& ex : spoken) {
        require(ex.intent_label >= 0, "eval_keyword_spotting: unlabeled spoken query");
        truth.push_back(ex.intent_label);
    }
    return eval_kws_from_embeddings(queries, truth, keywords, model.cfg, dims, variant_label);
}

// ---- rank analysis ---------------------------------------------------------------

struct EnergyCurve {
    std::size_t dim = 0;
    std::vector<double> cumulative_ratio;  // R[k-1] = ratio captured by top-k eigenvalues
    std::string source;
};

/// Cumulative energy ratio of the covariance spectrum of prefix embeddings:
/// R(k) = sum_{i<=k} lambda_i / sum_j lambda_j, eigenvalues descending.
/// The covariance is mean-centered by default (uncentered variant kept
/// behind the flag for comparison).
inline EnergyCurve energy_curve(const Matrix& embeddings, std::size_t dim,
                                const std::string& source = "", bool centered = true) {
    require(dim >= 1 && dim <= embeddings.cols, "energy_curve: bad dim");
    require(embeddings.rows >= dim + 1,
            "energy_curve: need at least dim+1 rows (" + std::to_string(embeddings.rows) +
                " rows for dim " + std::to_string(dim) + "); rank-deficient by construction");

    Matrix x(embeddings.rows, dim);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < dim; ++j) x.at(i, j) = embeddings.at(i, j);
    if (centered) {
        for (std::size_t j = 0; j < dim; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < x.rows; ++i) mean += x.at(i, j);
            mean /= static_cast<double>(x.rows);
            for (std::size_t i = 0; i < x.rows; ++i) x.at(i, j) -= mean;
        }
    }
    Matrix cov(dim, dim);
    const double inv = 1.0 / static_cast<double>(x.rows - 1);
    for (std::size_t a = 0; a < dim; ++a) {
        for (std::size_t b = a; b < dim; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < x.rows; ++i) s += x.at(i, a) * x.at(i, b);
            cov.at(a, b) = s * inv;
            cov.at(b, a) = s * inv;
        }
    }
    EigenSpectrum spec = sym_eigenvalues(cov);
    double total = 0.0;
    for (double& v : spec.values) {
        require(v >= -1e-9, "energy_curve: eigenvalue below -1e-9 (" + std::to_string(v) + ")");
        if (v < 0.0) v = 0.0;  // clamp tiny negatives
        total += v;
    }
    require(total > 0.0, "energy_curve: zero total variance");

    EnergyCurve curve;
    curve.dim = dim;
    curve.source = source;
    curve.cumulative_ratio.resize(dim);
    double acc = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
        acc += spec.values[k];
        curve.cumulative_ratio[k] = acc / total;
    }
    return curve;
}

/// Smallest fraction of coordinates needed to reach the requested energy
/// ratio: k*/d where k* = min{k : R(k) >= ratio}.
inline double dims_for_energy(const EnergyCurve& curve, double ratio) {
    require(ratio > 0.0 && ratio <= 1.0, "dims_for_energy: ratio must be in (0, 1]");
    for (std::size_t k = 0; k < curve.cumulative_ratio.size(); ++k) {
        if (curve.cumulative_ratio[k] >= ratio - 1e-12) {
            return static_cast<double>(k + 1) / static_cast<double>(curve.dim);
        }
    }
    return 1.0;
}

// ---- few-shot intent detection ---------------------------------------------------

struct IntentEvalConfig {
    std::vector<std::size_t> n_shots{0, 1, 2, 4, 8, 16};
    std::vector<std::size_t> dims;
    FewShotConfig fewshot;
    TaskPrompt speech_prompt = TaskPrompt::kTranscription;
};

/// Sweep shots and dimensions: stage-1 + stage-2 per cell, macro F1 and
/// recall on the held-out test split. Shot and test splits are disjoint by
/// construction (leading examples of each class are the shot pool).
inline EvalReport eval_intent_fewshot(const Model& base,
                                      const std::vector<PairedExample>& intent_examples,
                                      std::size_t classes,
                                      const std::vector<std::vector<int>>& label_tokens,
                                      const IntentEvalConfig& cfg) {
    require(classes >= 2, "eval_intent_fewshot: need at least 2 intent classes");
    require(label_tokens.size() == classes, "eval_intent_fewshot: label token mismatch");

    const std::size_t max_n =
        *std::max_element(cfg.n_shots.begin(), cfg.n_shots.end());
    std::map<int, std::vector<const PairedExample*>> by_class;
    for (const auto& ex : intent_examples) {
        require(ex.intent_label >= 0 && static_cast<std::size_t>(ex.intent_label) < classes,
                "eval_intent_fewshot: bad intent label");
        by_class[ex.intent_label].push_back(&ex);
    }
    for (std::size_t c = 0; c < classes; ++c) {
        const auto it = by_class.find(static_cast<int>(c));
        require(it != by_class.end() && it->second.size() > max_n,
                "eval_intent_fewshot: class " + std::to_string(c) +
                    " lacks examples for the requested n-shot sweep");
    }

    std::vector<const PairedExample*> test;
    std::vector<int> truth;
    for (std::size_t c = 0; c < classes; ++c) {
        const auto& pool = by_class[static_cast<int>(c)];
        for (std::size_t i = max_n; i < pool.size(); ++i) {
            test.push_back(pool[i]);
            truth.push_back(static_cast<int>(c));
        }
    }

    // Label prototypes for zero-shot, per dimension.
    std::map<std::size_t, Matrix> prototypes;
    for (std::size_t d : cfg.dims) {
        Matrix p(classes, d);
        for (std::size_t c = 0; c < classes; ++c) {
            const auto full = encode_text(base, label_tokens[c], TaskPrompt::kNone);
            const auto pref = slice_prefix(full, d, base.cfg);
            for (std::size_t j = 0; j < d; ++j) p.at(c, j) = pref[j];
        }
        prototypes.emplace(d, std::move(p));
    }

    EvalReport report;
    for (std::size_t n : cfg.n_shots) {
        std::vector<const PairedExample*> shots;
        for (std::size_t c = 0; c < classes; ++c) {
            const auto& pool = by_class[static_cast<int>(c)];
            for (std::size_t i = 0; i < n; ++i) shots.push_back(pool[i]);
        }
        for (std::size_t d : cfg.dims) {
            FewShotConfig fs = cfg.fewshot;
            fs.n_shot = n;
            const IntentClassifier clf =
                setfit_train(base, shots, classes, d, fs, prototypes.at(d), cfg.speech_prompt);
            std::vector<int> predicted;
            predicted.reserve(test.size());
            for (const PairedExample* ex : test) predicted.push_back(clf.predict(ex->frames));
            const auto scores = macro_scores(truth, predicted, classes);
            report.add("intent", "late-fusion", d, "f1@n=" + std::to_string(n), scores.macro_f1);
            report.add("intent", "late-fusion", d, "recall@n=" + std::to_string(n),
                       scores.macro_recall);
        }
    }
    report.metadata["intent_averaging"] = "macro";
    report.metadata["intent_test_per_class"] =
        std::to_string(test.size() / std::max<std::size_t>(classes, 1));
    return report;
}

}  // namespace matz
