#pragma once

#include <map>
#include <string>
#include <vector>

#include "matz/config.hpp"
#include "matz/evalsuite.hpp"

namespace matz {

/// Everything the end-to-end run produces, in memory. The CLI mirrors the
/// same steps onto disk; the trend checks below read only from here.
struct PipelineResult {
    CorpusBundle corpus;
    std::map<std::string, Model> models;       // by variant name
    std::map<std::string, TrainResult> curves;  // by variant name
    EvalReport retrieval;  // doc retrieval, all variants + pipelined
    EvalReport kws;
    EvalReport intent;
    EvalReport rank;                  // dims_for_energy fractions
    std::vector<EnergyCurve> energy;  // per (source, matryoshka dim)
    double clean_cps = 0.0, degraded_cps = 0.0;
    double clean_db = 0.0, degraded_db = 0.0;
};

namespace detail {

inline Model train_variant(const RunConfig& cfg, Variant variant,
                           const std::vector<PairedExample>& train_split,
                           const ParamSet* text_params, TrainResult* curve_out) {
    Model model = make_model(cfg.model, variant);
    if (text_params) {
        for (auto& [name, value] : model.params) {
            if (name.rfind("text.", 0) == 0) value = text_params->at(name);
        }
    }
    std::vector<const PairedExample*> data;
    data.reserve(train_split.size());
    for (const auto& ex : train_split) data.push_back(&ex);
    LossConfig loss = cfg.loss_config();
    if (variant == Variant::kDualAlignment) loss.objective = Objective::kQueryAlignment;
    TrainResult curve = train(model, data, cfg.train_for(variant), loss);
    if (curve_out) *curve_out = std::move(curve);
    return model;
}

inline QueryMode query_mode_for(const std::string& label) {
    if (label == "text-only") return QueryMode::kTextQuery;
    if (label == "pipelined") return QueryMode::kPipelined;
    if (label == "late-fusion") return QueryMode::kLateFusion;
    if (label == "dual-retrieval" || label == "dual-alignment") return QueryMode::kDual;
    throw std::invalid_argument("unknown evaluation variant: " + label);
}

}  // namespace detail

/// Document-retrieval evaluation of one variant label over the eval split.
/// "pipelined" is the text-only model fed corrupted transcriptions.
inline EvalReport eval_retrieval_variant(const RunConfig& cfg, const CorpusBundle& corpus,
                                         const Model& query_model, const Model& text_model,
                                         const std::string& label) {
    const QueryMode mode = detail::query_mode_for(label);
    const PipelineNoise noise{cfg.pipeline_corruption, cfg.data.seed ^ 0x9e3779b9ULL};
    const TaskPrompt prompt = TaskPrompt::kDocument;
    const QueryEmbeddings queries =
        embed_queries(query_model, corpus.eval, mode, cfg.model.dims, prompt, noise);
    const auto [doc_ids, docs] = embed_documents(text_model, corpus.eval);
    const Judgments judgments = corpus_judgments(corpus.eval);
    return eval_retrieval(queries, doc_ids, docs, judgments, cfg.model.dims, cfg.k_list, label);
}

/// Run the whole chain: generate, train the four variants, evaluate
/// retrieval (plus the pipelined baseline), keyword spotting, few-shot
/// intents, and the rank analysis.
inline PipelineResult run_pipeline(const RunConfig& cfg, std::ostream* log = nullptr) {
    PipelineResult out;
    auto note = [&](const std::string& msg) {
        if (log) (*log) << "[pipeline] " << msg << "\n" << std::flush;
    };

    note("generating corpus");
    out.corpus = gen_corpus(cfg.data);

    note("training text-only");
    out.models["text-only"] = detail::train_variant(cfg, Variant::kTextOnly, out.corpus.train,
                                                    nullptr, &out.curves["text-only"]);
    const ParamSet& text_params = out.models.at("text-only").params;

    note("training late-fusion");
    out.models["late-fusion"] = detail::train_variant(
        cfg, Variant::kLateFusion, out.corpus.train, &text_params, &out.curves["late-fusion"]);
    note("training dual-retrieval");
    out.models["dual-retrieval"] =
        detail::train_variant(cfg, Variant::kDualRetrieval, out.corpus.train, &text_params,
                              &out.curves["dual-retrieval"]);
    note("training dual-alignment");
    out.models["dual-alignment"] =
        detail::train_variant(cfg, Variant::kDualAlignment, out.corpus.train, &text_params,
                              &out.curves["dual-alignment"]);

    note("evaluating document retrieval");
    const Model& text_model = out.models.at("text-only");
    for (const std::string label :
         {"text-only", "pipelined", "late-fusion", "dual-retrieval", "dual-alignment"}) {
        const Model& qm = label == "pipelined" ? text_model : out.models.at(label);
        out.retrieval.merge(eval_retrieval_variant(cfg, out.corpus, qm, text_model, label));
    }
    out.retrieval.sort();

    note("evaluating keyword spotting");
    for (const std::string label : {"late-fusion", "dual-retrieval", "dual-alignment"}) {
        const QueryMode mode =
            label == "late-fusion" ? QueryMode::kLateFusion : QueryMode::kDual;
        out.kws.merge(eval_keyword_spotting(out.models.at(label), out.corpus.kws,
                                            out.corpus.universe.keyword_phrases, cfg.model.dims,
                                            mode, label));
    }
    out.kws.sort();

    note("evaluating few-shot intents");
    {
        std::vector<std::vector<int>> labels;
        for (std::size_t c = 0; c < cfg.data.intent_classes; ++c)
            labels.push_back(out.corpus.universe.intent_label_tokens(c));
        IntentEvalConfig icfg;
        icfg.n_shots = cfg.n_shots;
        icfg.dims = cfg.model.dims;
        icfg.fewshot = cfg.fewshot;
        out.intent = eval_intent_fewshot(out.models.at("late-fusion"), out.corpus.intent,
                                         cfg.data.intent_classes, labels, icfg);
        out.intent.sort();
    }

    note("rank analysis");
    {
        const auto [doc_ids, docs] = embed_documents(text_model, out.corpus.eval);
        const QueryEmbeddings lf_queries =
            embed_queries(out.models.at("late-fusion"), out.corpus.eval, QueryMode::kLateFusion,
                          {cfg.model.hidden}, TaskPrompt::kDocument);
        const Matrix& queries_full = lf_queries.by_dim.at(cfg.model.hidden);
        Matrix pooled(docs.rows + queries_full.rows, cfg.model.hidden);
        for (std::size_t i = 0; i < docs.rows; ++i)
            for (std::size_t j = 0; j < docs.cols; ++j) pooled.at(i, j) = docs.at(i, j);
        for (std::size_t i = 0; i < queries_full.rows; ++i)
            for (std::size_t j = 0; j < queries_full.cols; ++j)
                pooled.at(docs.rows + i, j) = queries_full.at(i, j);

        const std::vector<std::pair<std::string, const Matrix*>> sources = {
            {"documents", &docs}, {"queries", &queries_full}, {"pooled", &pooled}};
        for (const auto& [source, mat] : sources) {
            for (std::size_t d : cfg.model.dims) {
                EnergyCurve curve = energy_curve(*mat, d, source);
                for (double ratio : {0.5, 0.9, 0.99, 1.0}) {
                    char metric[32];
                    std::snprintf(metric, sizeof(metric), "frac@%g", ratio);
                    out.rank.add("rank", source, d, metric, dims_for_energy(curve, ratio));
                }
                out.energy.push_back(std::move(curve));
            }
        }
        out.rank.metadata["covariance"] = "mean-centered";
        out.rank.sort();
    }

    note("speech-quality contrast");
    {
        CorpusConfig tiny = cfg.data;
        tiny.examples_per_topic = std::min<std::size_t>(cfg.data.examples_per_topic, 6);
        tiny.eval_per_topic = 1;
        tiny.intent_examples_per_class = 2;
        tiny.keyword_train_per = 1;
        tiny.keyword_eval_per = 1;
        tiny.quality_filter = false;

        CorpusConfig degraded = tiny;
        degraded.profile.hesitation = std::max(1.6, tiny.profile.hesitation);
        degraded.profile.volume_db = tiny.profile.volume_db - 25.0;

        auto stats = [](const CorpusConfig& c) {
            const CorpusBundle bundle = gen_corpus(c);
            double cps = 0.0, db = 0.0;
            for (const auto& ex : bundle.train) {
                cps += chars_per_second(token_text(ex.transcription), ex.duration_s);
                db += mean_volume_db(ex.frames);
            }
            const double n = static_cast<double>(bundle.train.size());
            return std::pair<double, double>{cps / n, db / n};
        };
        std::tie(out.clean_cps, out.clean_db) = stats(tiny);
        std::tie(out.degraded_cps, out.degraded_db) = stats(degraded);
    }
    return out;
}

// ---- trend checks --------------------------------------------------------------

struct FindingCheck {
    std::string id;
    bool pass = false;
    std::string detail;
};

namespace detail {

inline bool nearly_nondecreasing(const std::vector<double>& xs, double slack,
                                 std::size_t max_inversions) {
    std::size_t inversions = 0;
    for (std::size_t i = 1; i < xs.size(); ++i) {
        if (xs[i] + 1e-12 < xs[i - 1]) {
            if (xs[i - 1] - xs[i] > slack) return false;
            ++inversions;
        }
    }
    return inversions <= max_inversions;
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace detail

/// The five paper findings as concrete trend checks over the pipeline
/// artifacts. These are the same comparisons the acceptance suite gates on.
inline std::vector<FindingCheck> check_findings(const PipelineResult& r, const RunConfig& cfg) {
    using detail::fmt;
    std::vector<FindingCheck> checks;
    const auto& dims = cfg.model.dims;
    const std::size_t d_max = dims.back();
    const std::size_t d_min = dims.front();

    {  // Finding 1: late fusion beats the dual architectures on documents.
        FindingCheck c{"finding1-late-fusion-best", true, ""};
        const double lf_full = r.retrieval.get("doc-retrieval", "late-fusion", d_max, "ndcg@5");
        c.pass = lf_full >= 0.90;
        c.detail = "late-fusion ndcg@5@" + std::to_string(d_max) + "=" + fmt(lf_full);
        for (std::size_t d : dims) {
            const double lf = r.retrieval.get("doc-retrieval", "late-fusion", d, "ndcg@5");
            const double dr = r.retrieval.get("doc-retrieval", "dual-retrieval", d, "ndcg@5");
            if (lf - dr < 0.05) c.pass = false;
            c.detail += " margin@" + std::to_string(d) + "=" + fmt(lf - dr);
        }
        checks.push_back(std::move(c));
    }
    {  // Pipelined degradation: direct speech beats the corrupted cascade.
        FindingCheck c{"pipelined-degradation", true, ""};
        for (std::size_t d : dims) {
            const double lf = r.retrieval.get("doc-retrieval", "late-fusion", d, "ndcg@5");
            const double pl = r.retrieval.get("doc-retrieval", "pipelined", d, "ndcg@5");
            if (!(pl < lf)) c.pass = false;
            c.detail += "d" + std::to_string(d) + ":" + fmt(pl) + "<" + fmt(lf) + " ";
        }
        checks.push_back(std::move(c));
    }
    {  // Finding 2: duals hold up on transcription-level keyword spotting.
        FindingCheck c{"finding2-dual-kws", true, ""};
        for (const std::string label : {"dual-retrieval", "dual-alignment"}) {
            const double f1 = r.kws.get("kws", label, d_max, "f1");
            if (f1 < 0.70) c.pass = false;
            c.detail += label + " f1@" + std::to_string(d_max) + "=" + fmt(f1) + " ";
            for (std::size_t d : dims) {
                const double lf = r.retrieval.get("doc-retrieval", "late-fusion", d, "ndcg@5");
                const double dual = r.retrieval.get("doc-retrieval", label, d, "ndcg@5");
                if (lf - dual < 0.05) c.pass = false;
            }
        }
        checks.push_back(std::move(c));
    }
    {  // Matryoshka monotonicity of every trained model's retrieval column.
        FindingCheck c{"matryoshka-monotonicity", true, ""};
        for (const std::string label :
             {"text-only", "pipelined", "late-fusion", "dual-retrieval", "dual-alignment"}) {
            std::vector<double> col;
            for (std::size_t d : dims)
                col.push_back(r.retrieval.get("doc-retrieval", label, d, "ndcg@5"));
            const bool ok = detail::nearly_nondecreasing(col, 0.02, 1);
            if (!ok) c.pass = false;
            c.detail += label + (ok ? " ok " : " violated ");
        }
        checks.push_back(std::move(c));
    }
    {  // Finding 3: shots help, and small dims catch up with more shots.
        FindingCheck c{"finding3-fewshot", true, ""};
        std::vector<double> at_full;
        for (std::size_t n : cfg.n_shots)
            at_full.push_back(
                r.intent.get("intent", "late-fusion", d_max, "recall@n=" + std::to_string(n)));
        if (!detail::nearly_nondecreasing(at_full, 0.02, 1)) c.pass = false;
        const double r16 = at_full.back();
        if (r16 < 0.90) c.pass = false;
        const double gap1 =
            r.intent.get("intent", "late-fusion", d_max, "recall@n=1") -
            r.intent.get("intent", "late-fusion", d_min, "recall@n=1");
        const double gap16 =
            r.intent.get("intent", "late-fusion", d_max, "recall@n=16") -
            r.intent.get("intent", "late-fusion", d_min, "recall@n=16");
        if (!(gap16 < gap1)) c.pass = false;
        c.detail = "recall@16=" + fmt(r16) + " gap@1=" + fmt(gap1) + " gap@16=" + fmt(gap16);
        checks.push_back(std::move(c));
    }
    {  // Finding 4: the degraded profile shows both quality proxies.
        FindingCheck c{"finding4-speech-quality", true, ""};
        if (!(r.degraded_cps < r.clean_cps)) c.pass = false;
        if (!(r.degraded_db < r.clean_db - 20.0)) c.pass = false;
        c.detail = "cps " + fmt(r.degraded_cps) + "<" + fmt(r.clean_cps) + ", dB " +
                   fmt(r.degraded_db) + "<" + fmt(r.clean_db);
        checks.push_back(std::move(c));
    }
    {  // Finding 5: larger Matryoshka widths are relatively lower rank.
        FindingCheck c{"finding5-rank", true, ""};
        const double frac_small = r.rank.get("rank", "documents", d_min, "frac@1");
        const double frac_large = r.rank.get("rank", "documents", d_max, "frac@1");
        if (!(frac_large <= frac_small)) c.pass = false;
        for (const auto& curve : r.energy) {
            for (std::size_t k = 1; k < curve.cumulative_ratio.size(); ++k) {
                if (curve.cumulative_ratio[k] + 1e-12 < curve.cumulative_ratio[k - 1])
                    c.pass = false;
            }
            if (std::abs(curve.cumulative_ratio.back() - 1.0) > 1e-9) c.pass = false;
        }
        c.detail = "frac@1.0 documents: d" + std::to_string(d_min) + "=" + fmt(frac_small) +
                   " d" + std::to_string(d_max) + "=" + fmt(frac_large);
        checks.push_back(std::move(c));
    }
    return checks;
}

inline nlohmann::json findings_to_json(const std::vector<FindingCheck>& checks) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& c : checks) {
        out.push_back({{"id", c.id}, {"pass", c.pass}, {"detail", c.detail}});
    }
    return out;
}

inline std::string findings_to_text(const std::vector<FindingCheck>& checks) {
    std::string out;
    for (const auto& c : checks) {
        out += (c.pass ? "[PASS] " : "[FAIL] ") + c.id + "  " + c.detail + "\n";
    }
    return out;
}

}  // namespace matz
