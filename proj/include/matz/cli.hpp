#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "matz/config.hpp"
#include "matz/corpus_io.hpp"
#include "matz/findings.hpp"
#include "matz/index.hpp"
#include "matz/io.hpp"

namespace matz::cli {

namespace fs = std::filesystem;

// ---- embeddings container ("MATEMB1") ----------------------------------------

inline constexpr char kEmbeddingsMagic[] = "MATEMB1";

struct EmbeddingsFile {
    std::vector<std::uint64_t> ids;
    Matrix vectors;
};

inline std::vector<std::uint8_t> serialize_embeddings(const EmbeddingsFile& e) {
    ByteWriter w;
    w.str(kEmbeddingsMagic);
    w.u32(1);
    w.u64(e.vectors.rows);
    w.u64(e.vectors.cols);
    for (std::uint64_t id : e.ids) w.u64(id);
    for (double v : e.vectors.data) w.f64(v);
    return w.take();
}

inline EmbeddingsFile deserialize_embeddings(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    if (r.str(7) != kEmbeddingsMagic) throw std::runtime_error("embeddings: bad magic");
    if (r.u32() != 1) throw std::runtime_error("embeddings: unsupported version");
    EmbeddingsFile e;
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    e.ids.resize(rows);
    for (auto& id : e.ids) id = r.u64();
    e.vectors = Matrix(rows, cols);
    for (double& v : e.vectors.data) v = r.f64();
    if (r.remaining() != 0) throw std::runtime_error("embeddings: trailing bytes");
    return e;
}

// ---- run directory and manifests ----------------------------------------------

struct RunContext {
    RunConfig cfg;
    fs::path run_dir;
    bool force = false;

    std::string path(const std::string& rel) const { return (run_dir / rel).string(); }
};

inline void write_manifest(const RunContext& ctx, const std::string& command,
                           const std::vector<std::string>& inputs,
                           const std::vector<std::string>& outputs) {
    nlohmann::json m;
    m["schema"] = "matz-manifest";
    m["version"] = 1;
    m["command"] = command;
    m["config_hash"] = ctx.cfg.hash();
    nlohmann::json in_j = nlohmann::json::object();
    for (const auto& rel : inputs) in_j[rel] = sha256_hex(read_file_bytes(ctx.path(rel)));
    nlohmann::json out_j = nlohmann::json::object();
    for (const auto& rel : outputs) out_j[rel] = sha256_hex(read_file_bytes(ctx.path(rel)));
    m["inputs"] = in_j;
    m["outputs"] = out_j;
    write_file_text(ctx.path("manifests/" + command + ".json"), m.dump(2) + "\n");
}

/// Downstream commands refuse to run over artifacts produced under a
/// different configuration unless forced.
inline void require_upstream(const RunContext& ctx, const std::string& command) {
    const std::string manifest_path = ctx.path("manifests/" + command + ".json");
    if (!fs::exists(manifest_path)) {
        throw std::runtime_error("missing upstream artifact: run `matz " + command +
                                 "` first (no manifest at " + manifest_path + ")");
    }
    const nlohmann::json m = nlohmann::json::parse(read_file_text(manifest_path));
    const std::string recorded = m.value("config_hash", "");
    if (recorded != ctx.cfg.hash() && !ctx.force) {
        throw std::runtime_error("stale upstream: `" + command +
                                 "` ran under config hash " + recorded.substr(0, 12) +
                                 " but current config is " + ctx.cfg.hash().substr(0, 12) +
                                 "; rerun it or pass --force");
    }
}

// ---- shared helpers --------------------------------------------------------------

inline Model model_from_checkpoint(const RunContext& ctx, Variant variant) {
    const std::string rel = "checkpoints/" + variant_name(variant) + ".matzoo";
    Model model = make_model(ctx.cfg.model, variant);
    ParamSet loaded = load_checkpoint(ctx.path(rel));
    require(loaded.size() == model.params.size(),
            "checkpoint " + rel + " does not match the configured architecture");
    for (auto& [name, value] : model.params) {
        auto it = loaded.find(name);
        require(it != loaded.end(), "checkpoint " + rel + " missing parameter " + name);
        require(it->second.same_shape(value),
                "checkpoint " + rel + " has wrong shape for " + name);
        value = std::move(it->second);
    }
    return model;
}

inline std::vector<PairedExample> load_split(const RunContext& ctx, const std::string& split) {
    return load_corpus(ctx.path("corpus/" + split + ".jsonl")).examples;
}

inline bool checkpoint_exists(const RunContext& ctx, const std::string& variant) {
    return fs::exists(ctx.path("checkpoints/" + variant + ".matzoo"));
}

inline std::string retrieval_plot_tsv(const EvalReport& report,
                                      const std::vector<std::size_t>& dims) {
    std::string out = "variant\tdim\tndcg@5\tndcg@10\n";
    std::vector<std::string> variants;
    for (const auto& r : report.rows) {
        if (std::find(variants.begin(), variants.end(), r.variant) == variants.end())
            variants.push_back(r.variant);
    }
    char buf[64];
    for (const auto& v : variants) {
        for (std::size_t d : dims) {
            if (!report.has("doc-retrieval", v, d, "ndcg@5")) continue;
            std::snprintf(buf, sizeof(buf), "%s\t%zu\t%.6f\t%.6f\n", v.c_str(), d,
                          report.get("doc-retrieval", v, d, "ndcg@5"),
                          report.get("doc-retrieval", v, d, "ndcg@10"));
            out += buf;
        }
    }
    return out;
}

// ---- command implementations -----------------------------------------------------

inline int cmd_gen(const RunContext& ctx) {
    const CorpusBundle bundle = gen_corpus(ctx.cfg.data);
    save_corpus(ctx.path("corpus/train.jsonl"), bundle.train, bundle.universe, "train");
    save_corpus(ctx.path("corpus/eval.jsonl"), bundle.eval, bundle.universe, "eval");
    save_corpus(ctx.path("corpus/kws.jsonl"), bundle.kws, bundle.universe, "kws");
    save_corpus(ctx.path("corpus/intent.jsonl"), bundle.intent, bundle.universe, "intent");
    std::string rejected;
    for (const auto& [id, rule] : bundle.rejected) {
        rejected += nlohmann::json{{"id", id}, {"rule", rule}}.dump();
        rejected.push_back('\n');
    }
    write_file_text(ctx.path("corpus/rejected.jsonl"), rejected);
    write_manifest(ctx, "gen", {},
                   {"corpus/train.jsonl", "corpus/eval.jsonl", "corpus/kws.jsonl",
                    "corpus/intent.jsonl", "corpus/rejected.jsonl"});
    std::cerr << "gen: " << bundle.train.size() << " train / " << bundle.eval.size()
              << " eval examples, " << bundle.rejected.size() << " rejected\n";
    return 0;
}

inline int cmd_train(const RunContext& ctx) {
    require_upstream(ctx, "gen");
    const Variant variant = ctx.cfg.variant;
    const auto train_split = load_split(ctx, "train");

    Model model = make_model(ctx.cfg.model, variant);
    std::vector<std::string> inputs{"corpus/train.jsonl"};
    if (variant != Variant::kTextOnly) {
        if (!checkpoint_exists(ctx, "text-only")) {
            throw std::runtime_error(
                "missing upstream artifact: train the text-only variant first (its frozen "
                "text stack seeds every speech variant)");
        }
        inputs.push_back("checkpoints/text-only.matzoo");
        const ParamSet text_params = load_checkpoint(ctx.path("checkpoints/text-only.matzoo"));
        for (auto& [name, value] : model.params) {
            if (name.rfind("text.", 0) == 0) value = text_params.at(name);
        }
    }

    std::vector<const PairedExample*> data;
    for (const auto& ex : train_split) data.push_back(&ex);
    LossConfig loss = ctx.cfg.loss_config();
    if (variant == Variant::kDualAlignment) loss.objective = Objective::kQueryAlignment;
    const TrainResult result = train(model, data, ctx.cfg.train_for(variant), loss);

    const std::string ckpt = "checkpoints/" + variant_name(variant) + ".matzoo";
    const std::string curve = "plots/loss_" + variant_name(variant) + ".tsv";
    save_checkpoint(ctx.path(ckpt), model.params);
    write_file_text(ctx.path(curve), curve_to_tsv(result.curve));
    write_manifest(ctx, "train-" + variant_name(variant), inputs, {ckpt, curve});
    std::cerr << "train: " << variant_name(variant) << " finished " << result.steps
              << " steps, final loss " << (result.curve.empty() ? 0.0 : result.curve.back().total)
              << "\n";
    return 0;
}

inline int cmd_embed(const RunContext& ctx) {
    require_upstream(ctx, "gen");
    require_upstream(ctx, "train-" + variant_name(ctx.cfg.variant));
    const Model model = model_from_checkpoint(ctx, ctx.cfg.variant);
    const auto eval_split = load_split(ctx, "eval");
    const std::string vname = variant_name(ctx.cfg.variant);

    const auto [doc_ids, docs] = embed_documents(model, eval_split);
    EmbeddingsFile doc_file{doc_ids, docs};
    const std::string doc_rel = "embeddings/" + vname + "_docs.matemb";
    write_file_bytes(ctx.path(doc_rel), serialize_embeddings(doc_file));

    QueryMode mode = QueryMode::kTextQuery;
    if (ctx.cfg.variant == Variant::kLateFusion) mode = QueryMode::kLateFusion;
    if (ctx.cfg.variant == Variant::kDualRetrieval ||
        ctx.cfg.variant == Variant::kDualAlignment)
        mode = QueryMode::kDual;
    const QueryEmbeddings queries =
        embed_queries(model, eval_split, mode, ctx.cfg.model.dims, TaskPrompt::kDocument);

    std::vector<std::string> outputs{doc_rel};
    for (std::size_t d : ctx.cfg.model.dims) {
        EmbeddingsFile qf{queries.ids, queries.by_dim.at(d)};
        const std::string rel = "embeddings/" + vname + "_queries_d" + std::to_string(d) +
                                ".matemb";
        write_file_bytes(ctx.path(rel), serialize_embeddings(qf));
        outputs.push_back(rel);
    }
    write_manifest(ctx, "embed",
                   {"corpus/eval.jsonl", "checkpoints/" + vname + ".matzoo"}, outputs);
    std::cerr << "embed: " << eval_split.size() << " examples embedded for " << vname << "\n";
    return 0;
}

inline int cmd_index(const RunContext& ctx) {
    require_upstream(ctx, "embed");
    const std::string vname = variant_name(ctx.cfg.variant);
    const std::string doc_rel = "embeddings/" + vname + "_docs.matemb";
    const EmbeddingsFile docs = deserialize_embeddings(read_file_bytes(ctx.path(doc_rel)));
    BuildStats stats;
    // Timestamp pinned to zero: reruns must produce byte-identical shards.
    const IndexShard shard = build_shard(docs.ids, docs.vectors, ctx.cfg.model.dims, 0, &stats);
    const std::string rel = "index/" + vname + ".matidx";
    save_shard(ctx.path(rel), shard);
    write_manifest(ctx, "index", {doc_rel}, {rel});
    std::cerr << "index: " << shard.size() << " docs, " << stats.docs_per_second
              << " docs/s quantization throughput";
    if (stats.clamped_values > 0)
        std::cerr << " (warning: " << stats.clamped_values << " values clamped to half range)";
    std::cerr << "\n";
    return 0;
}

struct SearchArgs {
    std::size_t query_row = 0;
    std::size_t dim = 0;
    std::size_t k = 10;
};

inline int cmd_search(const RunContext& ctx, const SearchArgs& args) {
    require_upstream(ctx, "index");
    const std::string vname = variant_name(ctx.cfg.variant);
    const IndexShard shard = load_shard(ctx.path("index/" + vname + ".matidx"));
    const std::size_t dim = args.dim == 0 ? ctx.cfg.model.dims.back() : args.dim;
    const std::string q_rel = "embeddings/" + vname + "_queries_d" + std::to_string(dim) +
                              ".matemb";
    const EmbeddingsFile queries = deserialize_embeddings(read_file_bytes(ctx.path(q_rel)));
    require(args.query_row < queries.vectors.rows, "search: query row out of range");
    std::vector<double> q(queries.vectors.row_ptr(args.query_row),
                          queries.vectors.row_ptr(args.query_row) + queries.vectors.cols);
    const SearchResult res = search_prefix(shard, q, args.k);

    nlohmann::json out;
    out["query_id"] = queries.ids[args.query_row];
    out["dim"] = dim;
    nlohmann::json hits = nlohmann::json::array();
    for (const auto& [id, score] : res.hits) hits.push_back({{"doc_id", id}, {"score", score}});
    out["hits"] = hits;
    write_file_text(ctx.path("reports/search.jsonl"), out.dump() + "\n");
    write_manifest(ctx, "search", {"index/" + vname + ".matidx", q_rel}, {"reports/search.jsonl"});
    std::cout << out.dump() << "\n";
    return 0;
}

inline int cmd_eval_retrieval(const RunContext& ctx) {
    require_upstream(ctx, "gen");
    CorpusBundle corpus;
    corpus.eval = load_split(ctx, "eval");

    require(checkpoint_exists(ctx, "text-only"),
            "eval-retrieval: needs at least the text-only checkpoint");
    const Model text_model = model_from_checkpoint(ctx, Variant::kTextOnly);

    EvalReport report;
    std::vector<std::string> inputs{"corpus/eval.jsonl", "checkpoints/text-only.matzoo"};
    report.merge(eval_retrieval_variant(ctx.cfg, corpus, text_model, text_model, "text-only"));
    report.merge(eval_retrieval_variant(ctx.cfg, corpus, text_model, text_model, "pipelined"));
    for (const std::string label : {"late-fusion", "dual-retrieval", "dual-alignment"}) {
        if (!checkpoint_exists(ctx, label)) continue;
        const Model m = model_from_checkpoint(ctx, variant_from_name(label));
        report.merge(eval_retrieval_variant(ctx.cfg, corpus, m, text_model, label));
        inputs.push_back("checkpoints/" + label + ".matzoo");
    }
    report.sort();
    report.metadata["dataset"] = "eval";
    report.metadata["pipeline_corruption"] = std::to_string(ctx.cfg.pipeline_corruption);
    write_file_text(ctx.path("reports/retrieval.jsonl"), report_to_jsonl(report));
    write_file_text(ctx.path("plots/retrieval.tsv"),
                    retrieval_plot_tsv(report, ctx.cfg.model.dims));
    write_manifest(ctx, "eval-retrieval", inputs,
                   {"reports/retrieval.jsonl", "plots/retrieval.tsv"});
    std::cerr << "eval-retrieval: " << report.rows.size() << " cells\n";
    return 0;
}

inline int cmd_eval_kws(const RunContext& ctx) {
    require_upstream(ctx, "gen");
    const auto kws_split = load_split(ctx, "kws");
    const auto header = load_corpus(ctx.path("corpus/kws.jsonl")).header;
    const auto phrases = header.at("keyword_phrases").get<std::vector<std::vector<int>>>();

    EvalReport report;
    std::vector<std::string> inputs{"corpus/kws.jsonl"};
    for (const std::string label : {"late-fusion", "dual-retrieval", "dual-alignment"}) {
        if (!checkpoint_exists(ctx, label)) continue;
        const Model m = model_from_checkpoint(ctx, variant_from_name(label));
        const QueryMode mode =
            label == "late-fusion" ? QueryMode::kLateFusion : QueryMode::kDual;
        report.merge(
            eval_keyword_spotting(m, kws_split, phrases, ctx.cfg.model.dims, mode, label));
        inputs.push_back("checkpoints/" + label + ".matzoo");
    }
    require(!report.rows.empty(), "eval-kws: no speech checkpoints found");
    report.sort();
    std::string tsv = "variant\tdim\tf1\trecall\n";
    char buf[96];
    for (const std::string label : {"late-fusion", "dual-retrieval", "dual-alignment"}) {
        for (std::size_t d : ctx.cfg.model.dims) {
            if (!report.has("kws", label, d, "f1")) continue;
            std::snprintf(buf, sizeof(buf), "%s\t%zu\t%.6f\t%.6f\n", label.c_str(), d,
                          report.get("kws", label, d, "f1"),
                          report.get("kws", label, d, "recall"));
            tsv += buf;
        }
    }
    write_file_text(ctx.path("reports/kws.jsonl"), report_to_jsonl(report));
    write_file_text(ctx.path("plots/kws.tsv"), tsv);
    write_manifest(ctx, "eval-kws", inputs, {"reports/kws.jsonl", "plots/kws.tsv"});
    std::cerr << "eval-kws: " << report.rows.size() << " cells\n";
    return 0;
}

inline int cmd_eval_intent(const RunContext& ctx) {
    require_upstream(ctx, "gen");
    require_upstream(ctx, "train-late-fusion");
    const auto intent_split = load_split(ctx, "intent");
    const auto header = load_corpus(ctx.path("corpus/intent.jsonl")).header;
    const auto label_tokens = header.at("label_tokens").get<std::vector<std::vector<int>>>();
    const Model lf = model_from_checkpoint(ctx, Variant::kLateFusion);

    IntentEvalConfig icfg;
    icfg.n_shots = ctx.cfg.n_shots;
    icfg.dims = ctx.cfg.model.dims;
    icfg.fewshot = ctx.cfg.fewshot;
    EvalReport report = eval_intent_fewshot(lf, intent_split, label_tokens.size(), label_tokens,
                                            icfg);
    report.sort();

    std::string tsv = "n";
    for (std::size_t d : ctx.cfg.model.dims) tsv += "\trecall_d" + std::to_string(d);
    tsv += "\n";
    char buf[32];
    for (std::size_t n : ctx.cfg.n_shots) {
        tsv += std::to_string(n);
        for (std::size_t d : ctx.cfg.model.dims) {
            std::snprintf(buf, sizeof(buf), "\t%.6f",
                          report.get("intent", "late-fusion", d,
                                     "recall@n=" + std::to_string(n)));
            tsv += buf;
        }
        tsv += "\n";
    }
    write_file_text(ctx.path("reports/intent.jsonl"), report_to_jsonl(report));
    write_file_text(ctx.path("plots/intent_recall.tsv"), tsv);
    write_manifest(ctx, "eval-intent",
                   {"corpus/intent.jsonl", "checkpoints/late-fusion.matzoo"},
                   {"reports/intent.jsonl", "plots/intent_recall.tsv"});
    std::cerr << "eval-intent: " << report.rows.size() << " cells\n";
    return 0;
}

inline int cmd_analyze_rank(const RunContext& ctx) {
    require_upstream(ctx, "gen");
    require_upstream(ctx, "train-late-fusion");
    const auto eval_split = load_split(ctx, "eval");
    const Model lf = model_from_checkpoint(ctx, Variant::kLateFusion);

    const auto [doc_ids, docs] = embed_documents(lf, eval_split);
    const QueryEmbeddings lf_q = embed_queries(lf, eval_split, QueryMode::kLateFusion,
                                               {ctx.cfg.model.hidden}, TaskPrompt::kDocument);
    const Matrix& queries = lf_q.by_dim.at(ctx.cfg.model.hidden);
    Matrix pooled(docs.rows + queries.rows, ctx.cfg.model.hidden);
    for (std::size_t i = 0; i < docs.rows; ++i)
        for (std::size_t j = 0; j < docs.cols; ++j) pooled.at(i, j) = docs.at(i, j);
    for (std::size_t i = 0; i < queries.rows; ++i)
        for (std::size_t j = 0; j < queries.cols; ++j)
            pooled.at(docs.rows + i, j) = queries.at(i, j);

    EvalReport report;
    std::string curves_tsv = "source\tdim\tk\tratio\n";
    std::string frac_tsv = "source\tdim\tfraction_full_energy\n";
    char buf[96];
    const std::vector<std::pair<std::string, const Matrix*>> sources = {
        {"documents", &docs}, {"queries", &queries}, {"pooled", &pooled}};
    for (const auto& [source, mat] : sources) {
        for (std::size_t d : ctx.cfg.model.dims) {
            const EnergyCurve curve = energy_curve(*mat, d, source);
            for (std::size_t k = 0; k < curve.cumulative_ratio.size(); ++k) {
                std::snprintf(buf, sizeof(buf), "%s\t%zu\t%zu\t%.9f\n", source.c_str(), d, k + 1,
                              curve.cumulative_ratio[k]);
                curves_tsv += buf;
            }
            for (double ratio : {0.5, 0.9, 0.99, 1.0}) {
                char metric[32];
                std::snprintf(metric, sizeof(metric), "frac@%g", ratio);
                report.add("rank", source, d, metric, dims_for_energy(curve, ratio));
            }
            std::snprintf(buf, sizeof(buf), "%s\t%zu\t%.9f\n", source.c_str(), d,
                          dims_for_energy(curve, 1.0));
            frac_tsv += buf;
        }
    }
    report.metadata["covariance"] = "mean-centered";
    report.sort();
    write_file_text(ctx.path("reports/rank.jsonl"), report_to_jsonl(report));
    write_file_text(ctx.path("plots/energy_curves.tsv"), curves_tsv);
    write_file_text(ctx.path("plots/energy_fraction.tsv"), frac_tsv);
    write_manifest(ctx, "analyze-rank",
                   {"corpus/eval.jsonl", "checkpoints/late-fusion.matzoo"},
                   {"reports/rank.jsonl", "plots/energy_curves.tsv",
                    "plots/energy_fraction.tsv"});
    std::cerr << "analyze-rank: " << report.rows.size() << " cells\n";
    return 0;
}

inline int cmd_bench_cost(const RunContext& ctx) {
    // A synthetic microbenchmark corpus: unit vectors at the configured
    // width. Latencies are wall-clock and inherently non-reproducible, so
    // this report stays outside the determinism contract.
    Rng rng(ctx.cfg.bench_seed);
    Matrix vectors(ctx.cfg.bench_docs, ctx.cfg.model.hidden);
    for (double& v : vectors.data) v = rng.normal();
    vectors = l2_normalize_rows(vectors).value;
    Matrix queries(ctx.cfg.bench_queries, ctx.cfg.model.hidden);
    for (double& v : queries.data) v = rng.normal();
    queries = l2_normalize_rows(queries).value;
    std::vector<std::uint64_t> ids(ctx.cfg.bench_docs);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;

    fs::create_directories(ctx.path("bench"));
    const CostReport report = bench_cost(ids, vectors, ctx.cfg.model.dims, queries,
                                         ctx.cfg.bench_k, ctx.cfg.bench_repetitions,
                                         ctx.path("bench"));
    std::string tsv = "dim\tdocs_per_s\tdisk_bytes\tmedian_latency_s\tp95_latency_s\n";
    std::string jsonl;
    char buf[160];
    for (const auto& row : report.rows) {
        std::snprintf(buf, sizeof(buf), "%zu\t%.1f\t%zu\t%.9f\t%.9f\n", row.dim,
                      row.docs_per_second, row.disk_bytes, row.median_latency_s,
                      row.p95_latency_s);
        tsv += buf;
        nlohmann::json j;
        j["dim"] = row.dim;
        j["docs_per_s"] = row.docs_per_second;
        j["disk_bytes"] = row.disk_bytes;
        j["median_latency_s"] = row.median_latency_s;
        j["p95_latency_s"] = row.p95_latency_s;
        jsonl += j.dump();
        jsonl.push_back('\n');
    }
    write_file_text(ctx.path("reports/cost.jsonl"), jsonl);
    write_file_text(ctx.path("plots/cost.tsv"), tsv);
    write_manifest(ctx, "bench-cost", {}, {"plots/cost.tsv"});
    std::cerr << "bench-cost: " << report.rows.size() << " dims measured\n";
    return 0;
}

inline int cmd_repro_findings(const RunContext& ctx) {
    PipelineResult result = run_pipeline(ctx.cfg, &std::cerr);

    // Persist every deterministic artifact of the run.
    save_corpus(ctx.path("corpus/train.jsonl"), result.corpus.train, result.corpus.universe,
                "train");
    save_corpus(ctx.path("corpus/eval.jsonl"), result.corpus.eval, result.corpus.universe,
                "eval");
    save_corpus(ctx.path("corpus/kws.jsonl"), result.corpus.kws, result.corpus.universe, "kws");
    save_corpus(ctx.path("corpus/intent.jsonl"), result.corpus.intent, result.corpus.universe,
                "intent");
    std::vector<std::string> outputs{"corpus/train.jsonl", "corpus/eval.jsonl",
                                     "corpus/kws.jsonl", "corpus/intent.jsonl"};
    for (const auto& [name, model] : result.models) {
        const std::string ckpt = "checkpoints/" + name + ".matzoo";
        const std::string curve = "plots/loss_" + name + ".tsv";
        save_checkpoint(ctx.path(ckpt), model.params);
        write_file_text(ctx.path(curve), curve_to_tsv(result.curves.at(name).curve));
        outputs.push_back(ckpt);
        outputs.push_back(curve);
    }
    write_file_text(ctx.path("reports/retrieval.jsonl"), report_to_jsonl(result.retrieval));
    write_file_text(ctx.path("reports/kws.jsonl"), report_to_jsonl(result.kws));
    write_file_text(ctx.path("reports/intent.jsonl"), report_to_jsonl(result.intent));
    write_file_text(ctx.path("reports/rank.jsonl"), report_to_jsonl(result.rank));
    write_file_text(ctx.path("plots/retrieval.tsv"),
                    retrieval_plot_tsv(result.retrieval, ctx.cfg.model.dims));
    outputs.insert(outputs.end(),
                   {"reports/retrieval.jsonl", "reports/kws.jsonl", "reports/intent.jsonl",
                    "reports/rank.jsonl", "plots/retrieval.tsv"});

    const auto checks = check_findings(result, ctx.cfg);
    nlohmann::json summary;
    summary["schema"] = "matz-findings";
    summary["version"] = 1;
    summary["config_hash"] = ctx.cfg.hash();
    summary["checks"] = findings_to_json(checks);
    bool all_pass = true;
    for (const auto& c : checks) all_pass = all_pass && c.pass;
    summary["all_pass"] = all_pass;
    write_file_text(ctx.path("findings_summary.json"), summary.dump(2) + "\n");
    write_file_text(ctx.path("findings_summary.txt"), findings_to_text(checks));
    outputs.push_back("findings_summary.json");
    outputs.push_back("findings_summary.txt");

    std::sort(outputs.begin(), outputs.end());
    write_manifest(ctx, "repro-findings", {}, outputs);
    std::cout << findings_to_text(checks);
    return all_pass ? 0 : 3;
}

// ---- entry point -------------------------------------------------------------------

inline int run(int argc, const char* const* argv) {
    CLI::App app{
        "matz: cross-modal Matryoshka embedding retrieval at desk scale (train, index, "
        "evaluate, analyze)"};
    app.require_subcommand(1);

    std::string config_path;
    std::string run_dir_flag;
    std::int64_t seed_override = -1;
    bool force = false;
    app.add_option("--config", config_path, "Path to the JSON run configuration")
        ->type_name("PATH");
    app.add_option("--run-dir", run_dir_flag,
                   "Run directory (default: $MATZ_RUN_ROOT/<config-hash> or "
                   "./runs/<config-hash>)")
        ->type_name("PATH");
    app.add_option("--seed", seed_override, "Override data.seed from the config");
    app.add_flag("--force", force, "Proceed despite stale upstream manifests");

    SearchArgs search_args;
    auto* gen = app.add_subcommand("gen", "Generate the synthetic corpus splits");
    auto* train_cmd = app.add_subcommand("train", "Train the configured model variant");
    auto* embed = app.add_subcommand("embed", "Embed the eval split with the trained variant");
    auto* index = app.add_subcommand("index", "Build the half-precision vector index");
    auto* search = app.add_subcommand("search", "Query the index with an embedded query row");
    search->add_option("--query-row", search_args.query_row, "Row in the query embeddings file");
    search->add_option("--dim", search_args.dim, "Matryoshka dimension (default: largest)");
    search->add_option("--k", search_args.k, "Results to return");
    auto* eval_ret = app.add_subcommand("eval-retrieval",
                                        "nDCG document retrieval for every trained variant");
    auto* eval_kws = app.add_subcommand("eval-kws", "Keyword spotting F1/recall per dimension");
    auto* eval_intent = app.add_subcommand("eval-intent", "Few-shot intent detection sweep");
    auto* analyze = app.add_subcommand("analyze-rank", "Covariance energy-ratio rank analysis");
    auto* bench = app.add_subcommand("bench-cost", "Dimension-vs-cost microbenchmark");
    auto* repro = app.add_subcommand("repro-findings",
                                     "Run the full pipeline and check every finding trend");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (config_path.empty()) {
            throw std::invalid_argument("--config is required (see README for the format)");
        }
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(read_file_text(config_path));
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("config: not valid JSON: " + std::string(e.what()));
        }
        if (seed_override >= 0) {
            if (!doc.contains("data")) doc["data"] = nlohmann::json::object();
            doc["data"]["seed"] = static_cast<std::uint64_t>(seed_override);
        }
        RunContext ctx;
        ctx.cfg = parse_config(doc);
        ctx.force = force;
        if (!run_dir_flag.empty()) {
            ctx.run_dir = run_dir_flag;
        } else if (const char* root = std::getenv("MATZ_RUN_ROOT")) {
            ctx.run_dir = fs::path(root) / ctx.cfg.hash().substr(0, 12);
        } else {
            ctx.run_dir = fs::path("runs") / ctx.cfg.hash().substr(0, 12);
        }
        for (const char* sub :
             {"corpus", "checkpoints", "plots", "embeddings", "index", "reports", "manifests"}) {
            fs::create_directories(ctx.run_dir / sub);
        }

        if (gen->parsed()) return cmd_gen(ctx);
        if (train_cmd->parsed()) return cmd_train(ctx);
        if (embed->parsed()) return cmd_embed(ctx);
        if (index->parsed()) return cmd_index(ctx);
        if (search->parsed()) return cmd_search(ctx, search_args);
        if (eval_ret->parsed()) return cmd_eval_retrieval(ctx);
        if (eval_kws->parsed()) return cmd_eval_kws(ctx);
        if (eval_intent->parsed()) return cmd_eval_intent(ctx);
        if (analyze->parsed()) return cmd_analyze_rank(ctx);
        if (bench->parsed()) return cmd_bench_cost(ctx);
        if (repro->parsed()) return cmd_repro_findings(ctx);
        throw std::invalid_argument("no subcommand given");
    } catch (const std::invalid_argument& e) {
        nlohmann::json err{{"error", {{"kind", "usage"}, {"message", e.what()}}}};
        std::cerr << err.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        nlohmann::json err{{"error", {{"kind", "execution"}, {"message", e.what()}}}};
        std::cerr << err.dump() << "\n";
        return 2;
    }
}

inline int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("matz");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace matz::cli
