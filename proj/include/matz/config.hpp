#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "matz/losses.hpp"
#include "matz/model.hpp"
#include "matz/sha256.hpp"
#include "matz/synth.hpp"
#include "matz/train.hpp"

namespace matz {

/// Parsed and validated run configuration. One JSON document drives the
/// whole pipeline; unknown keys are rejected so typos cannot silently fall
/// back to defaults.
struct RunConfig {
    CorpusConfig data;
    ModelConfig model;
    Variant variant = Variant::kLateFusion;
    double temperature = 0.05;
    std::uint64_t train_seed = 42;
    std::map<std::string, TrainRunConfig> train;  // per variant name
    std::vector<std::size_t> k_list{5, 10};
    double pipeline_corruption = 0.2;
    std::vector<std::size_t> n_shots{0, 1, 2, 4, 8, 16};
    FewShotConfig fewshot;
    std::size_t bench_docs = 4096;
    std::size_t bench_queries = 48;
    std::size_t bench_repetitions = 5;
    std::size_t bench_k = 10;
    std::uint64_t bench_seed = 99;

    nlohmann::json canonical;  // parsed document, for hashing

    /// Content identity of a run. model.variant is excluded: one run
    /// directory holds all four trained variants of the same experiment,
    /// and switching the variant to train the next leg must not invalidate
    /// the shared artifacts.
    std::string hash() const {
        nlohmann::json doc = canonical;
        if (doc.contains("model") && doc["model"].contains("variant")) {
            doc["model"].erase("variant");
        }
        return sha256_hex(doc.dump());
    }

    LossConfig loss_config() const {
        LossConfig cfg;
        cfg.temperature = temperature;
        cfg.dims = model.dims;
        cfg.normalize_prefix = model.normalize_prefix;
        return cfg;
    }

    const TrainRunConfig& train_for(Variant v) const {
        const auto it = train.find(variant_name(v));
        require(it != train.end(), "config: no train section for " + variant_name(v));
        return it->second;
    }
};

namespace detail {

[[noreturn]] inline void config_error(const std::string& path, const std::string& msg) {
    throw std::invalid_argument("config: " + path + ": " + msg);
}

inline void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& known,
                           const std::string& path) {
    for (const auto& [key, _] : obj.items()) {
        if (!known.count(key)) config_error(path + "." + key, "unknown key");
    }
}

template <typename T>
T field(const nlohmann::json& obj, const std::string& key, T fallback, const std::string& path) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        config_error(path + "." + key, "wrong type");
    }
}

inline TrainRunConfig parse_train_section(const nlohmann::json& obj, const std::string& path,
                                          std::uint64_t seed) {
    reject_unknown(obj, {"epochs", "batch_size", "lr"}, path);
    TrainRunConfig cfg;
    cfg.epochs = field<std::size_t>(obj, "epochs", 1, path);
    cfg.batch_size = field<std::size_t>(obj, "batch_size", 16, path);
    cfg.lr = field<double>(obj, "lr", 3e-4, path);
    cfg.seed = seed;
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        config_error(path, e.what());
    }
    return cfg;
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& doc) {
    using detail::config_error;
    using detail::field;
    using detail::reject_unknown;

    RunConfig cfg;
    cfg.canonical = doc;
    reject_unknown(doc, {"schema", "version", "data", "model", "train", "eval", "bench"}, "$");
    if (field<std::string>(doc, "schema", "matz-config", "$") != "matz-config")
        config_error("$.schema", "expected \"matz-config\"");
    if (field<int>(doc, "version", 1, "$") != 1) config_error("$.version", "unsupported version");

    // data
    if (doc.contains("data")) {
        const auto& d = doc.at("data");
        reject_unknown(d,
                       {"seed", "topics", "examples_per_topic", "eval_per_topic", "vocab",
                        "frame_width", "frame_rate", "frames_per_token", "query_len_min",
                        "query_len_max", "doc_len_factor", "pool_tokens_query", "pool_tokens_doc",
                        "noise_tokens", "query_noise_rate", "doc_noise_rate",
                        "task_transcription", "task_translation", "profile", "quality_filter",
                        "score_mean", "score_sd", "anchor_scale", "token_offset_scale",
                        "filler_scale", "identity_pairs", "identity_per_example",
                        "identity_query_repeats", "identity_doc_repeats", "latent_dim",
                        "min_topic_angle_deg", "intent_classes",
                        "intent_examples_per_class", "keywords", "keyword_phrase_len",
                        "keyword_train_per", "keyword_eval_per"},
                       "$.data");
        auto& c = cfg.data;
        c.seed = field<std::uint64_t>(d, "seed", c.seed, "$.data");
        c.topics = field<std::size_t>(d, "topics", c.topics, "$.data");
        c.examples_per_topic =
            field<std::size_t>(d, "examples_per_topic", c.examples_per_topic, "$.data");
        c.eval_per_topic = field<std::size_t>(d, "eval_per_topic", c.eval_per_topic, "$.data");
        c.vocab = field<std::size_t>(d, "vocab", c.vocab, "$.data");
        c.frame_width = field<std::size_t>(d, "frame_width", c.frame_width, "$.data");
        c.frame_rate = field<double>(d, "frame_rate", c.frame_rate, "$.data");
        c.frames_per_token =
            field<std::size_t>(d, "frames_per_token", c.frames_per_token, "$.data");
        c.query_len_min = field<std::size_t>(d, "query_len_min", c.query_len_min, "$.data");
        c.query_len_max = field<std::size_t>(d, "query_len_max", c.query_len_max, "$.data");
        c.doc_len_factor = field<double>(d, "doc_len_factor", c.doc_len_factor, "$.data");
        c.pool_tokens_query =
            field<std::size_t>(d, "pool_tokens_query", c.pool_tokens_query, "$.data");
        c.pool_tokens_doc = field<std::size_t>(d, "pool_tokens_doc", c.pool_tokens_doc, "$.data");
        c.noise_tokens = field<std::size_t>(d, "noise_tokens", c.noise_tokens, "$.data");
        c.query_noise_rate = field<double>(d, "query_noise_rate", c.query_noise_rate, "$.data");
        c.doc_noise_rate = field<double>(d, "doc_noise_rate", c.doc_noise_rate, "$.data");
        c.task_transcription =
            field<double>(d, "task_transcription", c.task_transcription, "$.data");
        c.task_translation = field<double>(d, "task_translation", c.task_translation, "$.data");
        c.quality_filter = field<bool>(d, "quality_filter", c.quality_filter, "$.data");
        c.score_mean = field<double>(d, "score_mean", c.score_mean, "$.data");
        c.score_sd = field<double>(d, "score_sd", c.score_sd, "$.data");
        c.anchor_scale = field<double>(d, "anchor_scale", c.anchor_scale, "$.data");
        c.token_offset_scale =
            field<double>(d, "token_offset_scale", c.token_offset_scale, "$.data");
        c.filler_scale = field<double>(d, "filler_scale", c.filler_scale, "$.data");
        c.identity_pairs = field<std::size_t>(d, "identity_pairs", c.identity_pairs, "$.data");
        c.identity_per_example =
            field<std::size_t>(d, "identity_per_example", c.identity_per_example, "$.data");
        c.identity_query_repeats = field<std::size_t>(d, "identity_query_repeats",
                                                      c.identity_query_repeats, "$.data");
        c.identity_doc_repeats =
            field<std::size_t>(d, "identity_doc_repeats", c.identity_doc_repeats, "$.data");
        c.latent_dim = field<std::size_t>(d, "latent_dim", c.latent_dim, "$.data");
        c.min_topic_angle_deg =
            field<double>(d, "min_topic_angle_deg", c.min_topic_angle_deg, "$.data");
        c.intent_classes = field<std::size_t>(d, "intent_classes", c.intent_classes, "$.data");
        c.intent_examples_per_class = field<std::size_t>(d, "intent_examples_per_class",
                                                         c.intent_examples_per_class, "$.data");
        c.keywords = field<std::size_t>(d, "keywords", c.keywords, "$.data");
        c.keyword_phrase_len =
            field<std::size_t>(d, "keyword_phrase_len", c.keyword_phrase_len, "$.data");
        c.keyword_train_per =
            field<std::size_t>(d, "keyword_train_per", c.keyword_train_per, "$.data");
        c.keyword_eval_per =
            field<std::size_t>(d, "keyword_eval_per", c.keyword_eval_per, "$.data");
        if (d.contains("profile")) {
            const auto& p = d.at("profile");
            reject_unknown(p, {"hesitation", "volume_db", "noise_sigma"}, "$.data.profile");
            c.profile.hesitation =
                field<double>(p, "hesitation", c.profile.hesitation, "$.data.profile");
            c.profile.volume_db =
                field<double>(p, "volume_db", c.profile.volume_db, "$.data.profile");
            c.profile.noise_sigma =
                field<double>(p, "noise_sigma", c.profile.noise_sigma, "$.data.profile");
        }
    }

    // model
    if (doc.contains("model")) {
        const auto& m = doc.at("model");
        reject_unknown(m,
                       {"variant", "vocab", "hidden", "blocks", "ffn", "max_len", "dims",
                        "frame_dim", "layer_mult", "conv_channels", "normalize_prefix",
                        "init_seed"},
                       "$.model");
        auto& c = cfg.model;
        cfg.variant = variant_from_name(
            field<std::string>(m, "variant", variant_name(cfg.variant), "$.model"));
        c.vocab = field<std::size_t>(m, "vocab", c.vocab, "$.model");
        c.hidden = field<std::size_t>(m, "hidden", c.hidden, "$.model");
        c.blocks = field<std::size_t>(m, "blocks", c.blocks, "$.model");
        c.ffn = field<std::size_t>(m, "ffn", c.ffn, "$.model");
        c.max_len = field<std::size_t>(m, "max_len", c.max_len, "$.model");
        c.dims = field<std::vector<std::size_t>>(m, "dims", c.dims, "$.model");
        c.frame_dim = field<std::size_t>(m, "frame_dim", c.frame_dim, "$.model");
        c.layer_mult = field<std::size_t>(m, "layer_mult", c.layer_mult, "$.model");
        c.conv_channels = field<std::size_t>(m, "conv_channels", c.conv_channels, "$.model");
        c.normalize_prefix = field<bool>(m, "normalize_prefix", c.normalize_prefix, "$.model");
        c.init_seed = field<std::uint64_t>(m, "init_seed", c.init_seed, "$.model");
    }

    // train
    if (doc.contains("train")) {
        const auto& t = doc.at("train");
        reject_unknown(
            t, {"temperature", "seed", "text-only", "late-fusion", "dual-retrieval",
                "dual-alignment"},
            "$.train");
        cfg.temperature = field<double>(t, "temperature", cfg.temperature, "$.train");
        cfg.train_seed = field<std::uint64_t>(t, "seed", cfg.train_seed, "$.train");
        for (const std::string name :
             {"text-only", "late-fusion", "dual-retrieval", "dual-alignment"}) {
            if (t.contains(name)) {
                cfg.train[name] =
                    detail::parse_train_section(t.at(name), "$.train." + name, cfg.train_seed);
            }
        }
    }
    for (const std::string name : {"text-only", "late-fusion", "dual-retrieval", "dual-alignment"}) {
        if (!cfg.train.count(name)) {
            TrainRunConfig def;
            def.seed = cfg.train_seed;
            cfg.train[name] = def;
        }
    }

    // eval
    if (doc.contains("eval")) {
        const auto& e = doc.at("eval");
        reject_unknown(e, {"k_list", "pipeline_corruption", "n_shots", "fewshot"}, "$.eval");
        cfg.k_list = field<std::vector<std::size_t>>(e, "k_list", cfg.k_list, "$.eval");
        cfg.pipeline_corruption =
            field<double>(e, "pipeline_corruption", cfg.pipeline_corruption, "$.eval");
        cfg.n_shots = field<std::vector<std::size_t>>(e, "n_shots", cfg.n_shots, "$.eval");
        if (e.contains("fewshot")) {
            const auto& f = e.at("fewshot");
            reject_unknown(f,
                           {"stage1_epochs", "stage1_lr", "stage1_batch_pairs",
                            "stage1_max_pairs", "margin", "head_iters", "head_lr", "head_l2",
                            "seed"},
                           "$.eval.fewshot");
            auto& fs = cfg.fewshot;
            fs.stage1_epochs =
                field<std::size_t>(f, "stage1_epochs", fs.stage1_epochs, "$.eval.fewshot");
            fs.stage1_lr = field<double>(f, "stage1_lr", fs.stage1_lr, "$.eval.fewshot");
            fs.stage1_batch_pairs = field<std::size_t>(f, "stage1_batch_pairs",
                                                       fs.stage1_batch_pairs, "$.eval.fewshot");
            fs.stage1_max_pairs =
                field<std::size_t>(f, "stage1_max_pairs", fs.stage1_max_pairs, "$.eval.fewshot");
            fs.margin = field<double>(f, "margin", fs.margin, "$.eval.fewshot");
            fs.head_iters = field<std::size_t>(f, "head_iters", fs.head_iters, "$.eval.fewshot");
            fs.head_lr = field<double>(f, "head_lr", fs.head_lr, "$.eval.fewshot");
            fs.head_l2 = field<double>(f, "head_l2", fs.head_l2, "$.eval.fewshot");
            fs.seed = field<std::uint64_t>(f, "seed", fs.seed, "$.eval.fewshot");
        }
    }

    // bench
    if (doc.contains("bench")) {
        const auto& b = doc.at("bench");
        reject_unknown(b, {"docs", "queries", "repetitions", "k", "seed"}, "$.bench");
        cfg.bench_docs = field<std::size_t>(b, "docs", cfg.bench_docs, "$.bench");
        cfg.bench_queries = field<std::size_t>(b, "queries", cfg.bench_queries, "$.bench");
        cfg.bench_repetitions =
            field<std::size_t>(b, "repetitions", cfg.bench_repetitions, "$.bench");
        cfg.bench_k = field<std::size_t>(b, "k", cfg.bench_k, "$.bench");
        cfg.bench_seed = field<std::uint64_t>(b, "seed", cfg.bench_seed, "$.bench");
    }

    // cross-field validation
    try {
        cfg.data.validate();
        cfg.model.validate();
    } catch (const std::invalid_argument& e) {
        config_error("$", e.what());
    }
    if (cfg.data.vocab != cfg.model.vocab)
        config_error("$.model.vocab", "must match data.vocab");
    if (cfg.data.frame_width != cfg.model.frame_width())
        config_error("$.model", "frame_dim * layer_mult must equal data.frame_width");
    if (cfg.temperature <= 0.0) config_error("$.train.temperature", "must be > 0");
    if (cfg.k_list.empty()) config_error("$.eval.k_list", "must be nonempty");
    if (cfg.pipeline_corruption < 0.0 || cfg.pipeline_corruption > 1.0)
        config_error("$.eval.pipeline_corruption", "must be in [0, 1]");
    for (std::size_t n : cfg.n_shots) {
        FewShotConfig probe = cfg.fewshot;
        probe.n_shot = n;
        try {
            probe.validate();
        } catch (const std::invalid_argument& e) {
            config_error("$.eval.n_shots", e.what());
        }
    }
    if (cfg.bench_repetitions < 3) config_error("$.bench.repetitions", "must be >= 3");
    return cfg;
}

inline RunConfig parse_config_text(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config: not valid JSON: ") + e.what());
    }
    return parse_config(doc);
}

}  // namespace matz
