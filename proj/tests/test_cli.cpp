#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "matz/cli.hpp"

namespace fs = std::filesystem;

namespace {

nlohmann::json small_cli_config() {
    // Deliberately tiny: the CLI contract is under test here, not model
    // quality.
    return nlohmann::json{
        {"schema", "matz-config"},
        {"version", 1},
        {"data",
         {{"seed", 321},
          {"topics", 4},
          {"examples_per_topic", 10},
          {"eval_per_topic", 5},
          {"vocab", 128},
          {"frame_width", 16},
          {"pool_tokens_query", 6},
          {"pool_tokens_doc", 6},
          {"noise_tokens", 8},
          {"keywords", 3},
          {"keyword_phrase_len", 2},
          {"keyword_train_per", 3},
          {"keyword_eval_per", 2},
          {"intent_classes", 2},
          {"intent_examples_per_class", 5},
          {"identity_pairs", 8},
          {"latent_dim", 8},
          {"quality_filter", false}}},
        {"model",
         {{"variant", "text-only"},
          {"vocab", 128},
          {"hidden", 16},
          {"blocks", 1},
          {"ffn", 32},
          {"max_len", 64},
          {"dims", {4, 16}},
          {"frame_dim", 16},
          {"layer_mult", 1},
          {"conv_channels", 12},
          {"init_seed", 5}}},
        {"train",
         {{"temperature", 0.05},
          {"seed", 17},
          {"text-only", {{"epochs", 1}, {"batch_size", 8}, {"lr", 0.1}}},
          {"late-fusion", {{"epochs", 1}, {"batch_size", 8}, {"lr", 0.1}}},
          {"dual-retrieval", {{"epochs", 1}, {"batch_size", 8}, {"lr", 0.1}}},
          {"dual-alignment", {{"epochs", 1}, {"batch_size", 8}, {"lr", 0.1}}}}},
        {"eval",
         {{"k_list", {5, 10}},
          {"pipeline_corruption", 0.2},
          {"n_shots", {0, 1}},
          {"fewshot",
           {{"stage1_epochs", 1},
            {"stage1_max_pairs", 8},
            {"stage1_batch_pairs", 8},
            {"head_iters", 50}}}}},
        {"bench", {{"docs", 128}, {"queries", 4}, {"repetitions", 3}, {"k", 5}, {"seed", 9}}}};
}

struct CliFixture {
    fs::path root;
    fs::path config_path;

    CliFixture() {
        root = fs::temp_directory_path() / "matz_cli_test";
        fs::remove_all(root);
        fs::create_directories(root);
        config_path = root / "config.json";
        matz::write_file_text(config_path.string(), small_cli_config().dump(2));
    }

    int run(std::vector<std::string> args) const {
        std::vector<std::string> full{"--config", config_path.string(), "--run-dir",
                                      (root / "run").string()};
        for (auto& a : args) full.push_back(std::move(a));
        return matz::cli::run(full);
    }

    std::string run_path(const std::string& rel) const { return (root / "run" / rel).string(); }
};

}  // namespace

TEST_CASE("cli pipeline end to end") {
    CliFixture fx;

    SECTION("commands refuse to run before their upstreams") {
        REQUIRE(fx.run({"train"}) == 2);
        REQUIRE(fx.run({"embed"}) == 2);
    }

    REQUIRE(fx.run({"gen"}) == 0);
    REQUIRE(fs::exists(fx.run_path("corpus/train.jsonl")));
    REQUIRE(fs::exists(fx.run_path("manifests/gen.json")));

    // gen twice: byte-identical corpus.
    const auto corpus_hash =
        matz::sha256_hex(matz::read_file_bytes(fx.run_path("corpus/train.jsonl")));
    REQUIRE(fx.run({"gen"}) == 0);
    REQUIRE(matz::sha256_hex(matz::read_file_bytes(fx.run_path("corpus/train.jsonl"))) ==
            corpus_hash);

    // Speech variants need the text stack first.
    {
        auto cfg = small_cli_config();
        cfg["model"]["variant"] = "late-fusion";
        matz::write_file_text(fx.config_path.string(), cfg.dump(2));
        REQUIRE(fx.run({"train"}) == 2);  // text-only checkpoint missing
        cfg["model"]["variant"] = "text-only";
        matz::write_file_text(fx.config_path.string(), cfg.dump(2));
    }

    REQUIRE(fx.run({"train"}) == 0);
    REQUIRE(fs::exists(fx.run_path("checkpoints/text-only.matzoo")));
    REQUIRE(fs::exists(fx.run_path("plots/loss_text-only.tsv")));

    for (const char* variant : {"late-fusion", "dual-retrieval", "dual-alignment"}) {
        auto cfg = small_cli_config();
        cfg["model"]["variant"] = variant;
        matz::write_file_text(fx.config_path.string(), cfg.dump(2));
        REQUIRE(fx.run({"train"}) == 0);
        REQUIRE(fs::exists(fx.run_path(std::string("checkpoints/") + variant + ".matzoo")));
    }

    // Embed/index/search on the late-fusion variant.
    {
        auto cfg = small_cli_config();
        cfg["model"]["variant"] = "late-fusion";
        matz::write_file_text(fx.config_path.string(), cfg.dump(2));
    }
    REQUIRE(fx.run({"embed"}) == 0);
    REQUIRE(fs::exists(fx.run_path("embeddings/late-fusion_docs.matemb")));
    REQUIRE(fs::exists(fx.run_path("embeddings/late-fusion_queries_d4.matemb")));
    REQUIRE(fx.run({"index"}) == 0);
    REQUIRE(fs::exists(fx.run_path("index/late-fusion.matidx")));
    REQUIRE(fx.run({"search", "--query-row", "0", "--k", "3"}) == 0);
    REQUIRE(fs::exists(fx.run_path("reports/search.jsonl")));

    // Searching a stored document vector at k=1 returns that document.
    {
        const auto docs = matz::cli::deserialize_embeddings(
            matz::read_file_bytes(fx.run_path("embeddings/late-fusion_docs.matemb")));
        const auto shard = matz::load_shard(fx.run_path("index/late-fusion.matidx"));
        std::vector<double> q(docs.vectors.row_ptr(2), docs.vectors.row_ptr(2) + docs.vectors.cols);
        const auto res = matz::search(shard, q, 16, 1);
        REQUIRE(res.hits.size() == 1);
        REQUIRE(res.hits[0].first == docs.ids[2]);
    }

    REQUIRE(fx.run({"eval-retrieval"}) == 0);
    REQUIRE(fs::exists(fx.run_path("reports/retrieval.jsonl")));
    {
        const auto report = matz::report_from_jsonl(
            matz::read_file_text(fx.run_path("reports/retrieval.jsonl")));
        // All four variants plus pipelined, two dims, two k values.
        REQUIRE(report.rows.size() == 5 * 2 * 2);
    }

    REQUIRE(fx.run({"eval-kws"}) == 0);
    REQUIRE(fx.run({"eval-intent"}) == 0);
    REQUIRE(fx.run({"analyze-rank"}) == 0);
    REQUIRE(fs::exists(fx.run_path("plots/energy_curves.tsv")));
    REQUIRE(fx.run({"bench-cost"}) == 0);
    REQUIRE(fs::exists(fx.run_path("plots/cost.tsv")));

    // Stale upstream: a changed seed invalidates previous artifacts.
    {
        auto cfg = small_cli_config();
        cfg["data"]["seed"] = 999;
        cfg["model"]["variant"] = "late-fusion";
        matz::write_file_text(fx.config_path.string(), cfg.dump(2));
        REQUIRE(fx.run({"embed"}) == 2);
        // --force overrides the stale check (artifacts exist from before).
        REQUIRE(fx.run({"--force", "embed"}) == 0);
    }
}

TEST_CASE("cli rejects bad configs with field diagnostics") {
    CliFixture fx;
    auto cfg = small_cli_config();
    cfg["data"]["unknown_knob"] = 3;
    matz::write_file_text(fx.config_path.string(), cfg.dump(2));
    REQUIRE(fx.run({"gen"}) == 1);

    cfg = small_cli_config();
    cfg["train"]["text-only"]["batch_size"] = 1;
    matz::write_file_text(fx.config_path.string(), cfg.dump(2));
    REQUIRE(fx.run({"gen"}) == 1);

    cfg = small_cli_config();
    cfg["model"]["dims"] = {16, 4};
    matz::write_file_text(fx.config_path.string(), cfg.dump(2));
    REQUIRE(fx.run({"gen"}) == 1);

    matz::write_file_text(fx.config_path.string(), "{not json");
    REQUIRE(fx.run({"gen"}) == 1);

    // Missing --config entirely.
    REQUIRE(matz::cli::run({"gen"}) == 1);
}

TEST_CASE("cli seed override changes the run identity") {
    CliFixture fx;
    REQUIRE(fx.run({"gen"}) == 0);
    const auto base =
        matz::sha256_hex(matz::read_file_bytes(fx.run_path("corpus/train.jsonl")));
    REQUIRE(fx.run({"--seed", "777", "gen"}) == 0);
    const auto overridden =
        matz::sha256_hex(matz::read_file_bytes(fx.run_path("corpus/train.jsonl")));
    REQUIRE(base != overridden);

    // The override is part of the config hash, so the default run dir would
    // differ; here the explicit --run-dir pins it and the manifest hash
    // records the change.
    const auto manifest =
        nlohmann::json::parse(matz::read_file_text(fx.run_path("manifests/gen.json")));
    REQUIRE(manifest.at("config_hash").get<std::string>() !=
            matz::parse_config(small_cli_config()).hash());
}
