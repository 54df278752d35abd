#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "matz/corpus_io.hpp"
#include "matz/synth.hpp"

namespace {

matz::CorpusConfig small_config() {
    matz::CorpusConfig cfg;
    cfg.seed = 77;
    cfg.topics = 4;
    cfg.examples_per_topic = 6;
    cfg.eval_per_topic = 3;
    cfg.vocab = 128;
    cfg.frame_width = 16;
    cfg.pool_tokens_query = 6;
    cfg.pool_tokens_doc = 6;
    cfg.noise_tokens = 8;
    cfg.keywords = 4;
    cfg.keyword_phrase_len = 2;
    cfg.keyword_train_per = 3;
    cfg.keyword_eval_per = 2;
    cfg.intent_classes = 2;
    cfg.intent_examples_per_class = 4;
    cfg.identity_pairs = 8;
    cfg.latent_dim = 8;
    return cfg;
}

}  // namespace

TEST_CASE("chars_per_second basics") {
    REQUIRE(matz::chars_per_second("abcdefg", 1.0) == 7.0);
    REQUIRE(matz::chars_per_second("", 2.0) == 0.0);
    REQUIRE(matz::chars_per_second("  ab  ", 1.0) == 2.0);
    REQUIRE_THROWS_AS(matz::chars_per_second("abc", 0.0), std::invalid_argument);
    // Sanity: the documented reference magnitudes order as expected.
    REQUIRE(matz::kHesitantSpeechCharsPerSec < matz::kNaturalSpeechCharsPerSec);
    REQUIRE(matz::kQuietSpeechMeanDb < matz::kNaturalSpeechMeanDb);
}

TEST_CASE("mean_volume_db fixed points") {
    REQUIRE(matz::mean_volume_db(std::vector<double>(64, 0.0)) == -120.0);
    std::vector<double> square(64);
    for (std::size_t i = 0; i < square.size(); ++i) square[i] = (i % 2) ? 1.0 : -1.0;
    REQUIRE(matz::mean_volume_db(square) == Catch::Approx(0.0).margin(1e-12));
    std::vector<double> sine(1000);
    for (std::size_t i = 0; i < sine.size(); ++i)
        sine[i] = std::sin(2.0 * 3.14159265358979323846 * 3.0 * i / sine.size());
    REQUIRE(matz::mean_volume_db(sine) == Catch::Approx(-3.0103).margin(1e-3));
}

TEST_CASE("filter_segments applies both rules with a strict score bound") {
    std::vector<matz::Segment> segs = {
        {10.0, 3.5},  // kept
        {2.0, 4.0},   // duration
        {10.0, 3.2},  // score (strictly above 3.2 required)
        {31.0, 5.0},  // duration
        {3.0, 3.21},  // kept (inclusive duration bounds)
        {30.0, 3.3},  // kept
    };
    auto res = matz::filter_segments(segs);
    REQUIRE(res.kept == std::vector<std::size_t>{0, 4, 5});
    REQUIRE(res.rejected.size() == 3);
    REQUIRE(res.rejected[0].index == 1);
    REQUIRE(res.rejected[0].rule == "duration");
    REQUIRE(res.rejected[1].index == 2);
    REQUIRE(res.rejected[1].rule == "score");
    REQUIRE(res.rejected[2].rule == "duration");

    REQUIRE_THROWS_AS(matz::filter_segments({{-1.0, 4.0}}), std::invalid_argument);
}

TEST_CASE("filter_segments matches a direct predicate scan on random input") {
    matz::Rng rng(5);
    std::vector<matz::Segment> segs;
    for (int i = 0; i < 500; ++i) segs.push_back({rng.uniform(0.0, 40.0), rng.uniform(2.0, 5.0)});
    auto res = matz::filter_segments(segs);
    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < segs.size(); ++i) {
        if (segs[i].duration_s >= 3.0 && segs[i].duration_s <= 30.0 && segs[i].quality_score > 3.2)
            expected.push_back(i);
    }
    REQUIRE(res.kept == expected);
    REQUIRE(res.kept.size() + res.rejected.size() == segs.size());
}

TEST_CASE("corrupt_transcription behaviour") {
    std::vector<int> tokens(10000);
    for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<int>(i % 64);

    SECTION("rate 0 is the identity") {
        REQUIRE(matz::corrupt_transcription(tokens, 0.0, 9, 64) == tokens);
    }
    SECTION("rate 1 leaves roughly 1/vocab overlap") {
        auto out = matz::corrupt_transcription(tokens, 1.0, 9, 64);
        std::size_t same = 0;
        for (std::size_t i = 0; i < tokens.size(); ++i) same += (out[i] == tokens[i]);
        const double frac = static_cast<double>(same) / tokens.size();
        REQUIRE(frac < 3.0 / 64.0);
    }
    SECTION("rate 0.2 corrupts close to a fifth of tokens") {
        for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
            auto out = matz::corrupt_transcription(tokens, 0.2, seed, 64);
            std::size_t changed = 0;
            for (std::size_t i = 0; i < tokens.size(); ++i) changed += (out[i] != tokens[i]);
            // Replacement can redraw the original token, so the changed
            // fraction sits just under the nominal rate.
            const double frac = static_cast<double>(changed) / tokens.size();
            REQUIRE(frac > 0.2 * (1.0 - 1.0 / 64.0) - 0.01);
            REQUIRE(frac < 0.2 + 0.01);
        }
    }
    SECTION("deterministic under seed") {
        REQUIRE(matz::corrupt_transcription(tokens, 0.5, 4, 64) ==
                matz::corrupt_transcription(tokens, 0.5, 4, 64));
    }
    SECTION("rate outside [0,1] rejected") {
        REQUIRE_THROWS_AS(matz::corrupt_transcription(tokens, 1.5, 4, 64), std::invalid_argument);
    }
}

TEST_CASE("gen_corpus is deterministic byte-for-byte") {
    auto cfg = small_config();
    auto a = matz::gen_corpus(cfg);
    auto b = matz::gen_corpus(cfg);
    REQUIRE(matz::corpus_to_jsonl(a.train, a.universe, "train") ==
            matz::corpus_to_jsonl(b.train, b.universe, "train"));
    REQUIRE(matz::corpus_to_jsonl(a.kws, a.universe, "kws") ==
            matz::corpus_to_jsonl(b.kws, b.universe, "kws"));

    cfg.seed = 78;
    auto c = matz::gen_corpus(cfg);
    REQUIRE(matz::corpus_to_jsonl(a.train, a.universe, "train") !=
            matz::corpus_to_jsonl(c.train, c.universe, "train"));
}

TEST_CASE("gen_corpus structure and invariants") {
    auto cfg = small_config();
    cfg.quality_filter = false;
    auto bundle = matz::gen_corpus(cfg);

    REQUIRE(bundle.train.size() ==
            cfg.topics * cfg.examples_per_topic + cfg.keywords * cfg.keyword_train_per);
    REQUIRE(bundle.eval.size() == cfg.topics * cfg.eval_per_topic);
    REQUIRE(bundle.kws.size() == cfg.keywords * cfg.keyword_eval_per);
    REQUIRE(bundle.intent.size() == cfg.intent_classes * cfg.intent_examples_per_class);

    for (const auto& ex : bundle.eval) REQUIRE(ex.task == matz::Task::kDocumentRetrieval);

    for (const auto& ex : bundle.train) {
        REQUIRE(ex.frames.rows >= 1);
        REQUIRE(ex.frames.cols == cfg.frame_width);
        REQUIRE(ex.duration_s > 0.0);
        // Frames live on the binary16 grid.
        for (double v : ex.frames.data) REQUIRE(matz::half_round_trip(v) == v);
        if (ex.topic >= 0) {
            REQUIRE(ex.query_tokens.size() >= cfg.query_len_min);
        }
    }

    // Topic latents respect the separation floor.
    const auto& lat = bundle.universe.topic_latents;
    REQUIRE(lat.size() == cfg.topics);
    for (std::size_t i = 0; i < lat.size(); ++i)
        for (std::size_t j = i + 1; j < lat.size(); ++j) {
            double d = 0.0;
            for (std::size_t k = 0; k < lat[i].size(); ++k) d += lat[i][k] * lat[j][k];
            REQUIRE(std::acos(std::max(-1.0, std::min(1.0, d))) * 180.0 / 3.141592653589793 >=
                    cfg.min_topic_angle_deg - 1e-9);
        }

    // Nearest-latent decoding: an example shares its positive document's
    // latent, which is strictly closer than any other topic's.
    for (const auto& ex : bundle.train) {
        if (ex.topic < 0) continue;
        for (std::size_t t = 0; t < lat.size(); ++t) {
            if (static_cast<int>(t) == ex.topic) continue;
            double own = 0.0, other = 0.0;
            for (std::size_t k = 0; k < lat[t].size(); ++k) {
                own += lat[ex.topic][k] * lat[ex.topic][k];
                other += lat[ex.topic][k] * lat[t][k];
            }
            REQUIRE(own > other);
        }
    }
}

TEST_CASE("vocab too small for the requested topic count is rejected") {
    auto cfg = small_config();
    cfg.vocab = 64;
    REQUIRE_THROWS_WITH(matz::gen_corpus(cfg), Catch::Matchers::ContainsSubstring("vocab"));
}

TEST_CASE("volume offset shifts mean volume by the configured dB") {
    auto cfg = small_config();
    cfg.quality_filter = false;
    auto clean = matz::gen_corpus(cfg);
    cfg.profile.volume_db = -25.0;
    auto quiet = matz::gen_corpus(cfg);
    double shift_sum = 0.0;
    for (std::size_t i = 0; i < clean.train.size(); ++i) {
        shift_sum += matz::mean_volume_db(quiet.train[i].frames) -
                     matz::mean_volume_db(clean.train[i].frames);
    }
    const double mean_shift = shift_sum / clean.train.size();
    REQUIRE(mean_shift == Catch::Approx(-25.0).margin(0.5));
}

TEST_CASE("hesitation strictly lengthens speech and lowers chars per second") {
    auto cfg = small_config();
    cfg.quality_filter = false;
    double prev_frames = -1.0, prev_cps = 1e9;
    for (double h : {1.0, 1.25, 1.5, 2.0}) {
        cfg.profile.hesitation = h;
        auto bundle = matz::gen_corpus(cfg);
        double frames = 0.0, cps = 0.0;
        for (const auto& ex : bundle.train) {
            frames += static_cast<double>(ex.frames.rows);
            cps += matz::chars_per_second(matz::token_text(ex.transcription), ex.duration_s);
        }
        REQUIRE(frames > prev_frames);
        REQUIRE(cps < prev_cps);
        prev_frames = frames;
        prev_cps = cps;
    }
}

TEST_CASE("corpus serialization round-trips") {
    auto cfg = small_config();
    auto bundle = matz::gen_corpus(cfg);
    const std::string text = matz::corpus_to_jsonl(bundle.train, bundle.universe, "train");
    auto loaded = matz::corpus_from_jsonl(text);
    REQUIRE(loaded.header.at("schema") == "matz-corpus");
    REQUIRE(loaded.examples.size() == bundle.train.size());
    for (std::size_t i = 0; i < loaded.examples.size(); ++i) {
        const auto& a = bundle.train[i];
        const auto& b = loaded.examples[i];
        REQUIRE(a.id == b.id);
        REQUIRE(a.query_tokens == b.query_tokens);
        REQUIRE(a.transcription == b.transcription);
        REQUIRE(a.document == b.document);
        REQUIRE(a.task == b.task);
        REQUIRE(a.frames == b.frames);
        REQUIRE(a.duration_s == b.duration_s);
    }
    // Re-serialization is byte-identical.
    REQUIRE(matz::corpus_to_jsonl(loaded.examples, bundle.universe, "train") == text);

    REQUIRE_THROWS_AS(matz::corpus_from_jsonl("{\"schema\":\"other\"}\n"), std::invalid_argument);
}

TEST_CASE("lexical diversity ratio") {
    REQUIRE(matz::lexical_diversity({1, 2, 3, 4}) == 1.0);
    REQUIRE(matz::lexical_diversity({5, 5, 5, 5}) == 0.25);
    REQUIRE(matz::lexical_diversity({}) == 0.0);
}
