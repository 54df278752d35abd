#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "matz/half.hpp"
#include "matz/matrix.hpp"
#include "matz/model.hpp"
#include "matz/rng.hpp"

namespace matz {

/// Reference proxy magnitudes for natural spontaneous speech versus
/// hesitant read speech (characters per second and mean volume). Kept as
/// documentation constants; the generator produces its own values.
inline constexpr double kNaturalSpeechCharsPerSec = 16.88;
inline constexpr double kHesitantSpeechCharsPerSec = 7.51;
inline constexpr double kNaturalSpeechMeanDb = -23.81;
inline constexpr double kQuietSpeechMeanDb = -49.01;

/// Degradation knobs for generated speech. hesitation stretches duration
/// with low-energy filler frames; volume_db shifts the signal level;
/// noise_sigma is per-frame additive noise. (1.0, 0, sigma) is "clean".
struct QualityProfile {
    double hesitation = 1.0;
    double volume_db = 0.0;
    double noise_sigma = 0.05;

    void validate() const {
        require(hesitation >= 1.0, "QualityProfile: hesitation factor must be >= 1");
        require(noise_sigma >= 0.0, "QualityProfile: noise sigma must be >= 0");
    }
};

enum class Task : int { kDocumentRetrieval = 0, kTranscriptionRetrieval = 1, kTranslationRetrieval = 2 };

inline TaskPrompt task_prompt(Task t) {
    switch (t) {
        case Task::kDocumentRetrieval: return TaskPrompt::kDocument;
        case Task::kTranscriptionRetrieval: return TaskPrompt::kTranscription;
        case Task::kTranslationRetrieval: return TaskPrompt::kTranslation;
    }
    return TaskPrompt::kNone;
}

/// One bilingual bimodal training/eval item. The speech (frames) renders
/// the transcription through a noisy acoustic channel; the query tokens are
/// an independent textual sample of the same underlying content; the
/// document is the retrieval target for the example's task.
struct PairedExample {
    std::uint64_t id = 0;
    int topic = -1;
    int intent_label = -1;  // class id in the intent split, keyword id in the kws split
    Task task = Task::kDocumentRetrieval;
    int relevance = 1;
    std::vector<int> query_tokens;
    std::vector<int> transcription;
    std::vector<int> document;
    Matrix frames;  // S x frame_width, binary16-quantized entries
    double duration_s = 0.0;
    double quality_score = 0.0;
};

struct CorpusConfig {
    std::uint64_t seed = 1234;
    std::size_t topics = 16;
    std::size_t examples_per_topic = 72;
    std::size_t eval_per_topic = 16;
    std::size_t vocab = 512;
    std::size_t frame_width = 64;
    double frame_rate = 5.0;  // feature frames per second
    std::size_t frames_per_token = 2;
    std::size_t query_len_min = 8;
    std::size_t query_len_max = 14;
    double doc_len_factor = 3.0;
    std::size_t pool_tokens_query = 12;  // per component pool
    std::size_t pool_tokens_doc = 14;    // per topic
    std::size_t noise_tokens = 16;       // per noise pool
    double query_noise_rate = 0.10;
    double doc_noise_rate = 0.15;
    double task_transcription = 0.20;
    double task_translation = 0.10;
    QualityProfile profile;
    bool quality_filter = true;
    double score_mean = 3.9;
    double score_sd = 0.25;
    double anchor_scale = 0.30;
    double token_offset_scale = 0.12;
    double filler_scale = 0.03;
    std::size_t identity_pairs = 64;        // cross-side token pairs naming one document
    std::size_t identity_per_example = 2;
    std::size_t identity_query_repeats = 2;
    std::size_t identity_doc_repeats = 3;
    std::size_t latent_dim = 16;
    double min_topic_angle_deg = 45.0;
    std::size_t intent_classes = 10;
    std::size_t intent_examples_per_class = 44;
    std::size_t keywords = 10;
    std::size_t keyword_phrase_len = 3;
    std::size_t keyword_train_per = 24;
    std::size_t keyword_eval_per = 12;

    void validate() const {
        require(topics >= 2, "CorpusConfig: need at least 2 topics");
        require(query_len_min >= 2 && query_len_max >= query_len_min,
                "CorpusConfig: bad query length range");
        require(frames_per_token >= 1, "CorpusConfig: frames_per_token must be >= 1");
        require(task_transcription + task_translation <= 0.9,
                "CorpusConfig: task mix leaves too little document retrieval");
        require(intent_classes >= 2 && (intent_classes + 1) / 2 <= topics,
                "CorpusConfig: intent classes need topics >= ceil(classes/2) cells");
        require(identity_pairs >= identity_per_example && identity_per_example >= 1,
                "CorpusConfig: bad identity pool settings");
        require(keywords >= 2, "CorpusConfig: need at least 2 keywords");
        profile.validate();
    }
};

/// Shared world the generator draws from: token pools, latent topics, and
/// the acoustic rendering table. Built deterministically from the seed.
struct Universe {
    CorpusConfig cfg;
    std::size_t grid_a = 0, grid_b = 0;  // topic t = (t % grid_a, t / grid_a)
    std::vector<std::vector<int>> pool_a;      // query component pools
    std::vector<std::vector<int>> pool_b;
    std::vector<int> query_noise_pool;
    std::vector<std::vector<int>> doc_pools;   // one per topic
    std::vector<int> doc_noise_pool;
    std::vector<int> identity_q;  // paired by index: identity_q[i] <-> identity_d[i]
    std::vector<int> identity_d;
    std::vector<int> intent_markers;  // one token per intent class
    std::vector<std::vector<int>> keyword_phrases;
    std::vector<std::vector<double>> topic_latents;
    Matrix acoustic;  // vocab x frame_width; zero rows for unspoken tokens

    std::size_t comp_a(std::size_t topic) const { return topic % grid_a; }
    std::size_t comp_b(std::size_t topic) const { return topic / grid_a; }

    /// Intent classes reuse topic cells in shared pairs (two classes per
    /// cell) plus a class-specific marker token, so cell structure alone
    /// cannot separate them.
    std::size_t intent_cell(std::size_t cls) const { return cls / 2; }

    /// Short textual name for an intent class (used for zero-shot scoring):
    /// the cell's characteristic tokens. The class marker never occurs in
    /// text training, so it stays out of the prototype.
    std::vector<int> intent_label_tokens(std::size_t cls) const {
        const std::size_t cell = intent_cell(cls);
        return {pool_a[comp_a(cell)][0], pool_b[comp_b(cell)][0]};
    }
};

namespace detail {

inline std::vector<double> random_unit(Rng& rng, std::size_t d) {
    std::vector<double> v(d);
    double sq = 0.0;
    for (double& x : v) {
        x = rng.normal();
        sq += x * x;
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (double& x : v) x *= inv;
    return v;
}

inline double angle_deg(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] * b[i];
    d = std::max(-1.0, std::min(1.0, d));
    return std::acos(d) * 180.0 / 3.14159265358979323846;
}

}  // namespace detail

inline Universe build_universe(const CorpusConfig& cfg) {
    cfg.validate();
    Universe u;
    u.cfg = cfg;
    u.grid_a = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(cfg.topics))));
    u.grid_b = (cfg.topics + u.grid_a - 1) / u.grid_a;

    // Carve the vocabulary into pools.
    int next = kFirstContentId;
    auto take = [&](std::size_t n) {
        std::vector<int> ids(n);
        for (std::size_t i = 0; i < n; ++i) ids[i] = next++;
        return ids;
    };
    for (std::size_t a = 0; a < u.grid_a; ++a) u.pool_a.push_back(take(cfg.pool_tokens_query));
    for (std::size_t b = 0; b < u.grid_b; ++b) u.pool_b.push_back(take(cfg.pool_tokens_query));
    u.query_noise_pool = take(cfg.noise_tokens);
    for (std::size_t k = 0; k < cfg.keywords; ++k)
        u.keyword_phrases.push_back(take(cfg.keyword_phrase_len));
    u.identity_q = take(cfg.identity_pairs);
    u.intent_markers = take(cfg.intent_classes);
    for (std::size_t t = 0; t < cfg.topics; ++t) u.doc_pools.push_back(take(cfg.pool_tokens_doc));
    u.doc_noise_pool = take(cfg.noise_tokens);
    u.identity_d = take(cfg.identity_pairs);
    if (static_cast<std::size_t>(next) > cfg.vocab) {
        throw std::invalid_argument("gen_corpus: vocab of " + std::to_string(cfg.vocab) +
                                    " too small for requested topic count (needs " +
                                    std::to_string(next) + ")");
    }

    // Latent topics, pairwise separated by at least the configured floor.
    Rng latent_rng = Rng(cfg.seed).fork(1);
    for (std::size_t t = 0; t < cfg.topics; ++t) {
        for (int attempt = 0;; ++attempt) {
            require(attempt < 10000, "gen_corpus: cannot satisfy topic separation floor");
            auto cand = detail::random_unit(latent_rng, cfg.latent_dim);
            bool ok = true;
            for (const auto& prev : u.topic_latents) {
                if (detail::angle_deg(cand, prev) < cfg.min_topic_angle_deg) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                u.topic_latents.push_back(std::move(cand));
                break;
            }
        }
    }

    // Acoustic channel: each speakable token renders near its pool anchor
    // with a token-specific offset. Pool-level structure is what keeps the
    // channel learnable at a small frame width.
    Rng ac_rng = Rng(cfg.seed).fork(2);
    u.acoustic = Matrix(cfg.vocab, cfg.frame_width);
    auto paint = [&](const std::vector<int>& pool, double offset_scale) {
        std::vector<double> anchor(cfg.frame_width);
        for (double& v : anchor) v = ac_rng.normal(0.0, cfg.anchor_scale);
        for (int tok : pool) {
            for (std::size_t j = 0; j < cfg.frame_width; ++j) {
                u.acoustic.at(tok, j) = anchor[j] + ac_rng.normal(0.0, offset_scale);
            }
        }
    };
    for (const auto& p : u.pool_a) paint(p, cfg.token_offset_scale);
    for (const auto& p : u.pool_b) paint(p, cfg.token_offset_scale);
    paint(u.query_noise_pool, cfg.token_offset_scale);
    for (const auto& p : u.keyword_phrases) paint(p, cfg.token_offset_scale);
    // Identity and marker tokens carry fine-grained content: grouped under
    // shared anchors with wider per-token offsets so they stay acoustically
    // separable.
    auto paint_grouped = [&](const std::vector<int>& pool, std::size_t group) {
        for (std::size_t start = 0; start < pool.size(); start += group) {
            const std::size_t end = std::min(pool.size(), start + group);
            paint(std::vector<int>(pool.begin() + start, pool.begin() + end),
                  2.5 * cfg.token_offset_scale);
        }
    };
    paint_grouped(u.identity_q, 16);
    // Markers share one anchor at the regular offset scale: intent classes
    // must be learned, not read off the acoustics.
    paint(u.intent_markers, cfg.token_offset_scale);
    return u;
}

// ---- speech-quality proxies ------------------------------------------------

/// Render token ids as transcript text ("w12 w431 ...").
inline std::string token_text(const std::vector<int>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += "w" + std::to_string(tokens[i]);
    }
    return out;
}

/// Characters per second, the hesitation proxy. Leading/trailing
/// whitespace is not counted.
inline double chars_per_second(const std::string& transcript, double duration_s) {
    require(duration_s > 0.0, "chars_per_second: duration must be > 0");
    std::size_t b = 0, e = transcript.size();
    while (b < e && std::isspace(static_cast<unsigned char>(transcript[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(transcript[e - 1]))) --e;
    return static_cast<double>(e - b) / duration_s;
}

/// 20*log10(RMS) over samples in [-1, 1], floored at -120 dB for silence.
inline double mean_volume_db(const std::vector<double>& samples) {
    require(!samples.empty(), "mean_volume_db: empty signal");
    double sq = 0.0;
    for (double v : samples) sq += v * v;
    const double rms = std::sqrt(sq / static_cast<double>(samples.size()));
    if (rms <= 1e-6) return -120.0;
    return std::max(-120.0, 20.0 * std::log10(rms));
}

inline double mean_volume_db(const Matrix& frames) { return mean_volume_db(frames.data); }

// ---- segment filtering -------------------------------------------------------

struct Segment {
    double duration_s = 0.0;
    double quality_score = 0.0;
};

struct SegmentFilterResult {
    std::vector<std::size_t> kept;
    struct Rejection {
        std::size_t index;
        std::string rule;  // "duration" or "score"
    };
    std::vector<Rejection> rejected;
};

/// Keep segments between 3 and 30 seconds with a quality score strictly
/// above 3.2; log which rule rejected the rest.
inline SegmentFilterResult filter_segments(const std::vector<Segment>& segments) {
    SegmentFilterResult res;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const Segment& s = segments[i];
        require(s.duration_s >= 0.0,
                "filter_segments: negative duration at index " + std::to_string(i));
        if (s.duration_s < 3.0 || s.duration_s > 30.0) {
            res.rejected.push_back({i, "duration"});
        } else if (!(s.quality_score > 3.2)) {
            res.rejected.push_back({i, "score"});
        } else {
            res.kept.push_back(i);
        }
    }
    return res;
}

// ---- transcription corruption ----------------------------------------------

/// Pipelined-baseline noise model: each token independently replaced by a
/// uniformly random vocabulary token with the given probability.
inline std::vector<int> corrupt_transcription(const std::vector<int>& tokens, double rate,
                                              std::uint64_t seed, std::size_t vocab) {
    require(rate >= 0.0 && rate <= 1.0, "corrupt_transcription: rate must be in [0, 1]");
    std::vector<int> out = tokens;
    if (rate == 0.0) return out;
    Rng rng(seed);
    for (int& tok : out) {
        if (rng.bernoulli(rate)) tok = static_cast<int>(rng.uniform_u64(vocab));
    }
    return out;
}

// ---- example generation -------------------------------------------------------

namespace detail {

inline std::vector<int> sample_query_tokens(const Universe& u, std::size_t topic, Rng& rng) {
    const CorpusConfig& c = u.cfg;
    const std::size_t len = c.query_len_min + rng.index(c.query_len_max - c.query_len_min + 1);
    std::vector<int> out;
    out.reserve(len);
    std::size_t content = 0;
    for (std::size_t i = 0; i < len; ++i) {
        if (rng.bernoulli(c.query_noise_rate)) {
            out.push_back(u.query_noise_pool[rng.index(u.query_noise_pool.size())]);
            continue;
        }
        // Alternate the two component pools; the combination carries the topic.
        const auto& pool = (content % 2 == 0) ? u.pool_a[u.comp_a(topic)]
                                              : u.pool_b[u.comp_b(topic)];
        out.push_back(pool[rng.index(pool.size())]);
        ++content;
    }
    return out;
}

/// Scatter `repeats` occurrences of each token into the sequence at seeded
/// positions.
inline void insert_tokens(std::vector<int>& seq, const std::vector<int>& tokens,
                          std::size_t repeats, Rng& rng) {
    for (int tok : tokens) {
        for (std::size_t r = 0; r < repeats; ++r) {
            seq.insert(seq.begin() + rng.index(seq.size() + 1), tok);
        }
    }
}

/// Draw the example's identity pairs: the query-side tokens name the
/// document across the language boundary.
inline std::vector<std::size_t> draw_identity(const Universe& u, Rng& rng) {
    const CorpusConfig& c = u.cfg;
    std::vector<std::size_t> picks;
    while (picks.size() < c.identity_per_example) {
        const std::size_t cand = rng.index(c.identity_pairs);
        bool seen = false;
        for (std::size_t p : picks) seen = seen || p == cand;
        if (!seen) picks.push_back(cand);
    }
    return picks;
}

inline std::vector<int> sample_doc_tokens(const Universe& u, std::size_t topic, Rng& rng,
                                          double len_factor) {
    const CorpusConfig& c = u.cfg;
    const std::size_t qlen = c.query_len_min + rng.index(c.query_len_max - c.query_len_min + 1);
    const std::size_t len = std::max<std::size_t>(2, static_cast<std::size_t>(
                                                         std::lround(qlen * len_factor)));
    std::vector<int> out;
    out.reserve(len);
    const auto& pool = u.doc_pools[topic];
    for (std::size_t i = 0; i < len; ++i) {
        if (rng.bernoulli(c.doc_noise_rate)) {
            out.push_back(u.doc_noise_pool[rng.index(u.doc_noise_pool.size())]);
        } else {
            out.push_back(pool[rng.index(pool.size())]);
        }
    }
    return out;
}

/// Acoustic rendering: every transcription token becomes frames_per_token
/// noisy frames near its acoustic row; hesitation inserts low-energy
/// fillers; the volume offset scales the finished signal.
inline Matrix render_frames(const Universe& u, const std::vector<int>& transcription,
                            const QualityProfile& profile, Rng& rng) {
    const CorpusConfig& c = u.cfg;
    const std::size_t base = transcription.size() * c.frames_per_token;
    const std::size_t total = static_cast<std::size_t>(std::llround(profile.hesitation * base));
    const std::size_t fillers = total - base;

    std::vector<std::vector<double>> rows;
    rows.reserve(total);
    for (int tok : transcription) {
        for (std::size_t f = 0; f < c.frames_per_token; ++f) {
            std::vector<double> row(c.frame_width);
            for (std::size_t j = 0; j < c.frame_width; ++j)
                row[j] = u.acoustic.at(tok, j) + rng.normal(0.0, profile.noise_sigma);
            rows.push_back(std::move(row));
        }
    }
    for (std::size_t f = 0; f < fillers; ++f) {
        std::vector<double> row(c.frame_width);
        for (double& v : row) v = rng.normal(0.0, c.filler_scale);
        const std::size_t pos = rng.index(rows.size() + 1);
        rows.insert(rows.begin() + pos, std::move(row));
    }

    const double gain = std::pow(10.0, profile.volume_db / 20.0);
    Matrix frames(rows.size(), c.frame_width);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < c.frame_width; ++j) {
            double v = rows[i][j] * gain;
            v = std::max(-0.98, std::min(0.98, v));
            frames.at(i, j) = half_round_trip(v);  // corpus frames live on the binary16 grid
        }
    }
    return frames;
}

inline PairedExample make_example(const Universe& u, std::size_t topic, Task task,
                                  const QualityProfile& profile, std::uint64_t id, Rng rng) {
    const CorpusConfig& c = u.cfg;
    PairedExample ex;
    ex.id = id;
    ex.topic = static_cast<int>(topic);
    ex.task = task;
    const std::vector<std::size_t> identity = draw_identity(u, rng);
    std::vector<int> id_q, id_d;
    for (std::size_t i : identity) {
        id_q.push_back(u.identity_q[i]);
        id_d.push_back(u.identity_d[i]);
    }
    ex.query_tokens = sample_query_tokens(u, topic, rng);
    insert_tokens(ex.query_tokens, id_q, c.identity_query_repeats, rng);
    ex.transcription = sample_query_tokens(u, topic, rng);
    insert_tokens(ex.transcription, id_q, c.identity_query_repeats, rng);
    switch (task) {
        case Task::kDocumentRetrieval:
            ex.document = sample_doc_tokens(u, topic, rng, c.doc_len_factor);
            insert_tokens(ex.document, id_d, c.identity_doc_repeats, rng);
            break;
        case Task::kTranscriptionRetrieval:
            ex.document = ex.transcription;
            break;
        case Task::kTranslationRetrieval:
            ex.document = sample_doc_tokens(u, topic, rng, 1.0);
            insert_tokens(ex.document, id_d, c.identity_doc_repeats, rng);
            break;
    }
    ex.frames = render_frames(u, ex.transcription, profile, rng);
    ex.duration_s = static_cast<double>(ex.frames.rows) / c.frame_rate;
    ex.quality_score = std::max(0.0, rng.normal(c.score_mean, c.score_sd));
    return ex;
}

/// Intent-task example: a topic-cell query carrying the class marker. The
/// marker pool never appears in retrieval training, so intent detection is
/// a genuinely unseen task.
inline PairedExample make_intent_example(const Universe& u, std::size_t cls,
                                         const QualityProfile& profile, std::uint64_t id,
                                         Rng rng) {
    const CorpusConfig& c = u.cfg;
    PairedExample ex;
    ex.id = id;
    ex.topic = static_cast<int>(u.intent_cell(cls));
    ex.intent_label = static_cast<int>(cls);
    ex.task = Task::kTranscriptionRetrieval;
    const std::vector<int> marker{u.intent_markers[cls]};
    ex.query_tokens = sample_query_tokens(u, u.intent_cell(cls), rng);
    insert_tokens(ex.query_tokens, marker, 2, rng);
    ex.transcription = sample_query_tokens(u, u.intent_cell(cls), rng);
    insert_tokens(ex.transcription, marker, 2, rng);
    ex.document = ex.transcription;
    ex.frames = render_frames(u, ex.transcription, profile, rng);
    ex.duration_s = static_cast<double>(ex.frames.rows) / c.frame_rate;
    ex.quality_score = std::max(0.0, rng.normal(c.score_mean, c.score_sd));
    return ex;
}

}  // namespace detail

struct CorpusBundle {
    Universe universe;
    std::vector<PairedExample> train;
    std::vector<PairedExample> eval;
    std::vector<PairedExample> kws;     // intent_label = keyword id
    std::vector<PairedExample> intent;  // intent_label = class id
    std::vector<std::pair<std::uint64_t, std::string>> rejected;  // (example id, rule)
};

/// Deterministic corpus generation: equal configs (and seeds) produce
/// byte-identical bundles. The retrieval splits pass through the segment
/// quality filter; the task splits (keywords, intents) are curated sets and
/// skip it.
inline CorpusBundle gen_corpus(const CorpusConfig& cfg) {
    CorpusBundle bundle;
    bundle.universe = build_universe(cfg);
    const Universe& u = bundle.universe;
    const Rng root(cfg.seed);

    auto retrieval_split = [&](std::size_t per_topic, std::uint64_t salt_base,
                               std::uint64_t id_base, bool force_doc_task) {
        std::vector<PairedExample> out;
        std::uint64_t idx = 0;
        for (std::size_t t = 0; t < cfg.topics; ++t) {
            for (std::size_t i = 0; i < per_topic; ++i, ++idx) {
                Rng rng = root.fork(salt_base + idx);
                Task task = Task::kDocumentRetrieval;
                const double r = rng.uniform();
                if (!force_doc_task && r < cfg.task_transcription) {
                    task = Task::kTranscriptionRetrieval;
                } else if (!force_doc_task &&
                           r < cfg.task_transcription + cfg.task_translation) {
                    task = Task::kTranslationRetrieval;
                }
                out.push_back(
                    detail::make_example(u, t, task, cfg.profile, id_base + idx, rng));
            }
        }
        return out;
    };

    bundle.train = retrieval_split(cfg.examples_per_topic, 10'000'000, 1'000'000, false);
    // Held-out evaluation ranks documents only.
    bundle.eval = retrieval_split(cfg.eval_per_topic, 20'000'000, 2'000'000, true);

    // The 3-30s quality filter models the speech-query collection pipeline;
    // it applies to the retrieval splits only. The task splits below are
    // curated sets (short keyword utterances would never survive it).
    if (cfg.quality_filter) {
        auto apply = [&](std::vector<PairedExample>& split) {
            std::vector<Segment> segs;
            segs.reserve(split.size());
            for (const auto& ex : split) segs.push_back({ex.duration_s, ex.quality_score});
            const auto res = filter_segments(segs);
            for (const auto& rej : res.rejected)
                bundle.rejected.emplace_back(split[rej.index].id, rej.rule);
            std::vector<PairedExample> kept;
            kept.reserve(res.kept.size());
            for (std::size_t i : res.kept) kept.push_back(std::move(split[i]));
            split = std::move(kept);
        };
        apply(bundle.train);
        apply(bundle.eval);
    }

    // Keyword utterances: the phrase is the transcription, the target is
    // the phrase text itself (transcription retrieval).
    std::uint64_t idx = 0;
    for (std::size_t k = 0; k < cfg.keywords; ++k) {
        for (std::size_t rep = 0; rep < cfg.keyword_train_per + cfg.keyword_eval_per;
             ++rep, ++idx) {
            Rng rng = root.fork(30'000'000 + idx);
            PairedExample ex;
            ex.id = 3'000'000 + idx;
            ex.topic = -1;
            ex.intent_label = static_cast<int>(k);
            ex.task = Task::kTranscriptionRetrieval;
            ex.query_tokens = u.keyword_phrases[k];
            ex.transcription = u.keyword_phrases[k];
            ex.document = u.keyword_phrases[k];
            ex.frames = detail::render_frames(u, ex.transcription, cfg.profile, rng);
            ex.duration_s = static_cast<double>(ex.frames.rows) / cfg.frame_rate;
            ex.quality_score = std::max(0.0, rng.normal(cfg.score_mean, cfg.score_sd));
            if (rep < cfg.keyword_train_per) {
                bundle.train.push_back(std::move(ex));
            } else {
                bundle.kws.push_back(std::move(ex));
            }
        }
    }

    // Intent split: cell-sharing classes with unseen marker tokens.
    idx = 0;
    for (std::size_t c = 0; c < cfg.intent_classes; ++c) {
        for (std::size_t i = 0; i < cfg.intent_examples_per_class; ++i, ++idx) {
            Rng rng = root.fork(40'000'000 + idx);
            bundle.intent.push_back(
                detail::make_intent_example(u, c, cfg.profile, 4'000'000 + idx, rng));
        }
    }

    return bundle;
}

/// Ratio of unique to total words over a token sequence (the lexical
/// diversity statistic used for transcript filtering elsewhere).
inline double lexical_diversity(const std::vector<int>& tokens) {
    if (tokens.empty()) return 0.0;
    std::vector<int> sorted = tokens;
    std::sort(sorted.begin(), sorted.end());
    std::size_t unique = 1;
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i] != sorted[i - 1]) ++unique;
    return static_cast<double>(unique) / static_cast<double>(tokens.size());
}

}  // namespace matz
