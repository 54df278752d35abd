#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "matz/losses.hpp"
#include "matz/numeric.hpp"
#include "matz/params.hpp"
#include "matz/rng.hpp"

namespace matz {

enum class Variant { kTextOnly, kLateFusion, kDualRetrieval, kDualAlignment };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::kTextOnly: return "text-only";
        case Variant::kLateFusion: return "late-fusion";
        case Variant::kDualRetrieval: return "dual-retrieval";
        case Variant::kDualAlignment: return "dual-alignment";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "text-only") return Variant::kTextOnly;
    if (s == "late-fusion") return Variant::kLateFusion;
    if (s == "dual-retrieval") return Variant::kDualRetrieval;
    if (s == "dual-alignment") return Variant::kDualAlignment;
    throw std::invalid_argument("unknown model variant: " + s);
}

/// Task prompts understood by the prompt-capable encoders. These are real
/// vocabulary entries so prompting is ordinary token conditioning.
enum class TaskPrompt : int { kNone = -1, kDocument = 1, kTranscription = 2, kTranslation = 3 };

inline constexpr int kEosId = 0;
inline constexpr int kFirstContentId = 8;

struct ModelConfig {
    std::size_t vocab = 512;
    std::size_t hidden = 64;   // embedding width; also d_max
    std::size_t blocks = 2;
    std::size_t ffn = 128;
    std::size_t max_len = 96;  // tokens + prompt + EOS
    std::vector<std::size_t> dims{8, 16, 32, 64};
    std::size_t frame_dim = 16;
    std::size_t layer_mult = 4;  // stand-in for stacking several feature layers
    std::size_t conv_channels = 64;
    bool normalize_prefix = true;
    std::uint64_t init_seed = 7;

    std::size_t frame_width() const { return frame_dim * layer_mult; }

    void validate() const {
        require(vocab > kFirstContentId, "ModelConfig: vocab too small");
        require(hidden >= 2 && blocks >= 1 && ffn >= 1, "ModelConfig: degenerate sizes");
        require(!dims.empty(), "ModelConfig: dims must be nonempty");
        for (std::size_t i = 1; i < dims.size(); ++i)
            require(dims[i] > dims[i - 1], "ModelConfig: dims must be strictly increasing");
        require(dims.back() == hidden, "ModelConfig: largest Matryoshka dim must equal hidden");
        require(max_len >= 4, "ModelConfig: max_len too small");
    }

    bool dim_configured(std::size_t d) const {
        for (std::size_t x : dims) {
            if (x == d) return true;
        }
        return false;
    }
};

/// The toy encoder zoo. One instance may carry any subset of components:
/// the text stack ("text.*"), the speech frontend ("frontend.*"), and the
/// pooler+heads of the dual path ("pooler.*", "head.*"). Which ones exist
/// is decided by the variant at init time.
struct Model {
    ModelConfig cfg;
    Variant variant = Variant::kTextOnly;
    ParamSet params;

    bool has(const std::string& name) const { return params.count(name) > 0; }
};

namespace detail {

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double stddev) {
    Matrix m(r, c);
    for (double& v : m.data) v = rng.normal(0.0, stddev);
    return m;
}

inline void init_text_stack(Model& m, Rng& rng) {
    const auto& c = m.cfg;
    const double wscale = 1.0 / std::sqrt(static_cast<double>(c.hidden));
    m.params["text.embed"] = random_matrix(rng, c.vocab, c.hidden, 0.3);
    for (std::size_t b = 0; b < c.blocks; ++b) {
        const std::string p = "text.b" + std::to_string(b) + ".";
        m.params[p + "attn.wq"] = random_matrix(rng, c.hidden, c.hidden, wscale);
        m.params[p + "attn.wk"] = random_matrix(rng, c.hidden, c.hidden, wscale);
        m.params[p + "attn.wv"] = random_matrix(rng, c.hidden, c.hidden, wscale);
        m.params[p + "attn.wo"] = random_matrix(rng, c.hidden, c.hidden, wscale);
        m.params[p + "norm1.g"] = Matrix(1, c.hidden, 1.0);
        m.params[p + "norm2.g"] = Matrix(1, c.hidden, 1.0);
        m.params[p + "ffn.w1"] = random_matrix(rng, c.hidden, c.ffn, wscale);
        m.params[p + "ffn.b1"] = Matrix(1, c.ffn, 0.0);
        m.params[p + "ffn.w2"] =
            random_matrix(rng, c.ffn, c.hidden, 1.0 / std::sqrt(static_cast<double>(c.ffn)));
        m.params[p + "ffn.b2"] = Matrix(1, c.hidden, 0.0);
    }
    m.params["text.final_norm.g"] = Matrix(1, c.hidden, 1.0);
}

inline void init_frontend(Model& m, Rng& rng) {
    const auto& c = m.cfg;
    const std::size_t fw = c.frame_width();
    m.params["frontend.conv.w"] =
        random_matrix(rng, 3 * fw, c.conv_channels, 1.0 / std::sqrt(3.0 * fw));
    m.params["frontend.conv.b"] = Matrix(1, c.conv_channels, 0.0);
    m.params["frontend.proj"] = random_matrix(rng, c.conv_channels, c.hidden,
                                              1.0 / std::sqrt(static_cast<double>(c.conv_channels)));
}

inline void init_dual_head(Model& m, Rng& rng) {
    const auto& c = m.cfg;
    m.params["pooler.q"] = random_matrix(rng, 1, c.hidden, 0.1);
    for (std::size_t d : c.dims) {
        m.params["head.d" + std::to_string(d)] = random_matrix(
            rng, c.hidden, d, 1.0 / std::sqrt(static_cast<double>(c.hidden)));
    }
}

}  // namespace detail

inline Model make_model(const ModelConfig& cfg, Variant variant) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.variant = variant;
    Rng rng(cfg.init_seed);
    detail::init_text_stack(m, rng);
    if (variant != Variant::kTextOnly) detail::init_frontend(m, rng);
    if (variant == Variant::kDualRetrieval || variant == Variant::kDualAlignment)
        detail::init_dual_head(m, rng);
    return m;
}

// ---- tape-level forward passes --------------------------------------------

namespace ad {

/// softmax(q x^T / sqrt(d)) x with a learnable 1xd query.
inline Var attention_pool(Var x, Var q) {
    Tape& t = *x.tape;
    const std::size_t d = t.value(x.id).cols;
    require(t.value(q.id).rows == 1 && t.value(q.id).cols == d,
            "attention_pool: query must be 1 x d");
    require(t.value(x.id).rows >= 1, "attention_pool: empty sequence");
    Var logits = scale(matmul_nt(q, x), 1.0 / std::sqrt(static_cast<double>(d)));
    return matmul(row_softmax(logits), x);
}

/// One pre-norm transformer block: x += attn(rms(x)); x += ffn(rms(x)).
inline Var text_block(Var x, const VarMap& v, const std::string& p, std::size_t hidden) {
    Var n1 = rmsnorm(x, v.at(p + "norm1.g"));
    Var q = matmul(n1, v.at(p + "attn.wq"));
    Var k = matmul(n1, v.at(p + "attn.wk"));
    Var val = matmul(n1, v.at(p + "attn.wv"));
    Var attn_w = row_softmax(scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(hidden))));
    Var attn = matmul(matmul(attn_w, val), v.at(p + "attn.wo"));
    x = add(x, attn);
    Var n2 = rmsnorm(x, v.at(p + "norm2.g"));
    Var h = gelu(add_row(matmul(n2, v.at(p + "ffn.w1")), v.at(p + "ffn.b1")));
    Var ffn = add_row(matmul(h, v.at(p + "ffn.w2")), v.at(p + "ffn.b2"));
    return add(x, ffn);
}

/// Run the text stack over a ready-made input sequence and pool the final
/// token. Returns a unit-norm 1 x hidden embedding.
inline Var text_stack(Var seq, const VarMap& v, const ModelConfig& cfg) {
    Var x = seq;
    for (std::size_t b = 0; b < cfg.blocks; ++b)
        x = text_block(x, v, "text.b" + std::to_string(b) + ".", cfg.hidden);
    x = rmsnorm(x, v.at("text.final_norm.g"));
    Var last = select_row(x, x.tape->value(x.id).rows - 1);
    return normalize_rows(last);
}

inline std::vector<int> with_prompt_and_eos(const ModelConfig& cfg, const std::vector<int>& tokens,
                                            TaskPrompt prompt) {
    for (int id : tokens) {
        require(id >= 0 && static_cast<std::size_t>(id) < cfg.vocab,
                "encode: unknown token id " + std::to_string(id));
    }
    std::vector<int> seq;
    seq.reserve(tokens.size() + 2);
    if (prompt != TaskPrompt::kNone) seq.push_back(static_cast<int>(prompt));
    seq.insert(seq.end(), tokens.begin(), tokens.end());
    seq.push_back(kEosId);
    require(seq.size() <= cfg.max_len,
            "encode: sequence of " + std::to_string(seq.size()) + " tokens exceeds max length " +
                std::to_string(cfg.max_len) + "; truncation required before encoding");
    return seq;
}

/// Text path: [prompt] tokens [eos] -> stack -> final token -> normalize.
inline Var encode_text(Tape& t, const VarMap& v, const ModelConfig& cfg,
                       const std::vector<int>& tokens, TaskPrompt prompt) {
    require(!tokens.empty(), "encode_text: empty token sequence");
    const std::vector<int> seq = with_prompt_and_eos(cfg, tokens, prompt);
    Var x = embed_rows(v.at("text.embed"), seq);
    return text_stack(x, v, cfg);
}

/// Speech frontend: stride-2 kernel-3 convolution, GELU, projection into
/// the token-embedding width. S frames become ceil(S/2) positions.
inline Var frontend(Tape& t, const VarMap& v, const ModelConfig& cfg, const Matrix& frames) {
    require(frames.rows >= 1, "frontend: empty frame sequence");
    require(frames.cols == cfg.frame_width(),
            "frontend: frame width " + std::to_string(frames.cols) + " != configured " +
                std::to_string(cfg.frame_width()));
    Var x = input(t, frames);
    Var patches = im2col_k3s2(x);
    Var z = gelu(add_row(matmul(patches, v.at("frontend.conv.w")), v.at("frontend.conv.b")));
    return matmul(z, v.at("frontend.proj"));
}

/// Late fusion: projected speech positions, then the prompt tokens, then
/// EOS, all run through the (typically frozen) text stack.
inline Var encode_speech_late_fusion(Tape& t, const VarMap& v, const ModelConfig& cfg,
                                     const Matrix& frames, TaskPrompt prompt) {
    Var speech = frontend(t, v, cfg, frames);
    std::vector<int> tail;
    if (prompt != TaskPrompt::kNone) tail.push_back(static_cast<int>(prompt));
    tail.push_back(kEosId);
    require(t.value(speech.id).rows + tail.size() <= cfg.max_len,
            "encode_speech_late_fusion: fused sequence exceeds max length");
    Var tail_emb = embed_rows(v.at("text.embed"), tail);
    Var seq = concat_rows({speech, tail_emb});
    return text_stack(seq, v, cfg);
}

/// Dual path shared trunk: frontend then attention pooling. 1 x hidden.
inline Var dual_pooled(Tape& t, const VarMap& v, const ModelConfig& cfg, const Matrix& frames) {
    Var fr = frontend(t, v, cfg, frames);
    return attention_pool(fr, v.at("pooler.q"));
}

/// Dimension-specific projection head, unit-normalized.
inline Var dual_head(Var pooled, const VarMap& v, std::size_t dim) {
    return normalize_rows(matmul(pooled, v.at("head.d" + std::to_string(dim))));
}

}  // namespace ad

// ---- value-level encoding API ---------------------------------------------

inline std::vector<double> row_to_vector(const Matrix& m) {
    return std::vector<double>(m.data.begin(), m.data.end());
}

/// Encode a token sequence to a unit vector of length d_max.
inline std::vector<double> encode_text(const Model& model, const std::vector<int>& tokens,
                                       TaskPrompt prompt = TaskPrompt::kNone) {
    ad::Tape tape;
    ad::VarMap vars = ad::bind_params(tape, model.params, [](const std::string&) { return false; });
    ad::Var e = ad::encode_text(tape, vars, model.cfg, tokens, prompt);
    return row_to_vector(tape.value(e.id));
}

inline std::vector<double> encode_speech_late_fusion(const Model& model, const Matrix& frames,
                                                     TaskPrompt prompt) {
    require(model.has("frontend.proj"), "encode_speech_late_fusion: model has no speech frontend");
    ad::Tape tape;
    ad::VarMap vars = ad::bind_params(tape, model.params, [](const std::string&) { return false; });
    ad::Var e = ad::encode_speech_late_fusion(tape, vars, model.cfg, frames, prompt);
    return row_to_vector(tape.value(e.id));
}

/// Dual path: one unit vector per configured Matryoshka dimension.
inline std::map<std::size_t, std::vector<double>> encode_speech_dual(const Model& model,
                                                                     const Matrix& frames) {
    require(model.has("pooler.q"), "encode_speech_dual: model has no dual head");
    ad::Tape tape;
    ad::VarMap vars = ad::bind_params(tape, model.params, [](const std::string&) { return false; });
    ad::Var pooled = ad::dual_pooled(tape, vars, model.cfg, frames);
    std::map<std::size_t, std::vector<double>> out;
    for (std::size_t d : model.cfg.dims) {
        ad::Var e = ad::dual_head(pooled, vars, d);
        out[d] = row_to_vector(tape.value(e.id));
    }
    return out;
}

/// Value-level attention pooling (the spec'd standalone operation).
inline std::vector<double> attention_pool(const Matrix& x, const Matrix& q) {
    ad::Tape tape;
    ad::Var out = ad::attention_pool(ad::input(tape, x), ad::input(tape, q));
    return row_to_vector(tape.value(out.id));
}

/// First d coordinates of a full-width embedding, re-normalized by default.
/// d must be one of the configured Matryoshka dimensions.
inline std::vector<double> slice_prefix(const std::vector<double>& e, std::size_t d,
                                        const ModelConfig& cfg) {
    require(cfg.dim_configured(d), "slice_prefix: dim " + std::to_string(d) + " not configured");
    require(d <= e.size(), "slice_prefix: dim exceeds vector length");
    std::vector<double> out(e.begin(), e.begin() + d);
    if (cfg.normalize_prefix) {
        double sq = 0.0;
        for (double v : out) sq += v * v;
        if (sq > 0.0) {
            const double inv = 1.0 / std::sqrt(sq);
            for (double& v : out) v *= inv;
        }
    }
    return out;
}

}  // namespace matz
