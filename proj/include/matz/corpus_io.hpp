#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "matz/half.hpp"
#include "matz/io.hpp"
#include "matz/synth.hpp"

namespace matz {

/// Line-delimited corpus format: line 1 is a schema header, every further
/// line is one example. Frames are stored inline as base-16 binary16
/// halfwords (4 hex digits each, row-major), which round-trips exactly
/// because generated frames already live on the binary16 grid.

inline constexpr int kCorpusSchemaVersion = 1;

namespace detail {

inline std::string frames_to_hex(const Matrix& frames) {
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(frames.data.size() * 4);
    for (double v : frames.data) {
        const std::uint16_t h = half_encode(v).bits;
        out.push_back(hex[(h >> 12) & 0xf]);
        out.push_back(hex[(h >> 8) & 0xf]);
        out.push_back(hex[(h >> 4) & 0xf]);
        out.push_back(hex[h & 0xf]);
    }
    return out;
}

inline Matrix frames_from_hex(const std::string& s, std::size_t width) {
    require(s.size() % 4 == 0, "corpus: frame hex length not a multiple of 4");
    const std::size_t count = s.size() / 4;
    require(width > 0 && count % width == 0, "corpus: frame count not a multiple of width");
    auto nibble = [](char c) -> std::uint16_t {
        if (c >= '0' && c <= '9') return static_cast<std::uint16_t>(c - '0');
        if (c >= 'a' && c <= 'f') return static_cast<std::uint16_t>(c - 'a' + 10);
        if (c >= 'A' && c <= 'F') return static_cast<std::uint16_t>(c - 'A' + 10);
        throw std::invalid_argument("corpus: bad hex digit in frames");
    };
    Matrix m(count / width, width);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint16_t h = static_cast<std::uint16_t>(
            (nibble(s[4 * i]) << 12) | (nibble(s[4 * i + 1]) << 8) | (nibble(s[4 * i + 2]) << 4) |
            nibble(s[4 * i + 3]));
        m.data[i] = half_decode(h);
    }
    return m;
}

}  // namespace detail

inline nlohmann::json example_to_json(const PairedExample& ex) {
    nlohmann::json j;
    j["id"] = ex.id;
    j["topic"] = ex.topic;
    j["label"] = ex.intent_label;
    j["task"] = static_cast<int>(ex.task);
    j["grade"] = ex.relevance;
    j["query"] = ex.query_tokens;
    j["transcription"] = ex.transcription;
    j["document"] = ex.document;
    j["duration_s"] = ex.duration_s;
    j["score"] = ex.quality_score;
    j["frames"] = detail::frames_to_hex(ex.frames);
    return j;
}

inline PairedExample example_from_json(const nlohmann::json& j, std::size_t frame_width) {
    PairedExample ex;
    ex.id = j.at("id").get<std::uint64_t>();
    ex.topic = j.at("topic").get<int>();
    ex.intent_label = j.at("label").get<int>();
    ex.task = static_cast<Task>(j.at("task").get<int>());
    ex.relevance = j.at("grade").get<int>();
    ex.query_tokens = j.at("query").get<std::vector<int>>();
    ex.transcription = j.at("transcription").get<std::vector<int>>();
    ex.document = j.at("document").get<std::vector<int>>();
    ex.duration_s = j.at("duration_s").get<double>();
    ex.quality_score = j.at("score").get<double>();
    ex.frames = detail::frames_from_hex(j.at("frames").get<std::string>(), frame_width);
    return ex;
}

struct CorpusSplitFile {
    nlohmann::json header;
    std::vector<PairedExample> examples;
};

inline std::string corpus_to_jsonl(const std::vector<PairedExample>& examples,
                                   const Universe& universe, const std::string& split_name) {
    const CorpusConfig& cfg = universe.cfg;
    nlohmann::json header;
    header["schema"] = "matz-corpus";
    header["version"] = kCorpusSchemaVersion;
    header["split"] = split_name;
    header["seed"] = cfg.seed;
    header["vocab"] = cfg.vocab;
    header["frame_width"] = cfg.frame_width;
    header["frame_rate"] = cfg.frame_rate;
    header["topics"] = cfg.topics;
    header["intent_classes"] = cfg.intent_classes;
    if (split_name == "kws") header["keyword_phrases"] = universe.keyword_phrases;
    if (split_name == "intent") {
        std::vector<std::vector<int>> labels;
        for (std::size_t c = 0; c < cfg.intent_classes; ++c)
            labels.push_back(universe.intent_label_tokens(c));
        header["label_tokens"] = labels;
    }

    std::string out = header.dump();
    out.push_back('\n');
    for (const auto& ex : examples) {
        out += example_to_json(ex).dump();
        out.push_back('\n');
    }
    return out;
}

inline CorpusSplitFile corpus_from_jsonl(const std::string& text) {
    CorpusSplitFile file;
    std::size_t pos = 0;
    bool first = true;
    std::size_t frame_width = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        const std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        if (first) {
            require(j.value("schema", "") == std::string("matz-corpus"),
                    "corpus: missing or wrong schema header on line 1");
            require(j.value("version", -1) == kCorpusSchemaVersion,
                    "corpus: unsupported schema version");
            frame_width = j.at("frame_width").get<std::size_t>();
            file.header = std::move(j);
            first = false;
            continue;
        }
        file.examples.push_back(example_from_json(j, frame_width));
    }
    require(!first, "corpus: empty file (no schema header)");
    return file;
}

inline void save_corpus(const std::string& path, const std::vector<PairedExample>& examples,
                        const Universe& universe, const std::string& split_name) {
    write_file_text(path, corpus_to_jsonl(examples, universe, split_name));
}

inline CorpusSplitFile load_corpus(const std::string& path) {
    return corpus_from_jsonl(read_file_text(path));
}

}  // namespace matz
