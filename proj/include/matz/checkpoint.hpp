#pragma once

#include <string>

#include "matz/io.hpp"
#include "matz/params.hpp"

namespace matz {

/// Versioned binary container for model weights.
///
///   "MATZOO1" | u32 version | u64 param count |
///   per param: u32 name length | name bytes | u64 rows | u64 cols | f64 data
///
/// Everything little-endian. Round trips are bit-exact.

inline constexpr char kCheckpointMagic[] = "MATZOO1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> serialize_params(const ParamSet& params) {
    ByteWriter w;
    w.str(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u64(params.size());
    for (const auto& [name, m] : params) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.str(name);
        w.u64(m.rows);
        w.u64(m.cols);
        for (double v : m.data) w.f64(v);
    }
    return w.take();
}

inline ParamSet deserialize_params(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    const std::string magic = r.str(7);
    if (magic != kCheckpointMagic) {
        throw std::runtime_error("checkpoint: bad magic at offset 0 (got \"" + magic + "\")");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                                 " at offset 7");
    }
    const std::uint64_t count = r.u64();
    ParamSet params;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.str(name_len);
        Matrix m;
        m.rows = r.u64();
        m.cols = r.u64();
        m.data.resize(m.rows * m.cols);
        for (double& v : m.data) v = r.f64();
        if (!params.emplace(name, std::move(m)).second) {
            throw std::runtime_error("checkpoint: duplicate parameter \"" + name + "\"");
        }
    }
    if (r.remaining() != 0) {
        throw std::runtime_error("checkpoint: " + std::to_string(r.remaining()) +
                                 " trailing bytes at offset " + std::to_string(r.offset()));
    }
    return params;
}

inline void save_checkpoint(const std::string& path, const ParamSet& params) {
    write_file_bytes(path, serialize_params(params));
}

inline ParamSet load_checkpoint(const std::string& path) {
    return deserialize_params(read_file_bytes(path));
}

}  // namespace matz
