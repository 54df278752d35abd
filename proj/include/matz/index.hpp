#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "matz/half.hpp"
#include "matz/io.hpp"
#include "matz/matrix.hpp"

namespace matz {

/// Immutable store of half-precision document embeddings, searchable at any
/// configured Matryoshka prefix width. File format ("MATIDX1"):
///
///   magic(7) | u32 version | u64 d_max | u32 dim count | u64 dims[] |
///   u64 doc count | u64 timestamp | u64 doc ids[] | u16 embeddings[]
///
/// all little-endian, embeddings row-major. The timestamp is caller-supplied
/// so reproducible pipelines can pin it (the CLI uses 0).
struct IndexShard {
    std::uint32_t version = 1;
    std::uint64_t d_max = 0;
    std::vector<std::uint64_t> dims;
    std::uint64_t timestamp = 0;
    std::vector<std::uint64_t> doc_ids;
    std::vector<std::uint16_t> payload;  // doc count x d_max halfwords

    std::size_t size() const { return doc_ids.size(); }

    bool dim_configured(std::size_t d) const {
        for (std::uint64_t x : dims) {
            if (x == d) return true;
        }
        return false;
    }
};

inline constexpr char kShardMagic[] = "MATIDX1";

/// Bytes a shard with these dimensions occupies on disk.
inline std::size_t shard_file_bytes(std::size_t doc_count, std::size_t d_max,
                                    std::size_t dim_count) {
    return 7 + 4 + 8 + 4 + 8 * dim_count + 8 + 8 + 8 * doc_count + 2 * doc_count * d_max;
}

struct BuildStats {
    double seconds = 0.0;
    double docs_per_second = 0.0;
    std::size_t clamped_values = 0;  // inputs beyond the binary16 range
};

/// Quantize unit-norm document vectors into a shard. Rejects duplicate ids
/// and width mismatches; out-of-range values clamp to +-65504 and are
/// counted in the stats.
inline IndexShard build_shard(const std::vector<std::uint64_t>& ids, const Matrix& vectors,
                              const std::vector<std::size_t>& dims, std::uint64_t timestamp = 0,
                              BuildStats* stats = nullptr) {
    require(ids.size() == vectors.rows, "build_shard: id/vector count mismatch");
    require(!dims.empty(), "build_shard: no Matryoshka dims configured");
    for (std::size_t i = 1; i < dims.size(); ++i)
        require(dims[i] > dims[i - 1], "build_shard: dims must be strictly increasing");
    require(dims.back() == vectors.cols || vectors.rows == 0,
            "build_shard: vector width " + std::to_string(vectors.cols) +
                " does not match largest dim " + std::to_string(dims.back()));
    {
        std::vector<std::uint64_t> sorted = ids;
        std::sort(sorted.begin(), sorted.end());
        require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
                "build_shard: duplicate doc id");
    }
    for (std::size_t i = 0; i < vectors.rows; ++i) {
        const double sq = dot(vectors.row_ptr(i), vectors.row_ptr(i), vectors.cols);
        require(std::abs(sq - 1.0) < 1e-6,
                "build_shard: vector for doc " + std::to_string(ids[i]) +
                    " is not unit norm at full dimension");
    }

    const auto t0 = std::chrono::steady_clock::now();
    IndexShard shard;
    shard.d_max = dims.empty() ? 0 : dims.back();
    shard.dims.assign(dims.begin(), dims.end());
    shard.timestamp = timestamp;
    shard.doc_ids = ids;
    shard.payload.resize(vectors.rows * vectors.cols);
    std::size_t clamped = 0;
    for (std::size_t i = 0; i < vectors.data.size(); ++i) {
        const auto enc = half_encode(vectors.data[i]);
        shard.payload[i] = enc.bits;
        clamped += enc.clamped ? 1 : 0;
    }
    const auto t1 = std::chrono::steady_clock::now();
    if (stats) {
        stats->seconds = std::chrono::duration<double>(t1 - t0).count();
        stats->clamped_values = clamped;
        stats->docs_per_second =
            stats->seconds > 0.0 ? static_cast<double>(ids.size()) / stats->seconds : 0.0;
    }
    return shard;
}

struct SearchResult {
    std::vector<std::pair<std::uint64_t, double>> hits;  // (doc id, score), best first
    std::size_t dim = 0;
    double latency_s = 0.0;
};

namespace detail {

/// Exhaustive scan at a prefix width. The query must already be the
/// re-normalized prefix. Scores in ranked order, ties by ascending doc id.
inline SearchResult scan_prefix(const IndexShard& shard, const double* query, std::size_t dim,
                                std::size_t k) {
    const auto t0 = std::chrono::steady_clock::now();
    SearchResult res;
    res.dim = dim;
    // Bounded insertion keeps the scan O(n k) with tiny constants. A heap
    // ordered by `better` keeps the worst retained hit at the front.
    auto better = [](const std::pair<std::uint64_t, double>& a,
                     const std::pair<std::uint64_t, double>& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    };
    std::vector<double> row(dim);
    for (std::size_t i = 0; i < shard.size(); ++i) {
        const std::uint16_t* h = shard.payload.data() + i * shard.d_max;
        double sq = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            row[j] = half_decode(h[j]);
            sq += row[j] * row[j];
        }
        double score = 0.0;
        if (sq > 0.0) {
            const double inv = 1.0 / std::sqrt(sq);
            for (std::size_t j = 0; j < dim; ++j) score += query[j] * (row[j] * inv);
        }
        const std::pair<std::uint64_t, double> cand{shard.doc_ids[i], score};
        if (res.hits.size() < k) {
            res.hits.push_back(cand);
            std::push_heap(res.hits.begin(), res.hits.end(), better);
        } else if (better(cand, res.hits.front())) {
            std::pop_heap(res.hits.begin(), res.hits.end(), better);
            res.hits.back() = cand;
            std::push_heap(res.hits.begin(), res.hits.end(), better);
        }
    }
    std::sort_heap(res.hits.begin(), res.hits.end(), better);  // best first
    const auto t1 = std::chrono::steady_clock::now();
    res.latency_s = std::chrono::duration<double>(t1 - t0).count();
    return res;
}

}  // namespace detail

/// Top-k exact search with a full-width query; the prefix is sliced and
/// re-normalized here.
inline SearchResult search(const IndexShard& shard, const std::vector<double>& query,
                           std::size_t dim, std::size_t k) {
    require(k >= 1, "search: k must be >= 1");
    require(shard.dim_configured(dim),
            "search: dim " + std::to_string(dim) + " not configured for this shard");
    require(query.size() == shard.d_max, "search: query width mismatch");
    std::vector<double> prefix(query.begin(), query.begin() + dim);
    double sq = 0.0;
    for (double v : prefix) sq += v * v;
    if (sq > 0.0) {
        const double inv = 1.0 / std::sqrt(sq);
        for (double& v : prefix) v *= inv;
    }
    return detail::scan_prefix(shard, prefix.data(), dim, k);
}

/// Same search with an already prefix-width query (the dual encoder emits
/// those directly). The query is re-normalized defensively.
inline SearchResult search_prefix(const IndexShard& shard, const std::vector<double>& query,
                                  std::size_t k) {
    require(k >= 1, "search_prefix: k must be >= 1");
    const std::size_t dim = query.size();
    require(shard.dim_configured(dim),
            "search_prefix: dim " + std::to_string(dim) + " not configured for this shard");
    std::vector<double> q = query;
    double sq = 0.0;
    for (double v : q) sq += v * v;
    if (sq > 0.0) {
        const double inv = 1.0 / std::sqrt(sq);
        for (double& v : q) v *= inv;
    }
    return detail::scan_prefix(shard, q.data(), dim, k);
}

// ---- persistence ------------------------------------------------------------

inline std::vector<std::uint8_t> serialize_shard(const IndexShard& shard) {
    ByteWriter w;
    w.str(kShardMagic);
    w.u32(shard.version);
    w.u64(shard.d_max);
    w.u32(static_cast<std::uint32_t>(shard.dims.size()));
    for (std::uint64_t d : shard.dims) w.u64(d);
    w.u64(shard.doc_ids.size());
    w.u64(shard.timestamp);
    for (std::uint64_t id : shard.doc_ids) w.u64(id);
    for (std::uint16_t h : shard.payload) w.u16(h);
    return w.take();
}

inline IndexShard deserialize_shard(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    const std::string magic = r.str(7);
    if (magic != kShardMagic) {
        throw std::runtime_error("shard: bad magic at offset 0");
    }
    IndexShard shard;
    shard.version = r.u32();
    if (shard.version != 1) {
        throw std::runtime_error("shard: unsupported version " + std::to_string(shard.version) +
                                 " at offset 7");
    }
    shard.d_max = r.u64();
    const std::uint32_t dim_count = r.u32();
    for (std::uint32_t i = 0; i < dim_count; ++i) shard.dims.push_back(r.u64());
    const std::uint64_t count = r.u64();
    shard.timestamp = r.u64();
    const std::size_t expect = shard_file_bytes(count, shard.d_max, dim_count);
    if (bytes.size() != expect) {
        throw std::runtime_error("shard: file length " + std::to_string(bytes.size()) +
                                 " does not match header-implied length " +
                                 std::to_string(expect));
    }
    shard.doc_ids.resize(count);
    for (auto& id : shard.doc_ids) id = r.u64();
    shard.payload.resize(count * shard.d_max);
    for (auto& h : shard.payload) h = r.u16();
    return shard;
}

inline void save_shard(const std::string& path, const IndexShard& shard) {
    write_file_bytes(path, serialize_shard(shard));
}

inline IndexShard load_shard(const std::string& path) {
    return deserialize_shard(read_file_bytes(path));
}

// ---- cost benchmark -----------------------------------------------------------

/// Per-dimension cost figures: indexing throughput, disk bytes of a
/// prefix-only store, and query latency percentiles over an exact scan.
struct CostReport {
    struct Row {
        std::size_t dim = 0;
        double docs_per_second = 0.0;
        std::size_t disk_bytes = 0;
        double median_latency_s = 0.0;
        double p95_latency_s = 0.0;
    };
    std::vector<Row> rows;
};

/// Build a prefix-only store (just the first `dim` columns, re-normalized)
/// for the disk-usage comparison. The canonical shard keeps full rows; this
/// is the storage layout a deployment pinned to one width would use.
inline IndexShard build_prefix_store(const std::vector<std::uint64_t>& ids, const Matrix& vectors,
                                     std::size_t dim, std::uint64_t timestamp = 0,
                                     BuildStats* stats = nullptr) {
    require(dim >= 1 && dim <= vectors.cols, "build_prefix_store: bad dim");
    Matrix prefix(vectors.rows, dim);
    for (std::size_t i = 0; i < vectors.rows; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < dim; ++j) sq += vectors.at(i, j) * vectors.at(i, j);
        const double inv = sq > 0.0 ? 1.0 / std::sqrt(sq) : 0.0;
        for (std::size_t j = 0; j < dim; ++j) prefix.at(i, j) = vectors.at(i, j) * inv;
    }
    return build_shard(ids, prefix, {dim}, timestamp, stats);
}

inline double percentile(std::vector<double> values, double p) {
    require(!values.empty(), "percentile: empty sample");
    std::sort(values.begin(), values.end());
    const double idx = p * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(idx);
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = idx - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

/// Measure indexing throughput, prefix-store disk bytes, and scan latency
/// at every requested width. One warm-up pass per dimension is excluded
/// from the timings.
inline CostReport bench_cost(const std::vector<std::uint64_t>& ids, const Matrix& vectors,
                             const std::vector<std::size_t>& dims, const Matrix& queries,
                             std::size_t k, std::size_t repetitions,
                             const std::string& scratch_dir) {
    require(repetitions >= 3, "bench_cost: need at least 3 repetitions");
    require(queries.rows >= 1, "bench_cost: empty query set");
    require(queries.cols == vectors.cols, "bench_cost: query width mismatch");
    CostReport report;
    for (std::size_t dim : dims) {
        CostReport::Row row;
        row.dim = dim;
        BuildStats stats;
        IndexShard store = build_prefix_store(ids, vectors, dim, 0, &stats);
        row.docs_per_second = stats.docs_per_second;

        const std::string path = scratch_dir + "/bench_d" + std::to_string(dim) + ".matidx";
        save_shard(path, store);
        row.disk_bytes = read_file_bytes(path).size();

        std::vector<double> latencies;
        latencies.reserve(queries.rows * repetitions);
        for (std::size_t rep = 0; rep <= repetitions; ++rep) {
            for (std::size_t qi = 0; qi < queries.rows; ++qi) {
                std::vector<double> q(queries.row_ptr(qi), queries.row_ptr(qi) + queries.cols);
                q.resize(dim);
                SearchResult res = search_prefix(store, q, k);
                if (rep > 0) latencies.push_back(res.latency_s);  // rep 0 is warm-up
            }
        }
        row.median_latency_s = percentile(latencies, 0.5);
        row.p95_latency_s = percentile(latencies, 0.95);
        report.rows.push_back(row);
    }
    return report;
}

}  // namespace matz
