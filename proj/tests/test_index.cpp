#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <thread>

#include "matz/index.hpp"
#include "matz/numeric.hpp"
#include "matz/rng.hpp"
#include "matz/sha256.hpp"

using matz::Matrix;

namespace {

Matrix random_unit_rows(matz::Rng& rng, std::size_t n, std::size_t d) {
    Matrix m(n, d);
    for (double& v : m.data) v = rng.normal();
    return matz::l2_normalize_rows(m).value;
}

std::vector<std::uint64_t> iota_ids(std::size_t n, std::uint64_t base = 100) {
    std::vector<std::uint64_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = base + i;
    return ids;
}

// Independent check: full sort over exhaustively computed scores with the
// same tie rule (score desc, id asc).
std::vector<std::pair<std::uint64_t, double>> brute_force(const matz::IndexShard& shard,
                                                          const std::vector<double>& query,
                                                          std::size_t dim, std::size_t k) {
    std::vector<double> q(query.begin(), query.begin() + dim);
    double sq = 0.0;
    for (double v : q) sq += v * v;
    if (sq > 0.0) {
        const double inv = 1.0 / std::sqrt(sq);
        for (double& v : q) v *= inv;
    }
    std::vector<std::pair<std::uint64_t, double>> all;
    for (std::size_t i = 0; i < shard.size(); ++i) {
        std::vector<double> row(dim);
        double rsq = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            row[j] = matz::half_decode(shard.payload[i * shard.d_max + j]);
            rsq += row[j] * row[j];
        }
        double score = 0.0;
        if (rsq > 0.0) {
            const double inv = 1.0 / std::sqrt(rsq);
            for (std::size_t j = 0; j < dim; ++j) score += q[j] * (row[j] * inv);
        }
        all.emplace_back(shard.doc_ids[i], score);
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

std::string temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "matz_index_test";
    std::filesystem::create_directories(dir);
    return dir.string();
}

}  // namespace

TEST_CASE("empty shard is valid and searches to nothing") {
    auto shard = matz::build_shard({}, Matrix(0, 8), {4, 8});
    REQUIRE(shard.size() == 0);
    auto res = matz::search(shard, std::vector<double>(8, 0.0), 8, 5);
    REQUIRE(res.hits.empty());
}

TEST_CASE("build rejects duplicates, width mismatch, and non-unit vectors") {
    matz::Rng rng(1);
    Matrix vecs = random_unit_rows(rng, 3, 8);
    REQUIRE_THROWS_AS(matz::build_shard({1, 2, 2}, vecs, {8}), std::invalid_argument);
    REQUIRE_THROWS_AS(matz::build_shard({1, 2, 3}, vecs, {4}), std::invalid_argument);
    Matrix bad = vecs;
    bad.at(0, 0) += 0.1;
    REQUIRE_THROWS_AS(matz::build_shard({1, 2, 3}, bad, {8}), std::invalid_argument);
}

TEST_CASE("self similarity ranks the stored document first") {
    matz::Rng rng(2);
    Matrix vecs = random_unit_rows(rng, 50, 16);
    auto ids = iota_ids(50);
    auto shard = matz::build_shard(ids, vecs, {4, 8, 16});
    std::vector<double> q(vecs.row_ptr(7), vecs.row_ptr(7) + 16);
    auto res = matz::search(shard, q, 16, 3);
    REQUIRE(res.hits[0].first == ids[7]);
    REQUIRE(res.hits[0].second == Catch::Approx(1.0).margin(std::ldexp(1.0, -10)));
}

TEST_CASE("search equals the brute-force oracle on random corpora") {
    matz::Rng rng(3);
    for (int corpus = 0; corpus < 40; ++corpus) {
        const std::size_t n = 1 + rng.index(300);
        const std::size_t d = 8;
        Matrix vecs = random_unit_rows(rng, n, d);
        auto ids = iota_ids(n, rng.uniform_u64(1000));
        auto shard = matz::build_shard(ids, vecs, {2, 4, 8});
        std::vector<double> q(d);
        for (double& v : q) v = rng.normal();
        const std::size_t k = 1 + rng.index(12);
        for (std::size_t dim : {2, 4, 8}) {
            auto got = matz::search(shard, q, dim, k);
            auto want = brute_force(shard, q, dim, k);
            REQUIRE(got.hits.size() == want.size());
            for (std::size_t i = 0; i < want.size(); ++i) {
                REQUIRE(got.hits[i].first == want[i].first);
                REQUIRE(got.hits[i].second == want[i].second);
            }
        }
    }
}

TEST_CASE("identical prefixes break ties by ascending doc id") {
    Matrix vecs(3, 4);
    // Same first-2 prefix for docs 20 and 5; doc 9 is orthogonal.
    vecs.at(0, 0) = 0.6; vecs.at(0, 1) = 0.8; vecs.at(0, 2) = 0.0; vecs.at(0, 3) = 0.0;
    vecs.at(1, 0) = 0.6; vecs.at(1, 1) = 0.8; vecs.at(1, 2) = 0.0; vecs.at(1, 3) = 0.0;
    vecs.at(2, 0) = 0.0; vecs.at(2, 1) = 0.0; vecs.at(2, 2) = 1.0; vecs.at(2, 3) = 0.0;
    auto shard = matz::build_shard({20, 5, 9}, vecs, {2, 4});
    auto res = matz::search(shard, {0.6, 0.8, 0.0, 0.0}, 2, 3);
    REQUIRE(res.hits[0].first == 5);
    REQUIRE(res.hits[1].first == 20);
    REQUIRE(res.hits[2].first == 9);
}

TEST_CASE("concurrent searches on one shard agree") {
    matz::Rng rng(4);
    Matrix vecs = random_unit_rows(rng, 200, 8);
    auto shard = matz::build_shard(iota_ids(200), vecs, {8});
    std::vector<double> q(8);
    for (double& v : q) v = rng.normal();
    auto expected = matz::search(shard, q, 8, 5);
    std::vector<std::vector<std::uint64_t>> results(4);
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&, t] {
            auto r = matz::search(shard, q, 8, 5);
            for (auto& h : r.hits) results[t].push_back(h.first);
        });
    }
    for (auto& th : threads) th.join();
    for (const auto& r : results) {
        REQUIRE(r.size() == expected.hits.size());
        for (std::size_t i = 0; i < r.size(); ++i) REQUIRE(r[i] == expected.hits[i].first);
    }
}

TEST_CASE("shard save/load round trip is hash identical") {
    matz::Rng rng(5);
    Matrix vecs = random_unit_rows(rng, 64, 16);
    auto shard = matz::build_shard(iota_ids(64), vecs, {8, 16}, 0);
    const auto bytes = matz::serialize_shard(shard);
    const std::string dir = temp_dir();
    const std::string path = dir + "/roundtrip.matidx";
    matz::save_shard(path, shard);
    const auto reread = matz::read_file_bytes(path);
    REQUIRE(matz::sha256_hex(reread) == matz::sha256_hex(bytes));
    auto loaded = matz::load_shard(path);
    REQUIRE(matz::sha256_hex(matz::serialize_shard(loaded)) == matz::sha256_hex(bytes));
    REQUIRE(bytes.size() == matz::shard_file_bytes(64, 16, 2));
}

TEST_CASE("corrupt or truncated shard files are rejected with offsets") {
    matz::Rng rng(6);
    Matrix vecs = random_unit_rows(rng, 8, 8);
    auto bytes = matz::serialize_shard(matz::build_shard(iota_ids(8), vecs, {8}));

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    REQUIRE_THROWS_WITH(matz::deserialize_shard(bad_magic),
                        Catch::Matchers::ContainsSubstring("magic"));

    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    REQUIRE_THROWS_WITH(matz::deserialize_shard(truncated),
                        Catch::Matchers::ContainsSubstring("length"));

    auto padded = bytes;
    padded.push_back(0);
    REQUIRE_THROWS_AS(matz::deserialize_shard(padded), std::runtime_error);
}

TEST_CASE("bench reports match the closed-form disk arithmetic") {
    matz::Rng rng(7);
    const std::size_t n = 400;
    Matrix vecs = random_unit_rows(rng, n, 16);
    Matrix queries = random_unit_rows(rng, 8, 16);
    auto report = matz::bench_cost(iota_ids(n), vecs, {4, 8, 16}, queries, 5, 3, temp_dir());
    REQUIRE(report.rows.size() == 3);
    for (const auto& row : report.rows) {
        REQUIRE(row.disk_bytes == matz::shard_file_bytes(n, row.dim, 1));
        REQUIRE(row.median_latency_s >= 0.0);
        REQUIRE(row.p95_latency_s >= row.median_latency_s);
    }
    // Disk bytes strictly increase with dimension at fixed corpus size.
    REQUIRE(report.rows[0].disk_bytes < report.rows[1].disk_bytes);
    REQUIRE(report.rows[1].disk_bytes < report.rows[2].disk_bytes);
    // Halving the width halves the payload (header/id-table overhead aside).
    const std::size_t overhead = matz::shard_file_bytes(n, 0, 1);
    REQUIRE(report.rows[1].disk_bytes - overhead == 2 * n * 8);
    REQUIRE(report.rows[2].disk_bytes - overhead == 2 * n * 16);

    REQUIRE_THROWS_AS(matz::bench_cost(iota_ids(n), vecs, {8}, Matrix(0, 16), 5, 3, temp_dir()),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(matz::bench_cost(iota_ids(n), vecs, {8}, queries, 5, 2, temp_dir()),
                      std::invalid_argument);
}
