#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "matz/checkpoint.hpp"
#include "matz/model.hpp"
#include "matz/sha256.hpp"

namespace {

std::string temp_path(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / "matz_ckpt_test";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
    matz::ModelConfig cfg;
    cfg.vocab = 32;
    cfg.hidden = 8;
    cfg.blocks = 1;
    cfg.ffn = 16;
    cfg.dims = {4, 8};
    cfg.frame_dim = 4;
    cfg.layer_mult = 1;
    cfg.conv_channels = 6;
    auto model = matz::make_model(cfg, matz::Variant::kDualAlignment);

    const auto bytes = matz::serialize_params(model.params);
    const std::string path = temp_path("model.matzoo");
    matz::save_checkpoint(path, model.params);
    auto loaded = matz::load_checkpoint(path);

    REQUIRE(loaded.size() == model.params.size());
    for (const auto& [name, m] : model.params) {
        REQUIRE(loaded.count(name) == 1);
        REQUIRE(loaded.at(name) == m);
    }
    REQUIRE(matz::sha256_hex(matz::serialize_params(loaded)) == matz::sha256_hex(bytes));
}

TEST_CASE("checkpoint rejects corruption with diagnostics") {
    matz::ParamSet params;
    params["w"] = matz::Matrix{{1.0, 2.0}, {3.0, 4.0}};
    auto bytes = matz::serialize_params(params);

    auto bad_magic = bytes;
    bad_magic[3] = 'x';
    REQUIRE_THROWS_WITH(matz::deserialize_params(bad_magic),
                        Catch::Matchers::ContainsSubstring("magic"));

    auto truncated = bytes;
    truncated.resize(bytes.size() - 5);
    REQUIRE_THROWS_WITH(matz::deserialize_params(truncated),
                        Catch::Matchers::ContainsSubstring("offset"));

    auto trailing = bytes;
    trailing.push_back(0);
    REQUIRE_THROWS_WITH(matz::deserialize_params(trailing),
                        Catch::Matchers::ContainsSubstring("trailing"));

    auto bad_version = bytes;
    bad_version[7] = 9;
    REQUIRE_THROWS_WITH(matz::deserialize_params(bad_version),
                        Catch::Matchers::ContainsSubstring("version"));
}
