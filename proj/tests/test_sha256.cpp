#include <catch2/catch_amalgamated.hpp>

#include <string>

#include "matz/sha256.hpp"

TEST_CASE("sha256 standard vectors") {
    REQUIRE(matz::sha256_hex(std::string("")) ==
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    REQUIRE(matz::sha256_hex(std::string("abc")) ==
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    REQUIRE(matz::sha256_hex(std::string("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq")) ==
            "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST_CASE("sha256 incremental update equals one-shot") {
    matz::Sha256 h;
    h.update("hello ");
    h.update("world");
    const auto d = h.digest();
    std::string hex;
    for (auto b : d) {
        static const char* k = "0123456789abcdef";
        hex.push_back(k[b >> 4]);
        hex.push_back(k[b & 0xf]);
    }
    REQUIRE(hex == matz::sha256_hex(std::string("hello world")));
}

TEST_CASE("sha256 long input crosses block boundaries") {
    std::string s(1000, 'a');
    REQUIRE(matz::sha256_hex(s) ==
            "41edece42d63e8d9bf515a9ba6932e1c20cbc9f5a5d134645adb5db1b9737ea3");
}
