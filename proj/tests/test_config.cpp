#include <catch2/catch_amalgamated.hpp>

#include "losf/config.hpp"
#include "losf/patchgen.hpp"

using namespace losf;

TEST_CASE("key-value parsing", "[config]") {
    auto cfg = KeyValueConfig::parse_string(
        "# generation settings\n"
        "seed = 42\n"
        "count=1000   # inline comment\n"
        "r0 = 1.5\n"
        "family_mix = 0.5, 0.125,0.125, 0.125,0.125\n"
        "\n"
        "name = hello\n");
    CHECK(*cfg.get_u64("seed") == 42);
    CHECK(*cfg.get_int("count") == 1000);
    CHECK(*cfg.get_double("r0") == 1.5);
    CHECK(cfg.get_double_list("family_mix")->size() == 5);
    CHECK(*cfg.get_string("name") == "hello");
    CHECK_FALSE(cfg.get_int("missing").has_value());
}

TEST_CASE("unknown keys are reported after consumption", "[config]") {
    auto cfg = KeyValueConfig::parse_string("seed = 1\nbogus_key = 2\n");
    cfg.get_u64("seed");
    auto unknown = cfg.unknown_keys();
    REQUIRE(unknown.size() == 1);
    CHECK(unknown[0] == "bogus_key");
}

TEST_CASE("malformed lines and values raise errors", "[config]") {
    CHECK_THROWS_AS(KeyValueConfig::parse_string("novalue\n"), ContractError);
    CHECK_THROWS_AS(KeyValueConfig::parse_string("= 3\n"), ContractError);
    auto cfg = KeyValueConfig::parse_string("count = twelve\n");
    CHECK_THROWS_AS(cfg.get_int("count"), std::exception);
}

TEST_CASE("gen config from key-value file", "[config]") {
    auto cfg = GenConfig::from_config(KeyValueConfig::parse_string(
        "seed = 9\ncount = 500\nm = 32\nr0 = 2\nkappa_max = 3\nh_max = 2\nk_max = 1\n"
        "family_mix = 0.6,0.1,0.1,0.1,0.1\nsigma_train = 0.2\n"));
    CHECK(cfg.seed == 9);
    CHECK(cfg.count == 500);
    CHECK(cfg.m == 32);
    CHECK(cfg.r0 == 2.0);
    CHECK(cfg.kappa_max == 3.0);
    CHECK(cfg.family_mix[0] == 0.6);
    CHECK(cfg.sigma_train == 0.2);

    CHECK_THROWS_AS(GenConfig::from_config(KeyValueConfig::parse_string("m = 2\n")), ContractError);
    CHECK_THROWS_AS(
        GenConfig::from_config(KeyValueConfig::parse_string("family_mix = 0.5,0.5,0.5,0.5,0.5\n")),
        ContractError);
}
