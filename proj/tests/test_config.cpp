#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "dm/config.hpp"

using namespace dm;

TEST_CASE("keys, comments and overrides") {
    const auto c = Config::parse("# model\n"
                                 "train.epochs = 12\n"
                                 "\n"
                                 "train.lr=0.001\n"
                                 "  service.host =  0.0.0.0  \n"
                                 "train.symmetrize = true\n"
                                 "train.epochs = 20\n");
    CHECK(c.get_int("train.epochs", 0) == 20);
    CHECK(c.get_double("train.lr", 0) == doctest::Approx(0.001));
    CHECK(c.get_or("service.host", "x") == "0.0.0.0");
    CHECK(c.get_bool("train.symmetrize", false));
    CHECK_FALSE(c.get("missing").has_value());
    CHECK(c.get_int("missing", 7) == 7);
    CHECK(c.values().size() == 4);
}

TEST_CASE("malformed lines report their line number") {
    try {
        Config::parse("a.b = 1\nno equals sign here\n");
        FAIL("accepted a malformed line");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
    CHECK_THROWS_AS(Config::parse(" = value\n"), ConfigError);
}

TEST_CASE("typed getters reject garbage") {
    const auto c = Config::parse("n = twelve\nx = 1.5.2\nb = maybe\n");
    CHECK_THROWS_AS(c.get_int("n", 0), ConfigError);
    CHECK_THROWS_AS(c.get_double("x", 0), ConfigError);
    CHECK_THROWS_AS(c.get_bool("b", false), ConfigError);
}

TEST_CASE("load from file") {
    const auto path = std::filesystem::temp_directory_path() / "dm_test.conf";
    {
        std::ofstream(path) << "global.seed = 42\n";
    }
    CHECK(Config::load(path).get_int("global.seed", 0) == 42);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(Config::load("/nonexistent/x.conf"), ConfigError);
}
