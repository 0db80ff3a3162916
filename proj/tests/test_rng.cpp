#include "doctest.h"

#include <map>
#include <set>

#include "dm/rng.hpp"

using namespace dm;

TEST_CASE("same seed, same stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform stays in [0,1)") {
    Rng r(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("below covers its range without bias") {
    Rng r(7);
    std::map<std::uint64_t, int> counts;
    for (int i = 0; i < 60000; ++i) ++counts[r.below(6)];
    CHECK(counts.size() == 6);
    for (const auto& [v, c] : counts) {
        CHECK(v < 6);
        CHECK(c > 9400); // 10000 expected, sd ~91
        CHECK(c < 10600);
    }
}

TEST_CASE("range is inclusive") {
    Rng r(3);
    std::set<int> seen;
    for (int i = 0; i < 1000; ++i) seen.insert(r.range(-2, 2));
    CHECK(seen == std::set<int>{-2, -1, 0, 1, 2});
}

TEST_CASE("normal has unit moments") {
    Rng r(11);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        s2 += x * x;
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("shuffle is a permutation") {
    Rng r(5);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    r.shuffle(v.begin(), v.end());
    std::set<int> s(v.begin(), v.end());
    CHECK(s.size() == 50);
    bool moved = false;
    for (int i = 0; i < 50; ++i) moved |= v[i] != i;
    CHECK(moved);
}

TEST_CASE("derived seeds separate keys and salts") {
    CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
    CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
    CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
    CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
}
