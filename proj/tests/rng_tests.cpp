#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "cbt/rng.hpp"

using cbt::Rng;

TEST_SUITE("rng") {

TEST_CASE("same seed reproduces the sequence") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK_EQ(a.next_u64(), b.next_u64());
}

TEST_CASE("key is order sensitive and collision free on small tuples") {
    CHECK_NE(Rng::key({1, 2}), Rng::key({2, 1}));
    CHECK_NE(Rng::key({0}), Rng::key({0, 0}));
    std::set<std::uint64_t> seen;
    for (std::uint64_t a = 0; a < 20; ++a)
        for (std::uint64_t b = 0; b < 20; ++b) seen.insert(Rng::key({a, b, 7}));
    CHECK_EQ(seen.size(), 400);
}

TEST_CASE("uniform01 stays in [0,1)") {
    Rng r(7);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform01();
        CHECK_GE(u, 0.0);
        CHECK_LT(u, 1.0);
    }
}

TEST_CASE("below hits every residue") {
    Rng r(3);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 1000; ++i) {
        const std::uint64_t x = r.below(5);
        CHECK_LT(x, 5);
        seen.insert(x);
    }
    CHECK_EQ(seen.size(), 5);
    CHECK_EQ(r.below(1), 0);
    CHECK_EQ(r.below(0), 0);
}

TEST_CASE("normal moments") {
    Rng r(11);
    const int n = 200000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        sum += x;
        sum_sq += x * x;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    CHECK_LT(std::abs(mean), 0.01);
    CHECK_LT(std::abs(var - 1.0), 0.02);
}

TEST_CASE("poisson mean") {
    Rng r(5);
    const int n = 50000;
    long total = 0;
    for (int i = 0; i < n; ++i) total += r.poisson(3.0);
    CHECK_LT(std::abs(static_cast<double>(total) / n - 3.0), 0.05);
    CHECK_EQ(r.poisson(0.0), 0);
    CHECK_EQ(r.poisson(-1.0), 0);
}

TEST_CASE("shuffle is a deterministic permutation") {
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
    std::vector<int> w = v;
    Rng(9).shuffle(v);
    Rng(9).shuffle(w);
    CHECK_EQ(v, w);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    CHECK_EQ(sorted, std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});

    std::vector<int> other{0, 1, 2, 3, 4, 5, 6, 7};
    Rng(10).shuffle(other);
    CHECK_NE(other, v);
}

TEST_CASE("distinct key words give distinct streams") {
    Rng a(Rng::key({42, 0}));
    Rng b(Rng::key({42, 1}));
    bool any_diff = false;
    for (int i = 0; i < 10; ++i) any_diff |= (a.next_u64() != b.next_u64());
    CHECK(any_diff);
}

}  // TEST_SUITE
