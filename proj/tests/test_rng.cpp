#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "udpnet/rng.hpp"

using namespace udpnet;

// Reference vectors for Philox4x32-10 from the original counter-based RNG
// publication's test suite.
TEST_CASE("philox known-answer vectors") {
    {
        auto r = philox4x32({0u, 0u}, {0u, 0u, 0u, 0u});
        REQUIRE(r[0] == 0x6627e8d5u);
        REQUIRE(r[1] == 0xe169c58du);
        REQUIRE(r[2] == 0xbc57ac4cu);
        REQUIRE(r[3] == 0x9b00dbd8u);
    }
    {
        auto r = philox4x32({0xffffffffu, 0xffffffffu},
                            {0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu});
        REQUIRE(r[0] == 0x408f276du);
        REQUIRE(r[1] == 0x41c83b0eu);
        REQUIRE(r[2] == 0xa20bc7c6u);
        REQUIRE(r[3] == 0x6d5451fdu);
    }
    {
        auto r = philox4x32({0xa4093822u, 0x299f31d0u},
                            {0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u});
        REQUIRE(r[0] == 0xd16cfe09u);
        REQUIRE(r[1] == 0x94fdccebu);
        REQUIRE(r[2] == 0x5001e420u);
        REQUIRE(r[3] == 0x24126ea1u);
    }
}

TEST_CASE("streams are reproducible and keyed by label and index") {
    RngStream a(42, "noise", 7);
    RngStream b(42, "noise", 7);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

    RngStream c(42, "noise", 8);
    RngStream d(42, "other", 7);
    RngStream e(43, "noise", 7);
    RngStream f(42, "noise", 7);
    bool differ_c = false, differ_d = false, differ_e = false;
    for (int i = 0; i < 10; ++i) {
        const uint64_t ref = f.next_u64();
        differ_c |= c.next_u64() != ref;
        differ_d |= d.next_u64() != ref;
        differ_e |= e.next_u64() != ref;
    }
    REQUIRE(differ_c);
    REQUIRE(differ_d);
    REQUIRE(differ_e);
}

TEST_CASE("uniform draws live in the half-open unit interval") {
    RngStream s(1, "u");
    double lo = 1.0, hi = 0.0, sum = 0.0, sumsq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double u = s.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        sum += u;
        sumsq += u * u;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    // 1/sqrt(12n) ~ 0.0009; allow 5 sigma
    REQUIRE(std::abs(mean - 0.5) < 0.005);
    REQUIRE(std::abs(var - 1.0 / 12.0) < 0.005);
    REQUIRE(lo < 0.01);
    REQUIRE(hi > 0.99);
}

TEST_CASE("ranged uniform respects bounds") {
    RngStream s(1, "ur");
    for (int i = 0; i < 1000; ++i) {
        const double v = s.uniform(-2.5, 4.0);
        REQUIRE(v >= -2.5);
        REQUIRE(v < 4.0);
    }
}

TEST_CASE("integer draws cover the inclusive range") {
    RngStream s(9, "ints");
    std::set<int64_t> seen;
    for (int i = 0; i < 4000; ++i) {
        const int64_t v = s.uniform_int(-1, 2);
        REQUIRE(v >= -1);
        REQUIRE(v <= 2);
        seen.insert(v);
    }
    REQUIRE(seen.size() == 4);

    for (int i = 0; i < 10; ++i) REQUIRE(s.uniform_int(5, 5) == 5);
}

TEST_CASE("gaussian moments match the standard normal") {
    RngStream s(3, "g");
    const int n = 200000;
    double sum = 0.0, sumsq = 0.0, sum3 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = s.gaussian();
        sum += g;
        sumsq += g * g;
        sum3 += g * g * g;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    const double skew = sum3 / n;
    // SE(mean) ~ 0.0022, SE(var) ~ 0.0032, SE(m3) ~ sqrt(15/n) ~ 0.0087
    REQUIRE(std::abs(mean) < 0.011);
    REQUIRE(std::abs(var - 1.0) < 0.016);
    REQUIRE(std::abs(skew) < 0.044);
}

TEST_CASE("vector fill equals repeated scalar draws") {
    RngStream a(5, "fill");
    RngStream b(5, "fill");
    std::vector<double> v(31);
    a.fill_gaussian(v);
    for (double x : v) REQUIRE(x == b.gaussian());
}
