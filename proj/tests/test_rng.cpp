#include "kllime/rng.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using kllime::derive_stream;
using kllime::RandomStream;

TEST_CASE("streams are deterministic and label-separated") {
    RandomStream a = derive_stream(42, "x", 0);
    RandomStream b = derive_stream(42, "x", 0);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

    RandomStream c = derive_stream(42, "x", 1);
    RandomStream d = derive_stream(42, "y", 0);
    RandomStream e = derive_stream(43, "x", 0);
    RandomStream base = derive_stream(42, "x", 0);
    const auto v = base.next_u64();
    REQUIRE(c.next_u64() != v);
    REQUIRE(d.next_u64() != v);
    REQUIRE(e.next_u64() != v);
}

TEST_CASE("uniform lies in [0,1) with the right mean") {
    RandomStream rs = derive_stream(1, "uniform");
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double u = rs.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    REQUIRE(std::abs(sum / n - 0.5) < 0.005);
}

TEST_CASE("normal moments") {
    RandomStream rs = derive_stream(2, "normal");
    double sum = 0.0, sumsq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double x = rs.normal();
        sum += x;
        sumsq += x * x;
    }
    REQUIRE(std::abs(sum / n) < 0.02);
    REQUIRE(std::abs(sumsq / n - 1.0) < 0.03);
}

TEST_CASE("gamma and beta moments") {
    RandomStream rs = derive_stream(3, "gamma");
    const int n = 100000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += rs.gamma(3.0);
    REQUIRE(std::abs(sum / n - 3.0) < 0.05);

    sum = 0.0;
    for (int i = 0; i < n; ++i) sum += rs.gamma(0.5);
    REQUIRE(std::abs(sum / n - 0.5) < 0.02);

    sum = 0.0;
    for (int i = 0; i < n; ++i) sum += rs.beta(2.0, 5.0);
    REQUIRE(std::abs(sum / n - 2.0 / 7.0) < 0.01);
}
