#include "oracles.hpp"

#include <catch_amalgamated.hpp>

using Catch::Approx;

TEST_CASE("legendre endpoint and closed-form values") {
    for (int n : {1, 2, 3}) CHECK(emns::legendre_pair(n, 1.0).first == Approx(1.0).margin(1e-15));
    CHECK(emns::legendre_pair(2, 0.0).first == Approx(-0.5).margin(1e-15));
    CHECK(emns::legendre_pair(3, 0.0).first == Approx(0.0).margin(1e-15));
    const auto [p, dp] = emns::legendre_pair(2, 0.5);
    CHECK(p == Approx(-0.125).margin(1e-15));
    CHECK(dp == Approx(1.5).margin(1e-15));
    CHECK(emns::legendre_pair(0, 0.3).first == 1.0);
    CHECK(emns::legendre_pair(0, 0.3).second == 0.0);
}

TEST_CASE("legendre matches the standard library functions") {
    emns::Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const double x = emns::uniform(rng, -0.999, 0.999);
        for (int n = 0; n <= 12; ++n) {
            const auto [p, dp] = emns::legendre_pair(n, x);
            CHECK(p == Approx(std::legendre(static_cast<unsigned>(n), x)).margin(1e-13));
            // assoc_legendre(n, 1, x) = sqrt(1 - x^2) P_n'(x)
            const double ref = n == 0 ? 0.0 : std::assoc_legendre(static_cast<unsigned>(n), 1u, x) / std::sqrt(1 - x * x);
            CHECK(dp == Approx(ref).epsilon(1e-11).margin(1e-11));
        }
    }
}

TEST_CASE("legendre derivative is finite at the poles") {
    for (int n = 1; n <= 8; ++n) {
        CHECK(emns::legendre_pair(n, 1.0).second == Approx(n * (n + 1) / 2.0));
        CHECK(emns::legendre_pair(n, -1.0).second == Approx((n % 2 == 0 ? -1.0 : 1.0) * n * (n + 1) / 2.0));
    }
}

TEST_CASE("legendre table second derivative matches differencing") {
    const double h = 1e-5;
    for (double x : {-0.7, -0.1, 0.25, 0.8}) {
        const emns::LegendreTable t(6, x);
        const emns::LegendreTable a(6, x + h);
        const emns::LegendreTable b(6, x - h);
        for (int n = 0; n <= 6; ++n) {
            const auto nu = static_cast<std::size_t>(n);
            CHECK(t.p[nu] == Approx(emns::legendre_pair(n, x).first).margin(1e-14));
            CHECK(t.d2p[nu] == Approx((a.dp[nu] - b.dp[nu]) / (2 * h)).margin(1e-6));
        }
    }
}

TEST_CASE("legendre domain errors") {
    CHECK_THROWS_AS(emns::legendre_pair(-1, 0.0), emns::DomainError);
    CHECK_THROWS_AS(emns::legendre_pair(2, 1.5), emns::DomainError);
    CHECK_THROWS_AS(emns::legendre_pair(2, std::nan("")), emns::DomainError);
}
