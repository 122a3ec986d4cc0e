#pragma once

#include "emns/errors.hpp"

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace emns {

/// Legendre polynomial P_n(x) and its derivative P_n'(x).
///
/// Values use the Bonnet recurrence (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1};
/// derivatives use P'_{k+1} = P'_{k-1} + (2k+1) P_k, which stays finite at x = +-1.
inline std::pair<double, double> legendre_pair(int n, double x) {
    if (n < 0) throw DomainError("legendre_pair: negative degree " + std::to_string(n));
    if (!(std::abs(x) <= 1.0)) throw DomainError("legendre_pair: argument outside [-1, 1]");
    double p_prev = 1.0;
    double p = x;
    double dp_prev = 0.0;
    double dp = 1.0;
    if (n == 0) return {1.0, 0.0};
    for (int k = 1; k < n; ++k) {
        const double p_next = ((2.0 * k + 1.0) * x * p - k * p_prev) / (k + 1.0);
        const double dp_next = dp_prev + (2.0 * k + 1.0) * p;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
    }
    return {p, dp};
}

/// P_k, P_k', P_k'' for k = 0..n at one argument, no domain check.
struct LegendreTable {
    std::vector<double> p;
    std::vector<double> dp;
    std::vector<double> d2p;

    LegendreTable(int n, double x)
        : p(static_cast<std::size_t>(n) + 1), dp(static_cast<std::size_t>(n) + 1), d2p(static_cast<std::size_t>(n) + 1) {
        p[0] = 1.0;
        dp[0] = 0.0;
        d2p[0] = 0.0;
        if (n == 0) return;
        p[1] = x;
        dp[1] = 1.0;
        d2p[1] = 0.0;
        for (int k = 1; k < n; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            p[ku + 1] = ((2.0 * k + 1.0) * x * p[ku] - k * p[ku - 1]) / (k + 1.0);
            dp[ku + 1] = dp[ku - 1] + (2.0 * k + 1.0) * p[ku];
            d2p[ku + 1] = d2p[ku - 1] + (2.0 * k + 1.0) * dp[ku];
        }
    }
};

}  // namespace emns
