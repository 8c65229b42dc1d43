#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dqv/core.hpp"

namespace dqv::stats {

/// Linear-interpolated quantile (type 7), p in [0, 1].
inline double quantile(std::vector<double> xs, double p) {
    require(!xs.empty(), "quantile of empty sample");
    std::sort(xs.begin(), xs.end());
    double h = p * static_cast<double>(xs.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(h));
    auto hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline double median(const std::vector<double>& xs) { return quantile(xs, 0.5); }

inline double iqr(const std::vector<double>& xs) { return quantile(xs, 0.75) - quantile(xs, 0.25); }

inline double mean(const std::vector<double>& xs) {
    require(!xs.empty(), "mean of empty sample");
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

struct RankTest {
    double u = 0.0;       // Mann-Whitney U of the first sample
    double p_value = 1.0; // one-sided: first sample stochastically greater
    bool exact = false;
};

/// One-sided Mann-Whitney U test of H1: x tends to exceed y.
/// Exact null distribution when there are no ties and n*m <= 400,
/// otherwise the tie-corrected normal approximation with continuity correction.
inline RankTest mann_whitney_greater(const std::vector<double>& x, const std::vector<double>& y) {
    require(!x.empty() && !y.empty(), "rank test needs two non-empty samples");
    const std::size_t n = x.size(), m = y.size();
    // U counts pairs with x > y, ties as one half
    double u = 0.0;
    for (double a : x)
        for (double b : y) u += a > b ? 1.0 : (a == b ? 0.5 : 0.0);

    std::vector<double> pooled(x);
    pooled.insert(pooled.end(), y.begin(), y.end());
    std::sort(pooled.begin(), pooled.end());
    double tie_term = 0.0;
    bool ties = false;
    for (std::size_t i = 0; i < pooled.size();) {
        std::size_t j = i;
        while (j < pooled.size() && pooled[j] == pooled[i]) ++j;
        double t = static_cast<double>(j - i);
        if (t > 1) ties = true;
        tie_term += t * t * t - t;
        i = j;
    }

    RankTest r;
    r.u = u;
    if (!ties && n * m <= 400) {
        const std::size_t max_u = n * m;
        // f(i, j, k): ways for sample sizes i, j to give U = k.
        // f(i, j, k) = f(i-1, j, k-j) + f(i, j-1, k)
        std::vector<std::vector<std::vector<double>>> f(n + 1, std::vector<std::vector<double>>(m + 1));
        for (std::size_t i = 0; i <= n; ++i)
            for (std::size_t j = 0; j <= m; ++j) {
                f[i][j].assign(i * j + 1, 0.0);
                if (i == 0 || j == 0) {
                    f[i][j][0] = 1.0;
                    continue;
                }
                for (std::size_t k = 0; k <= i * j; ++k) {
                    double a = k >= j && k - j <= (i - 1) * j ? f[i - 1][j][k - j] : 0.0;
                    double b = k <= i * (j - 1) ? f[i][j - 1][k] : 0.0;
                    f[i][j][k] = a + b;
                }
            }
        double total = 0.0, tail = 0.0;
        const auto uk = static_cast<std::size_t>(std::llround(u));
        for (std::size_t k = 0; k <= max_u; ++k) {
            total += f[n][m][k];
            if (k >= uk) tail += f[n][m][k];
        }
        r.p_value = tail / total;
        r.exact = true;
        return r;
    }
    const double nn = static_cast<double>(n), mm = static_cast<double>(m), N = nn + mm;
    const double mu = nn * mm / 2.0;
    const double var = nn * mm / 12.0 * ((N + 1.0) - tie_term / (N * (N - 1.0)));
    if (var <= 0.0) {
        r.p_value = u > mu ? 0.0 : 1.0;
        return r;
    }
    const double z = (u - mu - 0.5) / std::sqrt(var);
    r.p_value = normal_sf(z);
    return r;
}

} // namespace dqv::stats
