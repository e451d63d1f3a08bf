#pragma once

// Occupancy by brute-force truncated Neumann series.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

/// (1 - gamma) sum_{n <= N} gamma^n (P^T)^n base, with N the first power where gamma^N < cutoff.
inline std::vector<long double> neumann_occupancy(const std::vector<std::vector<long double>>& kernel, long double gamma,
                                                  const std::vector<long double>& base, long double cutoff = 1e-12L) {
    const std::size_t m = base.size();
    std::vector<long double> term = base, total(m, 0.0L);
    long double g = 1.0L;
    while (true) {
        for (std::size_t s = 0; s < m; ++s) total[s] += g * term[s];
        if (g < cutoff) break;
        std::vector<long double> next(m, 0.0L);
        for (std::size_t s = 0; s < m; ++s)
            for (std::size_t s2 = 0; s2 < m; ++s2) next[s2] += kernel[s][s2] * term[s];
        term = next;
        g *= gamma;
    }
    for (auto& x : total) x *= 1.0L - gamma;
    return total;
}

} // namespace oracle
