#pragma once

// Independent extended-precision model of the two-state benchmark:
// closed-form cost and transitions, trapezoid rule on its own (finer) grid.

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

using real = long double;

struct D1 {
    real gamma = 0.9L;
    real tau = 0.5L;
    real L = 8;
    std::array<real, 2> centre{-1, 1};

    real cost(std::size_t s, real a) const {
        const real d = a - centre[s];
        return 1 - std::exp(-d * d / 2);
    }
    /// P(1 | s, a); the same for both states.
    real p1(real a) const { return 0.5L + 0.4L * std::tanh(a); }
};

struct FineGrid {
    std::vector<real> a, w, mu;

    explicit FineGrid(std::size_t n, real L = 8) : a(n), w(n), mu(n) {
        const real h = 2 * L / static_cast<real>(n - 1);
        real z = 0;
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = -L + h * static_cast<real>(i);
            w[i] = (i == 0 || i + 1 == n) ? h / 2 : h;
            mu[i] = std::exp(-a[i] * a[i] / 2);
            z += w[i] * mu[i];
        }
        for (auto& m : mu) m /= z;
    }
};

/// One soft Bellman backup on the fine grid.
inline std::array<real, 2> soft_backup(const D1& d, const FineGrid& g, const std::array<real, 2>& v) {
    std::array<real, 2> out{};
    for (std::size_t s = 0; s < 2; ++s) {
        std::vector<real> x(g.a.size());
        real xmax = -INFINITY;
        for (std::size_t i = 0; i < g.a.size(); ++i) {
            const real p = d.p1(g.a[i]);
            const real q = d.cost(s, g.a[i]) + d.gamma * ((1 - p) * v[0] + p * v[1]);
            x[i] = -q / d.tau;
            xmax = std::max(xmax, x[i]);
        }
        real acc = 0;
        for (std::size_t i = 0; i < g.a.size(); ++i) acc += g.w[i] * g.mu[i] * std::exp(x[i] - xmax);
        out[s] = -d.tau * (xmax + std::log(acc));
    }
    return out;
}

/// Fixed point of the soft backup, iterated until successive changes stop shrinking.
inline std::array<real, 2> soft_fixed_point(const D1& d, const FineGrid& g) {
    std::array<real, 2> v{0, 0};
    for (int k = 0; k < 2000; ++k) {
        const auto nv = soft_backup(d, g, v);
        const real diff = std::max(std::fabs(nv[0] - v[0]), std::fabs(nv[1] - v[1]));
        v = nv;
        if (diff < 1e-17L) break;
    }
    return v;
}

/// V^mu from the 2x2 on-policy system, solved by Cramer's rule (KL(mu|mu) = 0).
inline std::array<real, 2> value_of_reference(const D1& d, const FineGrid& g) {
    std::array<real, 2> r{}, p1{};
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t i = 0; i < g.a.size(); ++i) {
            r[s] += g.w[i] * g.mu[i] * d.cost(s, g.a[i]);
            p1[s] += g.w[i] * g.mu[i] * d.p1(g.a[i]);
        }
    // (I - gamma P) v = r with P = [[1-p1_0, p1_0], [1-p1_1, p1_1]]
    const real a11 = 1 - d.gamma * (1 - p1[0]), a12 = -d.gamma * p1[0];
    const real a21 = -d.gamma * (1 - p1[1]), a22 = 1 - d.gamma * p1[1];
    const real det = a11 * a22 - a12 * a21;
    return {(r[0] * a22 - a12 * r[1]) / det, (a11 * r[1] - a21 * r[0]) / det};
}

/// Density of the Gibbs policy exp(-(Q - V)/tau) mu at the points xs, normalised by
/// quadrature on the fine grid. Q is the closed-form Q-function for the values v.
inline std::vector<real> gibbs_density(const D1& d, const FineGrid& g, const std::array<real, 2>& v, std::size_t s,
                                       const std::vector<real>& xs) {
    auto q = [&](real a) {
        const real p = d.p1(a);
        return d.cost(s, a) + d.gamma * ((1 - p) * v[0] + p * v[1]);
    };
    real z = 0;
    for (std::size_t i = 0; i < g.a.size(); ++i) z += g.w[i] * g.mu[i] * std::exp(-(q(g.a[i]) - v[s]) / d.tau);
    // mu at arbitrary points, with the fine-grid normaliser
    real zmu = 0;
    for (std::size_t i = 0; i < g.a.size(); ++i) zmu += g.w[i] * std::exp(-g.a[i] * g.a[i] / 2);
    std::vector<real> out;
    for (real x : xs) out.push_back(std::exp(-(q(x) - v[s]) / d.tau) * std::exp(-x * x / 2) / zmu / z);
    return out;
}

} // namespace oracle
