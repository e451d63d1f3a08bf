#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "wpo/errors.hpp"

namespace wpo {

/// Relative floor applied to densities before any logarithm.
inline constexpr double kDensityFloor = 1e-15;

/// Tolerance on per-state mass of a GridPolicy.
inline constexpr double kMassTolerance = 1e-10;

/// Uniform, symmetric grid on [-L, L] with trapezoid weights.
///
/// The weights double as finite-volume cell widths of the vertex-centred mesh:
/// interior cells have width h, the two boundary cells h/2.
struct ActionGrid {
    std::size_t n = 0;
    double half_width = 0.0;
    double h = 0.0;
    std::vector<double> points;
    std::vector<double> weights;

    static ActionGrid make(std::size_t n, double half_width) {
        if (n < 3 || n % 2 == 0)
            throw InvariantError("action grid needs an odd point count >= 3, got " + std::to_string(n));
        if (!(half_width > 0.0) || !std::isfinite(half_width))
            throw InvariantError("action grid half-width must be positive and finite");
        ActionGrid g;
        g.n = n;
        g.half_width = half_width;
        g.h = 2.0 * half_width / static_cast<double>(n - 1);
        g.points.resize(n);
        g.weights.assign(n, g.h);
        const std::size_t mid = (n - 1) / 2;
        for (std::size_t i = 0; i < n; ++i) {
            // exact symmetry about zero
            const double k = static_cast<double>(i) - static_cast<double>(mid);
            g.points[i] = k * g.h;
        }
        g.points.front() = -half_width;
        g.points.back() = half_width;
        g.weights.front() = g.weights.back() = 0.5 * g.h;
        return g;
    }

    double integrate(std::span<const double> f) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += weights[i] * f[i];
        return acc;
    }

    /// Integral of f * p.
    double integrate(std::span<const double> f, std::span<const double> p) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += weights[i] * f[i] * p[i];
        return acc;
    }
};

/// Centred differences at the nodes, one-sided at the two ends.
inline std::vector<double> grid_gradient(const ActionGrid& grid, std::span<const double> f) {
    const std::size_t n = grid.n;
    std::vector<double> d(n);
    d[0] = (f[1] - f[0]) / grid.h;
    d[n - 1] = (f[n - 1] - f[n - 2]) / grid.h;
    for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (f[i + 1] - f[i - 1]) / (2.0 * grid.h);
    return d;
}

/// ln sum_i exp(x_i), shifted by the max.
inline double log_sum_exp(std::span<const double> x) {
    const double m = *std::max_element(x.begin(), x.end());
    if (!std::isfinite(m)) return m;
    double acc = 0.0;
    for (double v : x) acc += std::exp(v - m);
    return m + std::log(acc);
}

/// Potential families for the reference measure mu = exp(-U) da.
struct PotentialFamily {
    enum class Kind { gaussian, flat };
    Kind kind = Kind::gaussian;
    double sigma = 1.0;

    double value(double a) const {
        switch (kind) {
        case Kind::gaussian: return 0.5 * a * a / (sigma * sigma);
        case Kind::flat: return 0.0;
        }
        return 0.0;
    }

    /// Log-Sobolev constant of mu (convention KL <= I / (2 alpha)).
    ///
    /// Gaussian: 1/sigma^2; truncating to a symmetric interval can only raise it.
    /// Flat on [-L, L]: the uniform law on an interval of length l has constant pi^2 / l^2.
    double lsi_alpha(double half_width) const {
        switch (kind) {
        case Kind::gaussian: return 1.0 / (sigma * sigma);
        case Kind::flat: {
            const double len = 2.0 * half_width;
            return std::numbers::pi * std::numbers::pi / (len * len);
        }
        }
        return 0.0;
    }

    std::string name() const { return kind == Kind::gaussian ? "gaussian" : "flat"; }
};

struct ReferenceMeasure {
    PotentialFamily family;
    std::vector<double> potential;   // U_i
    std::vector<double> density;     // mu_i, sum_i w_i mu_i = 1
    std::vector<double> log_density; // ln mu_i
    double lsi_alpha = 1.0;
};

inline ReferenceMeasure reference_weights(const ActionGrid& grid, const PotentialFamily& family) {
    ReferenceMeasure ref;
    ref.family = family;
    ref.potential.resize(grid.n);
    for (std::size_t i = 0; i < grid.n; ++i) {
        ref.potential[i] = family.value(grid.points[i]);
        if (!std::isfinite(ref.potential[i]))
            throw DomainError("reference potential not finite at a = " + std::to_string(grid.points[i]));
    }
    const double umin = *std::min_element(ref.potential.begin(), ref.potential.end());
    if (std::exp(-umin) == 0.0)
        throw OverflowError("exp(-U) underflows to zero at every grid point");

    std::vector<double> shifted(grid.n);
    for (std::size_t i = 0; i < grid.n; ++i) shifted[i] = std::exp(-(ref.potential[i] - umin));
    const double z = grid.integrate(shifted);
    const double log_z = std::log(z);
    ref.density.resize(grid.n);
    ref.log_density.resize(grid.n);
    for (std::size_t i = 0; i < grid.n; ++i) {
        ref.density[i] = shifted[i] / z;
        ref.log_density[i] = -(ref.potential[i] - umin) - log_z;
    }
    ref.lsi_alpha = family.lsi_alpha(grid.half_width);
    return ref;
}

/// Dense row-major table over states x grid points.
class StateActionField {
public:
    StateActionField() = default;
    StateActionField(std::size_t states, std::size_t actions, double fill = 0.0)
        : states_(states), actions_(actions), data_(states * actions, fill) {}

    std::size_t states() const noexcept { return states_; }
    std::size_t actions() const noexcept { return actions_; }

    double& operator()(std::size_t s, std::size_t i) { return data_[s * actions_ + i]; }
    double operator()(std::size_t s, std::size_t i) const { return data_[s * actions_ + i]; }

    std::span<double> row(std::size_t s) { return {data_.data() + s * actions_, actions_}; }
    std::span<const double> row(std::size_t s) const { return {data_.data() + s * actions_, actions_}; }

    std::span<const double> data() const noexcept { return data_; }

    bool operator==(const StateActionField&) const = default;

private:
    std::size_t states_ = 0;
    std::size_t actions_ = 0;
    std::vector<double> data_;
};

/// Floored logarithm of a density row: ln max(p_i, floor * max_j p_j).
inline std::vector<double> floored_log(std::span<const double> p) {
    const double pmax = *std::max_element(p.begin(), p.end());
    const double fl = kDensityFloor * pmax;
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = std::log(std::max(p[i], fl));
    return out;
}

/// Per-state Lebesgue densities at the grid points.
struct GridPolicy {
    StateActionField density;

    std::size_t states() const noexcept { return density.states(); }
    std::span<const double> row(std::size_t s) const { return density.row(s); }

    double mass(std::size_t s, const ActionGrid& grid) const { return grid.integrate(density.row(s)); }

    double max_mass_error(const ActionGrid& grid) const {
        double e = 0.0;
        for (std::size_t s = 0; s < states(); ++s) e = std::max(e, std::abs(mass(s, grid) - 1.0));
        return e;
    }

    void normalise(const ActionGrid& grid) {
        for (std::size_t s = 0; s < states(); ++s) {
            const double m = mass(s, grid);
            for (double& v : density.row(s)) v /= m;
        }
    }

    /// Throws DomainError unless every row is nonnegative, finite and normalised.
    void validate(const ActionGrid& grid, double tol = kMassTolerance) const {
        if (density.actions() != grid.n) throw DomainError("policy grid size does not match the action grid");
        for (std::size_t s = 0; s < states(); ++s) {
            for (double v : density.row(s))
                if (!(v >= 0.0) || !std::isfinite(v))
                    throw DomainError("policy density negative or non-finite in state " + std::to_string(s));
            const double err = std::abs(mass(s, grid) - 1.0);
            if (err > tol)
                throw DomainError("policy not normalised in state " + std::to_string(s) +
                                  " (mass error " + std::to_string(err) + ")");
        }
    }
};

/// The reference measure itself, repeated for every state.
inline GridPolicy reference_policy(std::size_t states, const ReferenceMeasure& ref) {
    GridPolicy pi{StateActionField(states, ref.density.size())};
    for (std::size_t s = 0; s < states; ++s) std::ranges::copy(ref.density, pi.density.row(s).begin());
    return pi;
}

/// Gibbs policy exp(f) mu / Z built from log-weights f(s, a_i).
inline GridPolicy gibbs_policy(const StateActionField& f, const ActionGrid& grid, const ReferenceMeasure& ref) {
    GridPolicy pi{StateActionField(f.states(), grid.n)};
    std::vector<double> x(grid.n);
    for (std::size_t s = 0; s < f.states(); ++s) {
        for (std::size_t i = 0; i < grid.n; ++i) x[i] = f(s, i) + ref.log_density[i] + std::log(grid.weights[i]);
        const double log_z = log_sum_exp(x);
        for (std::size_t i = 0; i < grid.n; ++i) pi.density(s, i) = std::exp(f(s, i) + ref.log_density[i] - log_z);
    }
    return pi;
}

/// KL(p | q) by trapezoid quadrature, both densities floored before the logarithm.
inline double kl_divergence(std::span<const double> p, std::span<const double> q, const ActionGrid& grid) {
    if (p.size() != grid.n || q.size() != grid.n) throw DomainError("kl_divergence: size mismatch");
    for (std::size_t i = 0; i < grid.n; ++i)
        if (!(p[i] >= 0.0) || !(q[i] >= 0.0) || !std::isfinite(p[i]) || !std::isfinite(q[i]))
            throw DomainError("kl_divergence: densities must be finite and nonnegative");
    const double pfloor = kDensityFloor * *std::max_element(p.begin(), p.end());
    for (std::size_t i = 0; i < grid.n; ++i)
        if (q[i] == 0.0 && p[i] > pfloor)
            throw DomainError("kl_divergence: p has mass where q vanishes (index " + std::to_string(i) + ")");
    const auto lp = floored_log(p);
    const auto lq = floored_log(q);
    double acc = 0.0;
    for (std::size_t i = 0; i < grid.n; ++i) acc += grid.weights[i] * p[i] * (lp[i] - lq[i]);
    return acc;
}

} // namespace wpo
