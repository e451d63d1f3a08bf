#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "wpo/errors.hpp"
#include "wpo/grid.hpp"
#include "wpo/mdp.hpp"
#include "wpo/soft_dp.hpp"

namespace wpo {

struct PolicyEvaluation {
    std::vector<double> v;
    StateActionField q;
    std::vector<double> kl_mu;
    StateActionField log_dpi_dmu;
};

struct OccupancyMeasure {
    std::vector<double> d;
};

/// g = Q + tau ln(dpi/dmu) - V, without the action-constant occupancy density factor.
struct FlatDerivativeField {
    StateActionField g;
};

struct ProximalPolicy {
    GridPolicy policy;
    std::vector<double> log_partition; // ln Z_pi(s)
    StateActionField log_dphi_dmu;
};

inline double integrate_against(std::span<const double> v, std::span<const double> law) {
    double acc = 0.0;
    for (std::size_t s = 0; s < v.size(); ++s) acc += v[s] * law[s];
    return acc;
}

/// ln(dpi/dmu) at the grid points, with the density floored before the logarithm.
inline StateActionField log_density_ratio(const GridPolicy& pi, const ReferenceMeasure& ref) {
    StateActionField lr(pi.states(), ref.density.size());
    for (std::size_t s = 0; s < pi.states(); ++s) {
        const auto lp = floored_log(pi.row(s));
        for (std::size_t i = 0; i < lp.size(); ++i) lr(s, i) = lp[i] - ref.log_density[i];
    }
    return lr;
}

/// KL(p | p') for one state, from the two stored log-density ratios against mu.
inline double kl_from_log_ratios(std::span<const double> p, std::span<const double> lr_p,
                                 std::span<const double> lr_other, const ActionGrid& grid) {
    double acc = 0.0;
    for (std::size_t i = 0; i < grid.n; ++i) acc += grid.weights[i] * p[i] * (lr_p[i] - lr_other[i]);
    return acc;
}

/// P_pi(s, s') = int P(s' | s, a) pi(da | s).
inline Eigen::MatrixXd policy_kernel(const GridPolicy& pi, const MdpInstance& inst) {
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(inst.m), static_cast<Eigen::Index>(inst.m));
    for (std::size_t s = 0; s < inst.m; ++s) {
        const auto p = pi.row(s);
        for (std::size_t i = 0; i < inst.n(); ++i) {
            const double wp = inst.grid.weights[i] * p[i];
            const auto law = inst.next_law(s, i);
            for (std::size_t s2 = 0; s2 < inst.m; ++s2)
                k(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s2)) += wp * law[s2];
        }
    }
    return k;
}

namespace detail {

inline Eigen::VectorXd solve_dense(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (!lu.isInvertible()) throw SingularSystem("policy linear system is singular; corrupted kernel?");
    Eigen::VectorXd x = lu.solve(b);
    if (!x.allFinite()) throw SingularSystem("policy linear system produced non-finite values");
    return x;
}

} // namespace detail

/// Exact evaluation of a stationary grid policy: (I - gamma P_pi) v = r.
inline PolicyEvaluation evaluate_policy(const GridPolicy& pi, const MdpInstance& inst) {
    if (pi.states() != inst.m) throw DomainError("policy state count does not match the instance");
    pi.validate(inst.grid);

    PolicyEvaluation ev;
    ev.log_dpi_dmu = log_density_ratio(pi, inst.ref);
    ev.kl_mu.resize(inst.m);
    Eigen::VectorXd r(static_cast<Eigen::Index>(inst.m));
    for (std::size_t s = 0; s < inst.m; ++s) {
        const auto p = pi.row(s);
        const auto lr = ev.log_dpi_dmu.row(s);
        double cost = 0.0, kl = 0.0;
        for (std::size_t i = 0; i < inst.n(); ++i) {
            const double wp = inst.grid.weights[i] * p[i];
            cost += wp * inst.cost(s, i);
            kl += wp * lr[i];
        }
        ev.kl_mu[s] = kl;
        r(static_cast<Eigen::Index>(s)) = cost + inst.tau * kl;
    }
    const auto k = policy_kernel(pi, inst);
    const Eigen::MatrixXd a =
        Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(inst.m), static_cast<Eigen::Index>(inst.m)) - inst.gamma * k;
    const Eigen::VectorXd v = detail::solve_dense(a, r);
    ev.v.assign(v.data(), v.data() + v.size());
    ev.q = q_from_values(ev.v, inst);
    return ev;
}

/// Discounted occupancy d = (1 - gamma) (I - gamma P_pi^T)^{-1} base.
inline OccupancyMeasure occupancy(const GridPolicy& pi, const MdpInstance& inst, std::span<const double> base) {
    if (base.size() != inst.m) throw DomainError("occupancy: base law length mismatch");
    double total = 0.0;
    for (double b : base) {
        if (!(b >= 0.0)) throw DomainError("occupancy: base law must be nonnegative");
        total += b;
    }
    if (std::abs(total - 1.0) > 1e-9) throw DomainError("occupancy: base law must sum to 1");

    const auto k = policy_kernel(pi, inst);
    const auto m = static_cast<Eigen::Index>(inst.m);
    const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(m, m) - inst.gamma * k.transpose();
    Eigen::VectorXd b(m);
    for (Eigen::Index s = 0; s < m; ++s) b(s) = base[static_cast<std::size_t>(s)];
    const Eigen::VectorXd d = (1.0 - inst.gamma) * detail::solve_dense(a, b);
    OccupancyMeasure occ;
    occ.d.assign(d.data(), d.data() + d.size());
    return occ;
}

inline std::vector<double> dirac(std::size_t m, std::size_t s) {
    std::vector<double> e(m, 0.0);
    e[s] = 1.0;
    return e;
}

inline FlatDerivativeField flat_derivative(const GridPolicy& pi, const PolicyEvaluation& ev, double tau) {
    FlatDerivativeField f{StateActionField(ev.q.states(), ev.q.actions())};
    for (std::size_t s = 0; s < pi.states(); ++s)
        for (std::size_t i = 0; i < ev.q.actions(); ++i)
            f.g(s, i) = ev.q(s, i) + tau * ev.log_dpi_dmu(s, i) - ev.v[s];
    return f;
}

/// Phi[pi] proportional to exp(-(Q - V) / tau) mu, normalised per state.
inline ProximalPolicy proximal_policy(const PolicyEvaluation& ev, const MdpInstance& inst) {
    ProximalPolicy prox;
    prox.log_partition.resize(inst.m);
    prox.log_dphi_dmu = StateActionField(inst.m, inst.n());
    prox.policy = GridPolicy{StateActionField(inst.m, inst.n())};
    std::vector<double> x(inst.n());
    for (std::size_t s = 0; s < inst.m; ++s) {
        for (std::size_t i = 0; i < inst.n(); ++i)
            x[i] = -(ev.q(s, i) - ev.v[s]) / inst.tau + inst.ref.log_density[i] + std::log(inst.grid.weights[i]);
        const double log_z = log_sum_exp(x);
        prox.log_partition[s] = log_z;
        for (std::size_t i = 0; i < inst.n(); ++i) {
            const double lr = -(ev.q(s, i) - ev.v[s]) / inst.tau - log_z;
            prox.log_dphi_dmu(s, i) = lr;
            prox.policy.density(s, i) = std::exp(lr + inst.ref.log_density[i]);
        }
    }
    return prox;
}

struct KappaBounds {
    double kappa_bar = 0.0;
    double kappa_under = 0.0;
    double c0 = 0.0;
    OccupancyMeasure occupancy;
    bool lower_bound_holds = false; // kappa_under >= 1/c0 - 1e-10
};

/// Density-ratio bounds of rho against the optimal occupancy.
inline KappaBounds kappa_bounds(const GridPolicy& pi_star, const MdpInstance& inst) {
    for (double r : inst.rho)
        if (!(r > 0.0)) throw UnsupportedRho("kappa bounds need rho with full support");
    KappaBounds kb;
    kb.occupancy = occupancy(pi_star, inst, inst.rho);
    kb.kappa_bar = 0.0;
    kb.kappa_under = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < inst.m; ++s) {
        const double ratio = inst.rho[s] / kb.occupancy.d[s];
        kb.kappa_bar = std::max(kb.kappa_bar, ratio);
        kb.kappa_under = std::min(kb.kappa_under, ratio);
    }
    // c0 = 1 - gamma + int int K(s, a) pi*(da|s) rho(ds), K(s, a) = max_{s'} P(s'|s, a) / rho(s')
    double integral = 0.0;
    for (std::size_t s = 0; s < inst.m; ++s) {
        double inner = 0.0;
        for (std::size_t i = 0; i < inst.n(); ++i) {
            const auto law = inst.next_law(s, i);
            double k = 0.0;
            for (std::size_t s2 = 0; s2 < inst.m; ++s2) k = std::max(k, law[s2] / inst.rho[s2]);
            inner += inst.grid.weights[i] * k * pi_star.density(s, i);
        }
        integral += inner * inst.rho[s];
    }
    kb.c0 = 1.0 - inst.gamma + integral;
    kb.lower_bound_holds = kb.kappa_under >= 1.0 / kb.c0 - 1e-10;
    return kb;
}

} // namespace wpo
