#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "wpo/errors.hpp"
#include "wpo/grid.hpp"
#include "wpo/mdp.hpp"

namespace wpo {

struct SoftSolution {
    std::vector<double> v_star;
    StateActionField q_star;
    GridPolicy pi_star;
    double residual = 0.0;
    std::size_t iters = 0;
    double tol = 0.0;
};

/// Q(s, a_i) = C(s, a_i) + gamma * sum_{s'} P(s' | s, a_i) v(s').
inline StateActionField q_from_values(std::span<const double> v, const MdpInstance& inst) {
    StateActionField q(inst.m, inst.n());
    for (std::size_t s = 0; s < inst.m; ++s) {
        for (std::size_t i = 0; i < inst.n(); ++i) {
            const auto law = inst.next_law(s, i);
            double ev = 0.0;
            for (std::size_t s2 = 0; s2 < inst.m; ++s2) ev += law[s2] * v[s2];
            q(s, i) = inst.cost(s, i) + inst.gamma * ev;
        }
    }
    return q;
}

/// -tau ln int exp(-q(s, .) / tau) dmu for one state.
inline double soft_min(std::span<const double> q_row, const MdpInstance& inst) {
    std::vector<double> x(inst.n());
    for (std::size_t i = 0; i < inst.n(); ++i)
        x[i] = -q_row[i] / inst.tau + inst.ref.log_density[i] + std::log(inst.grid.weights[i]);
    return -inst.tau * log_sum_exp(x);
}

/// One application of the soft Bellman operator.
inline std::vector<double> soft_bellman_apply(std::span<const double> v, const MdpInstance& inst) {
    if (v.size() != inst.m) throw DomainError("soft_bellman_apply: value length mismatch");
    for (double x : v)
        if (!std::isfinite(x)) throw DomainError("soft_bellman_apply: non-finite value");
    const auto q = q_from_values(v, inst);
    std::vector<double> out(inst.m);
    for (std::size_t s = 0; s < inst.m; ++s) out[s] = soft_min(q.row(s), inst);
    return out;
}

inline double sup_distance(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

/// Density exp(-(q - v) / tau) mu, renormalised on the grid.
inline GridPolicy gibbs_from_q(const StateActionField& q, std::span<const double> v, const MdpInstance& inst) {
    StateActionField f(inst.m, inst.n());
    for (std::size_t s = 0; s < inst.m; ++s)
        for (std::size_t i = 0; i < inst.n(); ++i) f(s, i) = -(q(s, i) - v[s]) / inst.tau;
    return gibbs_policy(f, inst.grid, inst.ref);
}

inline constexpr std::size_t kMaxSoftIterations = 1'000'000;

/// Soft value iteration from v = 0 with the a-priori stopping rule
/// |v_{k+1} - v_k| <= tol (1 - gamma) / gamma, so that |v - V*| <= tol.
inline SoftSolution solve_optimal(const MdpInstance& inst, double tol) {
    if (!(tol > 0.0)) throw DomainError("solve_optimal: tol must be positive");
    SoftSolution sol;
    sol.tol = tol;
    std::vector<double> v(inst.m, 0.0);
    const double stop = inst.gamma > 0.0 ? tol * (1.0 - inst.gamma) / inst.gamma : 0.0;
    for (std::size_t k = 1;; ++k) {
        auto next = soft_bellman_apply(v, inst);
        const double diff = sup_distance(next, v);
        v = std::move(next);
        sol.iters = k;
        if (inst.gamma == 0.0 || diff <= stop) break;
        if (k >= kMaxSoftIterations)
            throw NonConvergence("soft value iteration hit the iteration cap; gamma too close to 1");
    }
    sol.v_star = v;
    sol.residual = sup_distance(soft_bellman_apply(v, inst), v);
    sol.q_star = q_from_values(v, inst);
    sol.pi_star = gibbs_from_q(sol.q_star, v, inst);
    return sol;
}

} // namespace wpo
