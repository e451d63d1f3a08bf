#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <tbb/parallel_for.h>

#include "wpo/errors.hpp"
#include "wpo/grid.hpp"
#include "wpo/mdp.hpp"
#include "wpo/policy_eval.hpp"
#include "wpo/soft_dp.hpp"
#include "wpo/trace.hpp"

namespace wpo {

/// Pre-step mass drift above this rejects the step.
inline constexpr double kMaxStepMassError = 1e-6;

struct FlowState {
    double t = 0.0;
    std::size_t step = 0;
    GridPolicy pi;
    PolicyEvaluation eval;
    double mass_error = 0.0; // pre-renormalisation drift of the step that produced this state
};

/// Quantities of the optimum needed by every diagnostics record.
struct FlowReference {
    const SoftSolution* solution = nullptr;
    StateActionField log_ratio_star;
    OccupancyMeasure d_star;
    double v_star_rho = 0.0;

    static FlowReference make(const SoftSolution& sol, const MdpInstance& inst) {
        FlowReference ref;
        ref.solution = &sol;
        ref.log_ratio_star = log_density_ratio(sol.pi_star, inst.ref);
        ref.d_star = occupancy(sol.pi_star, inst, inst.rho);
        ref.v_star_rho = integrate_against(sol.v_star, inst.rho);
        return ref;
    }
};

inline FlowState make_flow_state(const GridPolicy& pi0, const MdpInstance& inst) {
    FlowState st;
    st.pi = pi0;
    st.eval = evaluate_policy(st.pi, inst);
    return st;
}

/// Bernoulli function x / (e^x - 1).
inline double bernoulli(double x) {
    if (std::abs(x) < 1e-10) return 1.0 - 0.5 * x;
    return x / std::expm1(x);
}

/// Nodal drift grad_a Q + tau grad_a U by centred differences.
inline StateActionField drift_field(const PolicyEvaluation& ev, const MdpInstance& inst) {
    StateActionField b(inst.m, inst.n());
    const auto du = grid_gradient(inst.grid, inst.ref.potential);
    for (std::size_t s = 0; s < inst.m; ++s) {
        const auto dq = grid_gradient(inst.grid, ev.q.row(s));
        for (std::size_t i = 0; i < inst.n(); ++i) b(s, i) = dq[i] + inst.tau * du[i];
    }
    return b;
}

/// The implicit scheme is unconditionally stable; dt is limited by accuracy only.
inline double stability_budget(const MdpInstance&) { return std::numeric_limits<double>::infinity(); }

namespace detail {

/// Solves a tridiagonal system in place (Thomas). lower[0] and upper[n-1] are unused.
inline void thomas_solve(std::vector<double>& lower, std::vector<double>& diag, std::vector<double>& upper,
                         std::vector<double>& rhs) {
    const std::size_t n = diag.size();
    for (std::size_t i = 1; i < n; ++i) {
        const double f = lower[i] / diag[i - 1];
        diag[i] -= f * upper[i - 1];
        rhs[i] -= f * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
}

/// One implicit Chang-Cooper step for a single state's density.
///
/// Vertex-centred finite volumes (cell widths = trapezoid weights), exponentially
/// fitted fluxes J_{i+1/2} = (tau/h) [B(dpsi/tau) p_i - B(-dpsi/tau) p_{i+1}] with
/// psi = Q + tau U and dpsi the difference across the interface, zero flux at +-L.
/// The zero-flux state is exp(-psi/tau), i.e. the proximal policy on the grid.
inline double chang_cooper_step(std::span<double> p, std::span<const double> q, const MdpInstance& inst, double dt) {
    const std::size_t n = inst.n();
    const double tau = inst.tau;
    const double h = inst.grid.h;
    const auto& w = inst.grid.weights;
    const auto& u = inst.ref.potential;

    std::vector<double> fwd(n - 1), bwd(n - 1); // coefficients of p_i and p_{i+1} in J_{i+1/2}
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double dpsi = (q[i + 1] - q[i]) + tau * (u[i + 1] - u[i]);
        fwd[i] = tau / h * bernoulli(dpsi / tau);
        bwd[i] = tau / h * bernoulli(-dpsi / tau);
    }
    std::vector<double> lower(n, 0.0), diag(n), upper(n, 0.0), rhs(n);
    double mass_before = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        diag[i] = w[i];
        if (i + 1 < n) {
            diag[i] += dt * fwd[i];
            upper[i] = -dt * bwd[i];
        }
        if (i > 0) {
            diag[i] += dt * bwd[i - 1];
            lower[i] = -dt * fwd[i - 1];
        }
        rhs[i] = w[i] * p[i];
        mass_before += rhs[i];
    }
    thomas_solve(lower, diag, upper, rhs);
    double mass_after = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(rhs[i] >= 0.0) || !std::isfinite(rhs[i]))
            throw NegativeDensity("Chang-Cooper step produced a negative density at index " + std::to_string(i));
        mass_after += w[i] * rhs[i];
    }
    for (std::size_t i = 0; i < n; ++i) p[i] = rhs[i] / mass_after;
    return std::max(std::abs(mass_after - 1.0), std::abs(mass_after - mass_before));
}

} // namespace detail

/// Advances the policy by dt along the Wasserstein gradient flow, drift frozen at the step start.
inline FlowState flow_step(const FlowState& state, double dt, const MdpInstance& inst) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("flow_step: dt must be positive and finite");
    FlowState next;
    next.t = state.t + dt;
    next.step = state.step + 1;
    next.pi = state.pi;
    std::vector<double> mass_err(inst.m, 0.0);
    tbb::parallel_for(std::size_t{0}, inst.m, [&](std::size_t s) {
        mass_err[s] = detail::chang_cooper_step(next.pi.density.row(s), state.eval.q.row(s), inst, dt);
    });
    next.mass_error = *std::max_element(mass_err.begin(), mass_err.end());
    if (next.mass_error > kMaxStepMassError)
        throw StepRejected("flow step mass error " + std::to_string(next.mass_error) + " exceeds 1e-6");
    next.eval = evaluate_policy(next.pi, inst);
    return next;
}

/// d/dt V^{pi_t}(rho) = -(1-gamma)^{-1} sum_s d(s) int |grad g|^2 dpi.
inline double dissipation_rate(const GridPolicy& pi, const PolicyEvaluation& ev, const MdpInstance& inst,
                               std::span<const double> rho) {
    const auto g = flat_derivative(pi, ev, inst.tau);
    const auto d = occupancy(pi, inst, rho);
    double acc = 0.0;
    for (std::size_t s = 0; s < inst.m; ++s) {
        const auto dg = grid_gradient(inst.grid, g.g.row(s));
        double inner = 0.0;
        for (std::size_t i = 0; i < inst.n(); ++i) inner += inst.grid.weights[i] * dg[i] * dg[i] * pi.density(s, i);
        acc += d.d[s] * inner;
    }
    return -acc / (1.0 - inst.gamma);
}

/// int |grad_a ln(dpi/dPhi[pi])|^2 dpi per state.
inline std::vector<double> relative_fisher(const GridPolicy& pi, const PolicyEvaluation& ev, const ProximalPolicy& prox,
                                           const MdpInstance& inst) {
    std::vector<double> out(inst.m);
    std::vector<double> lr(inst.n());
    for (std::size_t s = 0; s < inst.m; ++s) {
        for (std::size_t i = 0; i < inst.n(); ++i) lr[i] = ev.log_dpi_dmu(s, i) - prox.log_dphi_dmu(s, i);
        const auto d = grid_gradient(inst.grid, lr);
        double acc = 0.0;
        for (std::size_t i = 0; i < inst.n(); ++i) acc += inst.grid.weights[i] * d[i] * d[i] * pi.density(s, i);
        out[s] = acc;
    }
    return out;
}

inline DiagnosticsRecord diagnose(const GridPolicy& pi, const PolicyEvaluation& ev, double t, double mass_error,
                                  const MdpInstance& inst, const FlowReference& ref) {
    DiagnosticsRecord r;
    r.t = t;
    r.mass_error = mass_error;
    r.v = ev.v;
    r.v_rho = integrate_against(ev.v, inst.rho);
    r.gap = r.v_rho - ref.v_star_rho;
    r.dissipation_rhs = dissipation_rate(pi, ev, inst, inst.rho);

    const auto prox = proximal_policy(ev, inst);
    const auto d = occupancy(pi, inst, inst.rho);
    r.kl_opt.resize(inst.m);
    r.kl_prox.resize(inst.m);
    r.q_osc.resize(inst.m);
    r.fisher_prox = relative_fisher(pi, ev, prox, inst);
    for (std::size_t s = 0; s < inst.m; ++s) {
        r.kl_opt[s] = kl_from_log_ratios(pi.row(s), ev.log_dpi_dmu.row(s), ref.log_ratio_star.row(s), inst.grid);
        r.kl_prox[s] = kl_from_log_ratios(pi.row(s), ev.log_dpi_dmu.row(s), prox.log_dphi_dmu.row(s), inst.grid);
        const auto q = ev.q.row(s);
        const auto [lo, hi] = std::minmax_element(q.begin(), q.end());
        r.q_osc[s] = *hi - *lo;
        r.kl_opt_total += d.d[s] * r.kl_opt[s];
        r.kl_prox_total += ref.d_star.d[s] * r.kl_prox[s];
        r.fisher_prox_total += d.d[s] * r.fisher_prox[s];
    }
    return r;
}

struct FlowResult {
    FlowTrace trace;
    FlowState final_state;
};

/// Number of steps of size dt that cover [0, t_end].
inline std::size_t step_count(double t_end, double dt) {
    if (t_end == 0.0) return 0;
    return static_cast<std::size_t>(std::llround(t_end / dt));
}

inline bool is_record_step(std::size_t k, std::size_t steps, std::size_t record_every) {
    return k == 0 || k == steps || k % record_every == 0;
}

/// Integrates the grid flow from pi0 to t_end, recording every record_every steps and at the end.
inline FlowResult run_flow(const MdpInstance& inst, const GridPolicy& pi0, const SoftSolution& sol, double t_end,
                           double dt, std::size_t record_every) {
    if (!(t_end >= 0.0)) throw DomainError("run_flow: t_end must be nonnegative");
    if (!(dt > 0.0)) throw DomainError("run_flow: dt must be positive");
    if (record_every == 0) throw DomainError("run_flow: record_every must be positive");
    const auto ref = FlowReference::make(sol, inst);
    FlowResult res;
    res.trace.dt = dt;
    res.trace.provenance.solver = "grid";

    FlowState st = make_flow_state(pi0, inst);
    res.trace.records.push_back(diagnose(st.pi, st.eval, 0.0, 0.0, inst, ref));
    res.trace.steps.push_back({0.0, res.trace.records.back().v_rho, 0.0});

    const std::size_t steps = step_count(t_end, dt);
    for (std::size_t k = 1; k <= steps; ++k) {
        try {
            st = flow_step(st, dt, inst);
        } catch (FlowStepError& e) {
            e.time = static_cast<double>(k - 1) * dt;
            throw;
        }
        st.t = static_cast<double>(k) * dt;
        res.trace.steps.push_back({st.t, integrate_against(st.eval.v, inst.rho), st.mass_error});
        if (is_record_step(k, steps, record_every))
            res.trace.records.push_back(diagnose(st.pi, st.eval, st.t, st.mass_error, inst, ref));
    }
    res.final_state = std::move(st);
    return res;
}

} // namespace wpo
