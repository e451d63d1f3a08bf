#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wpo/errors.hpp"
#include "wpo/flow_grid.hpp"
#include "wpo/grid.hpp"
#include "wpo/instances.hpp"
#include "wpo/mdp.hpp"
#include "wpo/policy_eval.hpp"
#include "wpo/soft_dp.hpp"
#include "wpo/trace.hpp"

namespace wpo {

struct TrialDetail {
    double residual = 0.0;
    std::map<std::string, double> values;
};

/// Outcome of one certification check. passed <=> max_residual <= tolerance.
///
/// Checks made of several parts with different tolerances report each part's
/// residual divided by its own tolerance, with tolerance 1.
struct VerificationReport {
    std::string check_name;
    std::string instance_id;
    std::size_t n_trials = 0;
    double max_residual = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    std::vector<TrialDetail> details;

    void add(TrialDetail d) {
        max_residual = n_trials == 0 ? d.residual : std::max(max_residual, d.residual);
        ++n_trials;
        details.push_back(std::move(d));
        passed = max_residual <= tolerance;
    }
};

inline VerificationReport make_report(std::string name, std::string instance_id, double tolerance) {
    VerificationReport r;
    r.check_name = std::move(name);
    r.instance_id = std::move(instance_id);
    r.tolerance = tolerance;
    r.passed = true;
    return r;
}

inline nlohmann::json to_json(const VerificationReport& r) {
    nlohmann::json details = nlohmann::json::array();
    for (const auto& d : r.details) {
        nlohmann::json vals = nlohmann::json::object();
        for (const auto& [k, v] : d.values) vals[k] = json_number(v);
        details.push_back({{"residual", json_number(d.residual)}, {"values", vals}});
    }
    return {{"check_name", r.check_name},   {"instance_id", r.instance_id}, {"n_trials", r.n_trials},
            {"max_residual", json_number(r.max_residual)}, {"tolerance", r.tolerance}, {"passed", r.passed},
            {"details", details}};
}

/// Instance plus its certified optimum.
struct VerificationContext {
    const MdpInstance* inst = nullptr;
    std::string instance_id;
    SoftSolution solution;
    FlowReference reference;
    double solve_tol = 1e-10;

    static VerificationContext make(const MdpInstance& inst, std::string id, double tol = 1e-10) {
        VerificationContext ctx;
        ctx.inst = &inst;
        ctx.instance_id = std::move(id);
        ctx.solve_tol = tol;
        ctx.solution = solve_optimal(inst, tol);
        ctx.reference = FlowReference::make(ctx.solution, inst);
        return ctx;
    }

    // FlowReference points at solution; keep it valid across moves.
    VerificationContext() = default;
    VerificationContext(const VerificationContext&) = delete;
    VerificationContext& operator=(const VerificationContext&) = delete;
    VerificationContext(VerificationContext&& o) noexcept { *this = std::move(o); }
    VerificationContext& operator=(VerificationContext&& o) noexcept {
        inst = o.inst;
        instance_id = std::move(o.instance_id);
        solution = std::move(o.solution);
        reference = std::move(o.reference);
        reference.solution = &solution;
        solve_tol = o.solve_tol;
        return *this;
    }
};

// Sandwich terms ----------------------------------------------------------

struct SandwichTerms {
    double a = 0.0; // tau/(1-gamma) sum_s KL(pi|pi*) d^pi_rho
    double b = 0.0; // V^pi(rho) - V*(rho)
    double c = 0.0; // tau/(1-gamma) sum_s KL(pi|Phi[pi]) d^{pi*}_rho
};

inline SandwichTerms sandwich_terms(const GridPolicy& pi, const VerificationContext& ctx) {
    const auto& inst = *ctx.inst;
    const auto ev = evaluate_policy(pi, inst);
    const auto d = occupancy(pi, inst, inst.rho);
    const auto prox = proximal_policy(ev, inst);
    SandwichTerms t;
    const double scale = inst.tau / (1.0 - inst.gamma);
    for (std::size_t s = 0; s < inst.m; ++s) {
        t.a += d.d[s] * kl_from_log_ratios(pi.row(s), ev.log_dpi_dmu.row(s), ctx.reference.log_ratio_star.row(s), inst.grid);
        t.c += ctx.reference.d_star.d[s] *
               kl_from_log_ratios(pi.row(s), ev.log_dpi_dmu.row(s), prox.log_dphi_dmu.row(s), inst.grid);
    }
    t.a *= scale;
    t.c *= scale;
    t.b = integrate_against(ev.v, inst.rho) - ctx.reference.v_star_rho;
    return t;
}

/// |A - B| <= tol and B <= C + tol, tol = 1e-6.
inline VerificationReport check_entropy_sandwich(std::span<const GridPolicy> policies, const VerificationContext& ctx,
                                                 double tol = 1e-6) {
    auto rep = make_report("entropy_sandwich", ctx.instance_id, tol);
    for (const auto& pi : policies) {
        const auto t = sandwich_terms(pi, ctx);
        rep.add({std::max(std::abs(t.a - t.b), t.b - t.c), {{"A", t.a}, {"B", t.b}, {"C", t.c}}});
    }
    return rep;
}

/// The equality half of the sandwich alone: V^pi(rho) - V*(rho) = tau/(1-gamma) sum KL(pi|pi*) d^pi_rho.
inline VerificationReport check_gap_as_kl(std::span<const GridPolicy> policies, const VerificationContext& ctx,
                                          double tol = 1e-7) {
    auto rep = make_report("gap_as_kl", ctx.instance_id, tol);
    for (const auto& pi : policies) {
        const auto t = sandwich_terms(pi, ctx);
        rep.add({std::abs(t.a - t.b), {{"A", t.a}, {"B", t.b}}});
    }
    return rep;
}

// Performance difference ---------------------------------------------------

struct PerformanceDifference {
    double lhs = 0.0;
    double rhs = 0.0;
};

inline PerformanceDifference performance_difference(const GridPolicy& pi, const GridPolicy& pi_prime,
                                                    std::span<const double> rho, const MdpInstance& inst) {
    const auto ev = evaluate_policy(pi, inst);
    const auto ev_p = evaluate_policy(pi_prime, inst);
    const auto d = occupancy(pi, inst, rho);
    PerformanceDifference out;
    out.lhs = integrate_against(ev.v, rho) - integrate_against(ev_p.v, rho);
    for (std::size_t s = 0; s < inst.m; ++s) {
        double inner = 0.0;
        for (std::size_t i = 0; i < inst.n(); ++i) {
            const double integrand = ev_p.q(s, i) + inst.tau * ev_p.log_dpi_dmu(s, i);
            inner += inst.grid.weights[i] * integrand * (pi.density(s, i) - pi_prime.density(s, i));
        }
        inner += inst.tau * kl_from_log_ratios(pi.row(s), ev.log_dpi_dmu.row(s), ev_p.log_dpi_dmu.row(s), inst.grid);
        out.rhs += d.d[s] * inner;
    }
    out.rhs /= 1.0 - inst.gamma;
    return out;
}

inline VerificationReport check_performance_difference(std::span<const std::pair<GridPolicy, GridPolicy>> pairs,
                                                       std::span<const double> rho, const VerificationContext& ctx,
                                                       double tol = 1e-7) {
    auto rep = make_report("performance_difference", ctx.instance_id, tol);
    for (const auto& [pi, pi_prime] : pairs) {
        const auto pd = performance_difference(pi, pi_prime, rho, *ctx.inst);
        rep.add({std::abs(pd.lhs - pd.rhs), {{"lhs", pd.lhs}, {"rhs", pd.rhs}}});
    }
    return rep;
}

// Dynamic programming ------------------------------------------------------

/// Bellman residual <= 2 tol; Gibbs formula and log-partition identity pointwise <= 1e-8.
inline VerificationReport check_dpp_residual(const SoftSolution& sol, const VerificationContext& ctx,
                                             double identity_tol = 1e-8) {
    const auto& inst = *ctx.inst;
    auto rep = make_report("dpp_residual", ctx.instance_id, 1.0);
    const auto tv = soft_bellman_apply(sol.v_star, inst);
    const double bellman = sup_distance(tv, sol.v_star);

    double gibbs = 0.0, log_partition = 0.0;
    for (std::size_t s = 0; s < inst.m; ++s) {
        log_partition = std::max(log_partition, std::abs(sol.v_star[s] - soft_min(sol.q_star.row(s), inst)));
        for (std::size_t i = 0; i < inst.n(); ++i) {
            const double formula = std::exp(-(sol.q_star(s, i) - sol.v_star[s]) / inst.tau) * inst.ref.density[i];
            gibbs = std::max(gibbs, std::abs(formula - sol.pi_star.density(s, i)));
        }
    }
    const double res = std::max({bellman / (2.0 * sol.tol), gibbs / identity_tol, log_partition / identity_tol});
    rep.add({res, {{"bellman_residual", bellman}, {"gibbs_formula", gibbs}, {"log_partition", log_partition},
                   {"iters", static_cast<double>(sol.iters)}}});
    return rep;
}

// Log-Sobolev ---------------------------------------------------------------

/// Holley-Stroock lower bound on the LSI constant of Phi[pi]:
/// alpha_mu * min_s exp(-osc_s / tau), osc_s the range of Q(s, .) - V(s) over the grid.
inline double lsi_constant_bound(const PolicyEvaluation& ev, const MdpInstance& inst) {
    double worst = 0.0;
    for (std::size_t s = 0; s < inst.m; ++s) {
        const auto q = ev.q.row(s);
        const auto [lo, hi] = std::minmax_element(q.begin(), q.end());
        worst = std::max(worst, *hi - *lo);
    }
    return inst.ref.lsi_alpha * std::exp(-worst / inst.tau);
}

inline double lsi_from_oscillation(std::span<const double> q_osc, const MdpInstance& inst) {
    const double worst = q_osc.empty() ? 0.0 : *std::max_element(q_osc.begin(), q_osc.end());
    return inst.ref.lsi_alpha * std::exp(-worst / inst.tau);
}

/// KL(pi|Phi[pi])(s) <= Fisher(pi|Phi[pi])(s) / (2 alpha) + 1e-7 for every state.
inline VerificationReport check_local_lsi(std::span<const GridPolicy> policies, const VerificationContext& ctx,
                                          double tol = 1e-7) {
    const auto& inst = *ctx.inst;
    auto rep = make_report("local_lsi", ctx.instance_id, tol);
    for (const auto& pi : policies) {
        const auto ev = evaluate_policy(pi, inst);
        const auto prox = proximal_policy(ev, inst);
        const double alpha = lsi_constant_bound(ev, inst);
        const auto fisher = relative_fisher(pi, ev, prox, inst);
        double worst = -std::numeric_limits<double>::infinity();
        double worst_kl = 0.0, worst_bound = 0.0;
        for (std::size_t s = 0; s < inst.m; ++s) {
            const double kl = kl_from_log_ratios(pi.row(s), ev.log_dpi_dmu.row(s), prox.log_dphi_dmu.row(s), inst.grid);
            const double bound = fisher[s] / (2.0 * alpha);
            if (kl - bound > worst) {
                worst = kl - bound;
                worst_kl = kl;
                worst_bound = bound;
            }
        }
        rep.add({worst, {{"alpha", alpha}, {"kl", worst_kl}, {"fisher_bound", worst_bound}}});
    }
    return rep;
}

// Kappa bounds ---------------------------------------------------------------

inline VerificationReport check_kappa_bounds(const VerificationContext& ctx, double tol = 1e-10) {
    const auto& inst = *ctx.inst;
    auto rep = make_report("kappa_bounds", ctx.instance_id, tol);
    const auto kb = kappa_bounds(ctx.solution.pi_star, inst);
    const double upper = kb.kappa_bar - 1.0 / (1.0 - inst.gamma);
    const double lower = 1.0 / kb.c0 - kb.kappa_under;
    rep.add({std::max(upper, lower),
             {{"kappa_bar", kb.kappa_bar}, {"kappa_under", kb.kappa_under}, {"c0", kb.c0},
              {"one_over_one_minus_gamma", 1.0 / (1.0 - inst.gamma)}}});
    return rep;
}

// Pointwise occupancy -------------------------------------------------------

/// (1-gamma)^{-1} sum_{s'} F(s') d^pi_{delta_s}(s') <= F(s) + tol for F <= 0.
inline VerificationReport check_pointwise_occupancy(std::span<const std::pair<std::vector<double>, GridPolicy>> trials,
                                                    const VerificationContext& ctx, double tol = 1e-10) {
    const auto& inst = *ctx.inst;
    auto rep = make_report("pointwise_occupancy", ctx.instance_id, tol);
    for (const auto& [f, pi] : trials) {
        for (double x : f)
            if (x > 0.0) throw DomainError("check_pointwise_occupancy: F must be nonpositive");
        double worst = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < inst.m; ++s) {
            const auto d = occupancy(pi, inst, dirac(inst.m, s));
            const double lhs = integrate_against(f, d.d) / (1.0 - inst.gamma);
            worst = std::max(worst, lhs - f[s]);
        }
        rep.add({worst, {}});
    }
    return rep;
}

// Policy improvement ------------------------------------------------------

/// V^{Phi[pi]}(s) <= V^pi(s) + tol for every state.
inline VerificationReport check_monotone_improvement(std::span<const GridPolicy> policies,
                                                     const VerificationContext& ctx, double tol = 1e-8) {
    const auto& inst = *ctx.inst;
    auto rep = make_report("monotone_improvement", ctx.instance_id, tol);
    for (const auto& pi : policies) {
        const auto ev = evaluate_policy(pi, inst);
        const auto ev_next = evaluate_policy(proximal_policy(ev, inst).policy, inst);
        double worst = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < inst.m; ++s) worst = std::max(worst, ev_next.v[s] - ev.v[s]);
        rep.add({worst, {}});
    }
    return rep;
}

// Flow checks ---------------------------------------------------------------

struct EnvelopeCheck {
    VerificationReport envelope;
    VerificationReport rate;
    double kappa_bar = 0.0;
    double kappa_under = 0.0;
    double alpha = 0.0;
    double g0 = 0.0;
    double tol_solver = 0.0;
    double predicted_rate = 0.0;
    std::optional<RateFit> fit;
    std::optional<std::size_t> first_violation;
};

/// Records with gap above this are well clear of the solver tolerance and usable for the rate fit.
inline constexpr double kRateFitGapFloor = 1e-8;

/// gap(t) <= kappa_bar G0 exp(-2 kappa_under alpha tau t) + tol_solver at every record, and gap >= -1e-7.
/// The rate part compares the fitted decay rate with 0.9 times the certified rate when the
/// second half of the trace stays above kRateFitGapFloor.
inline EnvelopeCheck check_gronwall_envelope(const FlowTrace& trace, const VerificationContext& ctx,
                                             double rate_window = 0.5) {
    const auto& inst = *ctx.inst;
    const auto& sol = ctx.solution;
    EnvelopeCheck out;
    if (trace.records.empty()) throw InsufficientData("check_gronwall_envelope: empty trace");

    const auto kb = kappa_bounds(sol.pi_star, inst);
    out.kappa_bar = kb.kappa_bar;
    out.kappa_under = kb.kappa_under;
    out.alpha = std::numeric_limits<double>::infinity();
    for (const auto& r : trace.records) out.alpha = std::min(out.alpha, lsi_from_oscillation(r.q_osc, inst));
    const auto& first = trace.records.front();
    for (std::size_t s = 0; s < inst.m; ++s) out.g0 += (first.v[s] - sol.v_star[s]) * kb.occupancy.d[s];
    out.tol_solver = std::max(1e-6, 3.0 * trace.dt * std::abs(first.dissipation_rhs));
    out.predicted_rate = 2.0 * out.kappa_under * out.alpha * inst.tau;

    // residual > tol_solver iff the upper envelope fails or gap < -1e-7
    out.envelope = make_report("gronwall_envelope", ctx.instance_id, out.tol_solver);
    for (std::size_t k = 0; k < trace.records.size(); ++k) {
        const auto& r = trace.records[k];
        const double env = out.kappa_bar * out.g0 * std::exp(-out.predicted_rate * r.t);
        double res = r.gap - env;
        if (r.gap < -1e-7) res = std::max(res, out.tol_solver + (-1e-7 - r.gap));
        if (res > out.tol_solver && !out.first_violation) out.first_violation = k;
        out.envelope.add({res, {{"t", r.t}, {"gap", r.gap}, {"envelope", env}}});
    }

    out.rate = make_report("gronwall_rate", ctx.instance_id, 0.0);
    const double t_end = trace.records.back().t;
    bool usable = t_end > 0.0;
    for (const auto& r : trace.records)
        if (r.t >= rate_window * t_end && !(r.gap > kRateFitGapFloor)) usable = false;
    if (usable) {
        try {
            out.fit = fit_rate(trace, rate_window);
        } catch (const InsufficientData&) {
            usable = false;
        }
    }
    if (usable) {
        out.rate.add({0.9 * out.predicted_rate - out.fit->rate,
                      {{"fitted_rate", out.fit->rate}, {"r_squared", out.fit->r_squared},
                       {"predicted_rate", out.predicted_rate}}});
    } else {
        out.rate.add({-1.0, {{"applicable", 0.0}, {"predicted_rate", out.predicted_rate}}});
    }
    return out;
}

/// Throws EnvelopeViolation naming the first record above the envelope.
inline void require_envelope(const EnvelopeCheck& chk, const FlowTrace& trace) {
    if (chk.first_violation) {
        const auto k = *chk.first_violation;
        throw EnvelopeViolation(k, trace.records[k].t,
                                "gap above the Gronwall envelope at record " + std::to_string(k) + " (t = " +
                                    format_double(trace.records[k].t) + ")");
    }
}

/// v_rho non-increasing within tol per accepted step.
inline VerificationReport check_monotone_dissipation(const FlowTrace& trace, const std::string& id, double tol = 1e-8) {
    auto rep = make_report("monotone_dissipation", id, tol);
    double worst = -std::numeric_limits<double>::infinity();
    std::size_t at = 0;
    for (std::size_t k = 1; k < trace.steps.size(); ++k) {
        const double inc = trace.steps[k].v_rho - trace.steps[k - 1].v_rho;
        if (inc > worst) {
            worst = inc;
            at = k;
        }
    }
    if (trace.steps.size() < 2) worst = 0.0;
    rep.add({worst, {{"worst_step", static_cast<double>(at)}}});
    return rep;
}

/// Centred difference of v_rho at each interior record against dissipation_rhs,
/// within max(1e-4, 5% |rate|). Residuals normalised by that allowance.
inline VerificationReport check_dissipation_identity(const FlowTrace& trace, const std::string& id) {
    auto rep = make_report("dissipation_identity", id, 1.0);
    const double dt = trace.dt;
    for (const auto& r : trace.records) {
        const auto k = static_cast<std::size_t>(std::llround(r.t / dt));
        if (k == 0 || k + 1 >= trace.steps.size()) continue;
        const double slope = (trace.steps[k + 1].v_rho - trace.steps[k - 1].v_rho) / (2.0 * dt);
        const double allowance = std::max(1e-4, 0.05 * std::abs(r.dissipation_rhs));
        rep.add({std::abs(slope - r.dissipation_rhs) / allowance,
                 {{"t", r.t}, {"slope", slope}, {"rate", r.dissipation_rhs}}});
    }
    if (rep.n_trials == 0) rep.add({0.0, {{"applicable", 0.0}}});
    return rep;
}

/// max_s |V^{pi_t}(s)| <= max(|V^{pi_0}|, |V*|) + 1e-6 at all records.
inline VerificationReport check_value_bounds(const FlowTrace& trace, const VerificationContext& ctx, double tol = 1e-6) {
    auto rep = make_report("value_bounds", ctx.instance_id, tol);
    if (trace.records.empty()) return rep;
    auto sup = [](std::span<const double> v) {
        double m = 0.0;
        for (double x : v) m = std::max(m, std::abs(x));
        return m;
    };
    const double bound = std::max(sup(trace.records.front().v), sup(ctx.solution.v_star));
    for (const auto& r : trace.records) rep.add({sup(r.v) - bound, {{"t", r.t}}});
    return rep;
}

/// Flow started at pi*: sup_t sup_s KL(pi_t|pi*)(s) <= tol.
inline VerificationReport check_stationarity(const FlowTrace& trace, const std::string& id, double tol = 1e-4) {
    auto rep = make_report("stationarity", id, tol);
    for (const auto& r : trace.records) {
        double worst = 0.0;
        for (double k : r.kl_opt) worst = std::max(worst, k);
        rep.add({worst, {{"t", r.t}}});
    }
    return rep;
}

/// Scalars for summary.json.
inline TraceSummary summarise(const FlowTrace& trace, const VerificationContext& ctx) {
    TraceSummary s;
    if (trace.records.empty()) return s;
    s.final_gap = trace.records.back().gap;
    try {
        const auto fit = fit_rate(trace);
        s.fitted_rate = fit.rate;
        s.r_squared = fit.r_squared;
    } catch (const InsufficientData&) {
    }
    const auto env = check_gronwall_envelope(trace, ctx);
    s.kappa_bar = env.kappa_bar;
    s.kappa_under = env.kappa_under;
    s.alpha = env.alpha;
    s.predicted_rate = env.predicted_rate;
    s.envelope_passed = env.envelope.passed;
    return s;
}

// Suite ----------------------------------------------------------------------

struct SuiteOptions {
    std::size_t trials = 20;
    std::uint64_t seed = 7;
    double t_end = 5.0;
    double dt = 1e-3;
    std::size_t record_every = 100;
    double stationarity_t_end = 1.0;
};

/// Every certification check on one instance, sorted by check name.
inline std::vector<VerificationReport> run_verification_suite(const MdpInstance& inst, const std::string& id,
                                                              const GridPolicy& pi0, const SuiteOptions& opt) {
    auto ctx = VerificationContext::make(inst, id);
    std::mt19937_64 rng(opt.seed);

    std::vector<GridPolicy> policies{ctx.solution.pi_star, reference_policy(inst.m, inst.ref)};
    for (std::size_t k = 0; k < opt.trials; ++k) policies.push_back(random_gibbs_policy(inst, rng));

    std::vector<std::pair<GridPolicy, GridPolicy>> pairs;
    pairs.emplace_back(policies[1], policies[1]);
    pairs.emplace_back(policies[1], ctx.solution.pi_star);
    for (std::size_t k = 0; k < opt.trials; ++k) pairs.emplace_back(random_gibbs_policy(inst, rng), random_gibbs_policy(inst, rng));

    std::vector<std::pair<std::vector<double>, GridPolicy>> occ_trials;
    occ_trials.emplace_back(std::vector<double>(inst.m, 0.0), policies[1]);
    std::uniform_real_distribution<double> u(-2.0, 0.0);
    for (std::size_t k = 0; k < opt.trials; ++k) {
        std::vector<double> f(inst.m);
        for (double& x : f) x = u(rng);
        occ_trials.emplace_back(std::move(f), random_gibbs_policy(inst, rng));
    }

    std::vector<VerificationReport> out;
    out.push_back(check_dpp_residual(ctx.solution, ctx));
    out.push_back(check_kappa_bounds(ctx));
    out.push_back(check_gap_as_kl(policies, ctx));
    out.push_back(check_entropy_sandwich(policies, ctx));
    out.push_back(check_performance_difference(pairs, inst.rho, ctx));
    out.push_back(check_local_lsi(policies, ctx));
    out.push_back(check_pointwise_occupancy(occ_trials, ctx));
    out.push_back(check_monotone_improvement(policies, ctx));

    const auto flow = run_flow(inst, pi0, ctx.solution, opt.t_end, opt.dt, opt.record_every);
    auto env = check_gronwall_envelope(flow.trace, ctx);
    out.push_back(std::move(env.envelope));
    out.push_back(std::move(env.rate));
    out.push_back(check_monotone_dissipation(flow.trace, id));
    out.push_back(check_dissipation_identity(flow.trace, id));
    out.push_back(check_value_bounds(flow.trace, ctx));

    const auto still = run_flow(inst, ctx.solution.pi_star, ctx.solution, opt.stationarity_t_end, opt.dt, opt.record_every);
    out.push_back(check_stationarity(still.trace, id));

    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return a.check_name < b.check_name; });
    return out;
}

} // namespace wpo
