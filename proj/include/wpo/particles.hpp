#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <boost/random/normal_distribution.hpp>
#include <tbb/parallel_for.h>

#include "wpo/errors.hpp"
#include "wpo/flow_grid.hpp"
#include "wpo/grid.hpp"
#include "wpo/mdp.hpp"
#include "wpo/policy_eval.hpp"
#include "wpo/trace.hpp"

namespace wpo {

/// Particles are processed in fixed-size blocks; each block owns an RNG stream.
inline constexpr std::size_t kParticleBlock = 4096;

struct ParticleEnsemble {
    std::vector<std::vector<double>> positions; // [s][k]
    double t = 0.0;
    std::size_t step = 0;
    std::uint64_t seed = 0;
    std::size_t n_particles = 0;
};

struct ParticleStepOptions {
    /// Replaces tau in both the tau grad U drift and the noise (0 gives deterministic transport).
    std::optional<double> tau_override;
};

/// Stream keyed by (seed, state, step, block); independent of how blocks are scheduled.
inline std::mt19937_64 particle_stream(std::uint64_t seed, std::size_t state, std::uint64_t step, std::size_t block,
                                       std::uint32_t purpose = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(state), static_cast<std::uint32_t>(step),
                      static_cast<std::uint32_t>(step >> 32), static_cast<std::uint32_t>(block), purpose};
    return std::mt19937_64(seq);
}

namespace detail {

template <class F>
void for_each_block(std::size_t states, std::size_t n, F&& body) {
    const std::size_t blocks = (n + kParticleBlock - 1) / kParticleBlock;
    tbb::parallel_for(std::size_t{0}, states * blocks, [&](std::size_t task) {
        const std::size_t s = task / blocks, b = task % blocks;
        body(s, b, b * kParticleBlock, std::min(n, (b + 1) * kParticleBlock));
    });
}

inline double reflect(double x, double half_width) {
    while (x > half_width || x < -half_width) {
        if (x > half_width) x = 2.0 * half_width - x;
        if (x < -half_width) x = -2.0 * half_width - x;
    }
    return x;
}

} // namespace detail

/// Draws N particles per state from a grid policy: cell by inverse CDF, then uniform in the cell.
inline ParticleEnsemble sample_ensemble(const GridPolicy& pi, const ActionGrid& grid, std::size_t n_particles,
                                        std::uint64_t seed) {
    ParticleEnsemble ens;
    ens.seed = seed;
    ens.n_particles = n_particles;
    ens.positions.assign(pi.states(), std::vector<double>(n_particles));
    std::vector<std::vector<double>> cdf(pi.states(), std::vector<double>(grid.n));
    for (std::size_t s = 0; s < pi.states(); ++s) {
        double acc = 0.0;
        for (std::size_t i = 0; i < grid.n; ++i) cdf[s][i] = (acc += grid.weights[i] * pi.density(s, i));
        for (double& c : cdf[s]) c /= acc;
    }
    detail::for_each_block(pi.states(), n_particles, [&](std::size_t s, std::size_t b, std::size_t lo, std::size_t hi) {
        auto rng = particle_stream(seed, s, 0, b, 1);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (std::size_t k = lo; k < hi; ++k) {
            const double u = unif(rng);
            auto it = std::upper_bound(cdf[s].begin(), cdf[s].end(), u);
            const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(it - cdf[s].begin()), grid.n - 1);
            const double left = std::max(-grid.half_width, grid.points[i] - 0.5 * grid.h);
            const double right = std::min(grid.half_width, grid.points[i] + 0.5 * grid.h);
            ens.positions[s][k] = left + (right - left) * unif(rng);
        }
    });
    return ens;
}

/// Euler-Maruyama step of d alpha = -(grad Q + tau grad U) dt + sqrt(2 tau) dB, reflected at +-L.
inline ParticleEnsemble particle_step(const ParticleEnsemble& ens, const PolicyEvaluation& ev, double dt,
                                      const MdpInstance& inst, const ParticleStepOptions& opt = {}) {
    if (!(dt > 0.0)) throw DomainError("particle_step: dt must be positive");
    const double tau = opt.tau_override.value_or(inst.tau);
    const auto dq_field = drift_field(ev, inst);
    const auto du = grid_gradient(inst.grid, inst.ref.potential);
    StateActionField drift(inst.m, inst.n());
    for (std::size_t s = 0; s < inst.m; ++s)
        for (std::size_t i = 0; i < inst.n(); ++i)
            drift(s, i) = dq_field(s, i) - inst.tau * du[i] + tau * du[i];

    ParticleEnsemble next = ens;
    next.t = ens.t + dt;
    next.step = ens.step + 1;
    const double noise = std::sqrt(2.0 * tau * dt);
    const double L = inst.grid.half_width, h = inst.grid.h;
    const std::size_t n = inst.n();
    detail::for_each_block(inst.m, ens.n_particles, [&](std::size_t s, std::size_t b, std::size_t lo, std::size_t hi) {
        auto rng = particle_stream(ens.seed, s, ens.step + 1, b);
        boost::random::normal_distribution<double> gauss(0.0, 1.0);
        const auto row = drift.row(s);
        auto& xs = next.positions[s];
        for (std::size_t k = lo; k < hi; ++k) {
            const double x = xs[k];
            const double u = (x + L) / h;
            const std::size_t j = std::min(static_cast<std::size_t>(std::max(0.0, std::floor(u))), n - 2);
            const double frac = u - static_cast<double>(j);
            const double bx = (1.0 - frac) * row[j] + frac * row[j + 1];
            double y = x - bx * dt;
            if (noise > 0.0) y += noise * gauss(rng);
            xs[k] = detail::reflect(y, L);
        }
    });
    return next;
}

/// Nearest-point histogram, one (1/4, 1/2, 1/4) smoothing pass, floored and renormalised.
inline GridPolicy estimate_density(const ParticleEnsemble& ens, const ActionGrid& grid) {
    const std::size_t n = grid.n;
    GridPolicy pi{StateActionField(ens.positions.size(), n)};
    std::vector<double> counts(n), smooth(n);
    for (std::size_t s = 0; s < ens.positions.size(); ++s) {
        std::fill(counts.begin(), counts.end(), 0.0);
        for (double x : ens.positions[s]) {
            const double u = (x + grid.half_width) / grid.h;
            const auto j = static_cast<std::size_t>(std::clamp<double>(std::round(u), 0.0, static_cast<double>(n - 1)));
            counts[j] += 1.0;
        }
        // reflecting ends conserve mass
        smooth[0] = 0.75 * counts[0] + 0.25 * counts[1];
        smooth[n - 1] = 0.75 * counts[n - 1] + 0.25 * counts[n - 2];
        for (std::size_t i = 1; i + 1 < n; ++i) smooth[i] = 0.25 * counts[i - 1] + 0.5 * counts[i] + 0.25 * counts[i + 1];

        auto row = pi.density.row(s);
        const double total = static_cast<double>(ens.positions[s].size());
        double pmax = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            row[i] = smooth[i] / (total * grid.weights[i]);
            pmax = std::max(pmax, row[i]);
        }
        for (double& v : row) v = std::max(v, kDensityFloor * pmax);
        const double mass = grid.integrate(row);
        for (double& v : row) v /= mass;
    }
    return pi;
}

struct ParticleFlowResult {
    FlowTrace trace;
    ParticleEnsemble final_ensemble;
};

/// Alternates estimate_density -> evaluate_policy -> particle_step; diagnostics use the estimated density.
inline ParticleFlowResult run_particle_flow(const MdpInstance& inst, const ParticleEnsemble& ens0,
                                            const SoftSolution& sol, double t_end, double dt, std::size_t record_every) {
    if (ens0.n_particles < 1000) throw DomainError("run_particle_flow: need at least 1000 particles per state");
    if (!(dt > 0.0) || !(t_end >= 0.0) || record_every == 0) throw DomainError("run_particle_flow: bad run parameters");
    const auto ref = FlowReference::make(sol, inst);
    ParticleFlowResult res;
    res.trace.dt = dt;
    res.trace.provenance.solver = "particles";
    res.trace.provenance.seed = ens0.seed;

    ParticleEnsemble ens = ens0;
    const std::size_t steps = step_count(t_end, dt);
    for (std::size_t k = 0;; ++k) {
        const double t = static_cast<double>(k) * dt;
        const auto pi = estimate_density(ens, inst.grid);
        const auto ev = evaluate_policy(pi, inst);
        const double mass_error = pi.max_mass_error(inst.grid);
        res.trace.steps.push_back({t, integrate_against(ev.v, inst.rho), mass_error});
        if (is_record_step(k, steps, record_every)) res.trace.records.push_back(diagnose(pi, ev, t, mass_error, inst, ref));
        if (k == steps) break;
        ens = particle_step(ens, ev, dt, inst);
        ens.t = static_cast<double>(k + 1) * dt;
    }
    res.final_ensemble = std::move(ens);
    return res;
}

} // namespace wpo
