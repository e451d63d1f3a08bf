#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "wpo/grid.hpp"
#include "wpo/mdp.hpp"

namespace wpo {

/// Two-state benchmark: wells at -1 and +1, tanh(a) pushes toward state 1.
inline InstanceSpec d1_spec() {
    InstanceSpec spec;
    spec.states = 2;
    spec.gamma = 0.9;
    spec.tau = 0.5;
    spec.grid_points = 201;
    spec.half_width = 8.0;
    spec.reference = PotentialFamily{PotentialFamily::Kind::gaussian, 1.0};
    spec.cost = GaussWellCost{{1.0}, {-1.0, 1.0}, {1.0}, {0.0}};
    spec.transition = TwoStateLogisticTransition{{0.5}, {0.4}};
    spec.rho = {0.5, 0.5};
    return spec;
}

/// Seeded random instance: gauss-well costs, tanh-mix transitions, full-support rho.
inline InstanceSpec random_instance_spec(std::uint64_t seed, std::size_t states) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

    InstanceSpec spec;
    spec.states = states;
    spec.gamma = uniform(0.6, 0.9);
    spec.tau = uniform(0.3, 1.0);
    spec.grid_points = 201;
    spec.half_width = 8.0;
    spec.reference = PotentialFamily{PotentialFamily::Kind::gaussian, 1.0};

    GaussWellCost cost;
    TanhMixTransition tm;
    tm.theta.assign(states, std::vector<std::vector<double>>(states, std::vector<double>(3)));
    for (std::size_t s = 0; s < states; ++s) {
        cost.depth.push_back(uniform(0.5, 1.5));
        cost.centre.push_back(uniform(-2.0, 2.0));
        cost.width.push_back(uniform(0.5, 1.5));
        cost.offset.push_back(uniform(-0.5, 0.5));
        for (std::size_t s2 = 0; s2 < states; ++s2)
            for (double& th : tm.theta[s][s2]) th = g(rng);
    }
    spec.cost = cost;
    spec.transition = tm;

    double total = 0.0;
    for (std::size_t s = 0; s < states; ++s) total += spec.rho.emplace_back(uniform(0.5, 1.5));
    for (double& r : spec.rho) r /= total;
    return spec;
}

/// The five seeded instances used by the acceptance and verification suites.
inline std::vector<std::pair<std::string, InstanceSpec>> seeded_instances() {
    const std::size_t sizes[] = {2, 3, 5, 3, 5};
    std::vector<std::pair<std::string, InstanceSpec>> out;
    for (std::size_t k = 0; k < 5; ++k) {
        const std::uint64_t seed = 1000 + k;
        out.emplace_back("random-" + std::to_string(seed) + "-m" + std::to_string(sizes[k]),
                         random_instance_spec(seed, sizes[k]));
    }
    return out;
}

/// Random bounded log-weights f(s, a): a tanh ramp, a sinusoid and a bump.
inline StateActionField random_log_weights(std::size_t states, const ActionGrid& grid, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
    StateActionField f(states, grid.n);
    for (std::size_t s = 0; s < states; ++s) {
        const double a1 = uniform(-1.0, 1.0), c1 = uniform(0.3, 2.0), c2 = uniform(-1.0, 1.0);
        const double a2 = uniform(-0.5, 0.5), c3 = uniform(0.2, 1.5), ph = uniform(0.0, 6.28);
        const double a3 = uniform(-1.0, 1.0), c4 = uniform(-2.0, 2.0);
        for (std::size_t i = 0; i < grid.n; ++i) {
            const double a = grid.points[i];
            f(s, i) = a1 * std::tanh(c1 * a + c2) + a2 * std::sin(c3 * a + ph) + a3 * std::exp(-(a - c4) * (a - c4));
        }
    }
    return f;
}

inline GridPolicy random_gibbs_policy(const MdpInstance& inst, std::mt19937_64& rng) {
    return gibbs_policy(random_log_weights(inst.m, inst.grid, rng), inst.grid, inst.ref);
}

/// pi(f) with f(s, a) = amplitude * tanh(a) in every state.
inline GridPolicy tanh_gibbs_policy(const MdpInstance& inst, double amplitude) {
    StateActionField f(inst.m, inst.n());
    for (std::size_t s = 0; s < inst.m; ++s)
        for (std::size_t i = 0; i < inst.n(); ++i) f(s, i) = amplitude * std::tanh(inst.grid.points[i]);
    return gibbs_policy(f, inst.grid, inst.ref);
}

/// Gaussian N(mean_s, std_s^2) densities sampled on the grid and normalised.
inline GridPolicy gaussian_policy(const MdpInstance& inst, const std::vector<double>& mean, const std::vector<double>& sd) {
    GridPolicy pi{StateActionField(inst.m, inst.n())};
    for (std::size_t s = 0; s < inst.m; ++s) {
        const double m = mean.size() == 1 ? mean[0] : mean.at(s);
        const double sdev = sd.size() == 1 ? sd[0] : sd.at(s);
        for (std::size_t i = 0; i < inst.n(); ++i) {
            const double z = (inst.grid.points[i] - m) / sdev;
            pi.density(s, i) = std::exp(-0.5 * z * z);
        }
    }
    pi.normalise(inst.grid);
    return pi;
}

} // namespace wpo
