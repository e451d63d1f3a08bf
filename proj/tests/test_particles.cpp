#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>
#include <tbb/global_control.h>

#include "wpo/flow_grid.hpp"
#include "wpo/instances.hpp"
#include "wpo/particles.hpp"

using namespace wpo;

namespace {

MdpInstance constant_cost_instance() {
    auto spec = d1_spec();
    spec.cost = TableCost{{{1.0}, {1.0}}};
    spec.transition = TableTransition{{{0.7, 0.3}, {0.2, 0.8}}, {}};
    return build_instance(spec);
}

// Pool-adjacent-violators fit of a non-increasing sequence; returns sup |y - fit|.
double antitonic_residual(const std::vector<double>& y) {
    struct Block {
        double sum;
        double count;
    };
    std::vector<Block> blocks;
    for (double v : y) {
        blocks.push_back({v, 1.0});
        while (blocks.size() > 1) {
            const auto& b = blocks.back();
            const auto& a = blocks[blocks.size() - 2];
            if (a.sum / a.count >= b.sum / b.count) break;
            const Block merged{a.sum + b.sum, a.count + b.count};
            blocks.pop_back();
            blocks.back() = merged;
        }
    }
    double worst = 0.0;
    std::size_t k = 0;
    for (const auto& b : blocks)
        for (int j = 0; j < static_cast<int>(b.count); ++j) worst = std::max(worst, std::abs(y[k++] - b.sum / b.count));
    return worst;
}

double sup_gap_difference(const FlowTrace& a, const FlowTrace& b) {
    double worst = 0.0;
    for (std::size_t k = 0; k < std::min(a.records.size(), b.records.size()); ++k)
        worst = std::max(worst, std::abs(a.records[k].gap - b.records[k].gap));
    return worst;
}

} // namespace

TEST(ParticleStep, ZeroNoiseAndFlatValueLeaveParticlesInPlace) {
    const auto inst = constant_cost_instance();
    const auto ens = sample_ensemble(gaussian_policy(inst, {1.0, -1.0}, {0.7, 1.2}), inst.grid, 5000, 3);
    const auto ev = evaluate_policy(estimate_density(ens, inst.grid), inst);
    ParticleStepOptions opt;
    opt.tau_override = 0.0;
    const auto next = particle_step(ens, ev, 1e-2, inst, opt);
    EXPECT_EQ(next.positions, ens.positions);
    EXPECT_EQ(next.step, 1u);
}

TEST(ParticleStep, ReferenceIsTheLongRunLaw) {
    const auto inst = constant_cost_instance();
    const auto ens0 = sample_ensemble(gaussian_policy(inst, {2.0, -2.0}, {0.5, 0.5}), inst.grid, 50000, 11);
    const auto res = run_particle_flow(inst, ens0, solve_optimal(inst, 1e-10), 10.0, 1e-2, 1000);
    const auto pi = estimate_density(res.final_ensemble, inst.grid);
    for (std::size_t s = 0; s < inst.m; ++s) EXPECT_LE(kl_divergence(pi.row(s), inst.ref.density, inst.grid), 0.01);
}

TEST(ParticleStep, GoldenD1Step) {
    const auto inst = build_instance(d1_spec());
    const auto ens = sample_ensemble(reference_policy(inst.m, inst.ref), inst.grid, 1000, 42);
    const auto ev = evaluate_policy(estimate_density(ens, inst.grid), inst);
    const auto next = particle_step(ens, ev, 1e-3, inst);
    struct Golden {
        std::size_t s, k;
        double before, after;
    };
    const Golden golden[] = {
        {0, 0, 0x1.c8aa8946a75d7p-3, 0x1.b05c81b04d9a4p-3},
        {0, 1, 0x1.6807897bbcd31p-2, 0x1.461ee70cd82c7p-2},
        {0, 2, -0x1.313e8b93588a2p-1, -0x1.19dd788a8b9b6p-1},
        {0, 499, -0x1.441443d4b944dp+0, -0x1.3fbd4b035564dp+0},
        {0, 999, -0x1.0830dc11d9222p+1, -0x1.0ab4567dfabeep+1},
        {1, 0, 0x1.0110caba075bdp+0, 0x1.099c4c0f60f14p+0},
        {1, 1, -0x1.de0b4def9fb01p-3, -0x1.99feb3cb1a8f5p-3},
        {1, 2, 0x1.3286f457ef3cp-1, 0x1.0eb72ca88239ap-1},
        {1, 499, -0x1.06db7a7c6ceb6p-5, -0x1.bb0fcb61125b4p-5},
        {1, 999, 0x1.c97aada5e7dap-2, 0x1.c5ec86cb9e8fbp-2},
    };
    for (const auto& g : golden) {
        EXPECT_EQ(ens.positions[g.s][g.k], g.before) << g.s << "," << g.k;
        EXPECT_EQ(next.positions[g.s][g.k], g.after) << g.s << "," << g.k;
    }
}

TEST(ParticleStep, MeanDisplacementMatchesIntegratedDrift) {
    const auto inst = build_instance(d1_spec());
    const auto ens = sample_ensemble(tanh_gibbs_policy(inst, 0.3), inst.grid, 50000, 5);
    const auto pi = estimate_density(ens, inst.grid);
    const auto ev = evaluate_policy(pi, inst);
    const double dt = 1e-3;
    const auto next = particle_step(ens, ev, dt, inst);
    const auto b = drift_field(ev, inst);
    for (std::size_t s = 0; s < inst.m; ++s) {
        const double n = static_cast<double>(ens.n_particles);
        double mean = 0.0, sq = 0.0;
        for (std::size_t k = 0; k < ens.n_particles; ++k) {
            const double d = next.positions[s][k] - ens.positions[s][k];
            mean += d;
            sq += d * d;
        }
        mean /= n;
        const double se = std::sqrt((sq / n - mean * mean) / n);
        double expected = 0.0;
        for (std::size_t i = 0; i < inst.n(); ++i) expected -= inst.grid.weights[i] * b(s, i) * pi.density(s, i);
        expected *= dt;
        EXPECT_LE(std::abs(mean - expected), 3.0 * se) << "state " << s;
    }
}

TEST(ParticleStep, IndependentOfWorkerCount) {
    const auto inst = build_instance(d1_spec());
    const auto ens = sample_ensemble(reference_policy(inst.m, inst.ref), inst.grid, 20000, 9);
    const auto ev = evaluate_policy(estimate_density(ens, inst.grid), inst);
    ParticleEnsemble one, many;
    {
        tbb::global_control cap(tbb::global_control::max_allowed_parallelism, 1);
        one = particle_step(particle_step(ens, ev, 1e-3, inst), ev, 1e-3, inst);
    }
    {
        tbb::global_control cap(tbb::global_control::max_allowed_parallelism, 4);
        many = particle_step(particle_step(ens, ev, 1e-3, inst), ev, 1e-3, inst);
    }
    EXPECT_EQ(one.positions, many.positions);
}

TEST(EstimateDensity, SingleCellGivesSmoothedDelta) {
    const auto g = ActionGrid::make(201, 8.0);
    ParticleEnsemble ens;
    ens.n_particles = 1000;
    ens.positions.assign(1, std::vector<double>(1000, g.points[100] + 0.01));
    const auto pi = estimate_density(ens, g);
    EXPECT_NEAR(g.integrate(pi.row(0)), 1.0, 1e-14);
    EXPECT_NEAR(pi.density(0, 99) / pi.density(0, 100), 0.5, 1e-12);
    EXPECT_NEAR(pi.density(0, 101) / pi.density(0, 100), 0.5, 1e-12);
    EXPECT_NEAR(pi.density(0, 0) / pi.density(0, 100), kDensityFloor, 1e-25);
    EXPECT_NO_THROW(pi.validate(g));
}

TEST(EstimateDensity, ReferenceDrawsAreCloseInKl) {
    const auto inst = build_instance(d1_spec());
    const auto ens = sample_ensemble(reference_policy(inst.m, inst.ref), inst.grid, 100000, 2024);
    const auto pi = estimate_density(ens, inst.grid);
    for (std::size_t s = 0; s < inst.m; ++s) EXPECT_LE(kl_divergence(pi.row(s), inst.ref.density, inst.grid), 0.005);
}

TEST(EstimateDensity, RandomEnsemblesGiveValidPolicies) {
    const auto g = ActionGrid::make(201, 8.0);
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> centre(-6.0, 6.0), width(0.05, 3.0);
    for (int k = 0; k < 50; ++k) {
        ParticleEnsemble ens;
        ens.n_particles = 1000;
        ens.positions.assign(3, std::vector<double>(1000));
        for (auto& row : ens.positions) {
            std::normal_distribution<double> law(centre(rng), width(rng));
            for (double& x : row) x = std::clamp(law(rng), -8.0, 8.0);
        }
        const auto pi = estimate_density(ens, g);
        EXPECT_NO_THROW(pi.validate(g));
        EXPECT_LE(pi.max_mass_error(g), 1e-12);
    }
}

TEST(ParticleFlow, SameSeedSameTrace) {
    const auto inst = build_instance(d1_spec());
    const auto sol = solve_optimal(inst, 1e-10);
    const auto mu = reference_policy(inst.m, inst.ref);
    auto run = [&] {
        return trace_csv(run_particle_flow(inst, sample_ensemble(mu, inst.grid, 5000, 42), sol, 0.2, 1e-2, 5).trace);
    };
    EXPECT_EQ(run(), run());
}

TEST(ParticleFlow, GapDecreasesUpToNoise) {
    const auto inst = build_instance(d1_spec());
    const auto sol = solve_optimal(inst, 1e-10);
    const auto ens = sample_ensemble(reference_policy(inst.m, inst.ref), inst.grid, 50000, 42);
    const auto res = run_particle_flow(inst, ens, sol, 3.0, 5e-3, 10);
    std::vector<double> gaps;
    for (const auto& r : res.trace.records) gaps.push_back(r.gap);
    EXPECT_LE(antitonic_residual(gaps), 3e-2);
    EXPECT_LT(gaps.back(), 0.1 * gaps.front());
}

TEST(ParticleFlow, AgreementImprovesWithEnsembleSize) {
    const auto inst = build_instance(d1_spec());
    const auto sol = solve_optimal(inst, 1e-10);
    const auto mu = reference_policy(inst.m, inst.ref);
    const auto grid = run_flow(inst, mu, sol, 2.0, 1e-2, 10).trace;
    const auto small = run_particle_flow(inst, sample_ensemble(mu, inst.grid, 10000, 42), sol, 2.0, 1e-2, 10).trace;
    const auto large = run_particle_flow(inst, sample_ensemble(mu, inst.grid, 100000, 42), sol, 2.0, 1e-2, 10).trace;
    ASSERT_EQ(small.records.size(), grid.records.size());
    EXPECT_LT(sup_gap_difference(large, grid), sup_gap_difference(small, grid));
    EXPECT_LE(sup_gap_difference(large, grid), 2e-2);
}

TEST(ParticleFlow, TooFewParticlesIsRejected) {
    const auto inst = build_instance(d1_spec());
    const auto sol = solve_optimal(inst, 1e-10);
    const auto ens = sample_ensemble(reference_policy(inst.m, inst.ref), inst.grid, 999, 1);
    EXPECT_THROW(run_particle_flow(inst, ens, sol, 1.0, 1e-2, 10), DomainError);
}

TEST(ParticleStep, RejectsNonPositiveStep) {
    const auto inst = build_instance(d1_spec());
    const auto ens = sample_ensemble(reference_policy(inst.m, inst.ref), inst.grid, 1000, 1);
    const auto ev = evaluate_policy(estimate_density(ens, inst.grid), inst);
    EXPECT_THROW(particle_step(ens, ev, 0.0, inst), DomainError);
}
