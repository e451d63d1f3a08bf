#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <tbb/global_control.h>

#include "wpo/flow_grid.hpp"
#include "wpo/instances.hpp"
#include "wpo/verify.hpp"

using namespace wpo;

namespace {

struct D1Flow : ::testing::Test {
    MdpInstance inst = build_instance(d1_spec());
    SoftSolution sol = solve_optimal(inst, 1e-10);
    GridPolicy mu = reference_policy(inst.m, inst.ref);
};

double final_v_rho(const MdpInstance& inst, const SoftSolution& sol, const GridPolicy& pi0, double dt) {
    return run_flow(inst, pi0, sol, 1.0, dt, 1000000).trace.records.back().v_rho;
}

} // namespace

TEST_F(D1Flow, OptimumIsStationary) {
    const auto res = run_flow(inst, sol.pi_star, sol, 1.0, 1e-3, 100);
    ASSERT_EQ(res.trace.records.size(), 11u);
    for (const auto& r : res.trace.records)
        for (double kl : r.kl_opt) EXPECT_LE(kl, 1e-4);
}

TEST(FlowStep, ConstantCostRelaxesToReference) {
    auto spec = d1_spec();
    spec.cost = TableCost{{{1.0}, {1.0}}};
    spec.transition = TableTransition{{{0.7, 0.3}, {0.2, 0.8}}, {}};
    const auto inst = build_instance(spec);
    auto st = make_flow_state(gaussian_policy(inst, {2.0, -1.5}, {0.5, 1.5}), inst);
    std::vector<double> prev(inst.m, INFINITY);
    // Means relax at rate tau = 0.5; t = 15 leaves KL well under 1e-3.
    for (int k = 0; k < 1500; ++k) {
        st = flow_step(st, 1e-2, inst);
        for (std::size_t s = 0; s < inst.m; ++s) {
            const double kl = kl_divergence(st.pi.row(s), inst.ref.density, inst.grid);
            EXPECT_LT(kl, prev[s]);
            prev[s] = kl;
        }
    }
    EXPECT_LT(prev[0], 1e-3);
}

TEST_F(D1Flow, ValueDecreasesAtEveryStep) {
    const auto res = run_flow(inst, mu, sol, 2.0, 1e-3, 100);
    for (std::size_t k = 1; k < res.trace.steps.size(); ++k)
        EXPECT_LE(res.trace.steps[k].v_rho, res.trace.steps[k - 1].v_rho + 1e-8) << "step " << k;
}

TEST_F(D1Flow, GapShrinksHundredfoldByTimeTen) {
    const auto res = run_flow(inst, mu, sol, 10.0, 1e-3, 100);
    ASSERT_EQ(res.trace.records.size(), 101u);
    EXPECT_LE(res.trace.records.back().gap, 0.01 * res.trace.records.front().gap);
    for (std::size_t k = 1; k < res.trace.records.size(); ++k)
        EXPECT_GT(res.trace.records[k].t, res.trace.records[k - 1].t);
}

TEST_F(D1Flow, ZeroHorizonRecordsOnlyTheStart) {
    const auto res = run_flow(inst, mu, sol, 0.0, 1e-3, 10);
    ASSERT_EQ(res.trace.records.size(), 1u);
    EXPECT_EQ(res.trace.records[0].t, 0.0);
}

TEST_F(D1Flow, FirstOrderInTime) {
    const double v1 = final_v_rho(inst, sol, mu, 1e-2);
    const double v2 = final_v_rho(inst, sol, mu, 5e-3);
    const double v4 = final_v_rho(inst, sol, mu, 2.5e-3);
    EXPECT_LE(std::abs(v1 - v2), 5.0 * std::abs(v2 - v4));
    EXPECT_GT(std::abs(v2 - v4), 0.0);
}

TEST_F(D1Flow, DissipationVanishesAtOptimum) {
    EXPECT_NEAR(dissipation_rate(sol.pi_star, evaluate_policy(sol.pi_star, inst), inst, inst.rho), 0.0, 1e-8);
}

TEST_F(D1Flow, DissipationIsNonPositive) {
    std::mt19937_64 rng(17);
    for (int k = 0; k < 100; ++k) {
        const auto pi = random_gibbs_policy(inst, rng);
        EXPECT_LE(dissipation_rate(pi, evaluate_policy(pi, inst), inst, inst.rho), 0.0);
    }
}

TEST_F(D1Flow, DissipationMatchesCentredSlope) {
    const auto res = run_flow(inst, mu, sol, 10.0, 1e-3, 100);
    const auto rep = check_dissipation_identity(res.trace, "d1");
    EXPECT_TRUE(rep.passed) << rep.max_residual;
    EXPECT_GE(rep.n_trials, 99u);
}

TEST_F(D1Flow, MassAndPositivityArePreserved) {
    auto st = make_flow_state(mu, inst);
    for (int k = 0; k < 200; ++k) {
        st = flow_step(st, 1e-3, inst);
        EXPECT_LE(st.mass_error, 1e-9);
        for (double v : st.pi.density.data()) ASSERT_GT(v, 0.0);
        EXPECT_LE(st.pi.max_mass_error(inst.grid), 1e-12);
    }
}

TEST_F(D1Flow, DriftFormsAgree) {
    std::mt19937_64 rng(23);
    for (int k = 0; k < 10; ++k) {
        const auto pi = random_gibbs_policy(inst, rng);
        const auto ev = evaluate_policy(pi, inst);
        const auto prox = proximal_policy(ev, inst);
        const auto b = drift_field(ev, inst);
        for (std::size_t s = 0; s < inst.m; ++s) {
            std::vector<double> lp(inst.n()), lr(inst.n());
            for (std::size_t i = 0; i < inst.n(); ++i) {
                lp[i] = std::log(pi.density(s, i));
                lr[i] = ev.log_dpi_dmu(s, i) - prox.log_dphi_dmu(s, i);
            }
            const auto dlp = grid_gradient(inst.grid, lp);
            const auto dlr = grid_gradient(inst.grid, lr);
            for (std::size_t i = 0; i < inst.n(); ++i)
                EXPECT_NEAR(b(s, i) + inst.tau * dlp[i], inst.tau * dlr[i], 1e-6);
        }
    }
}

TEST_F(D1Flow, IndependentOfWorkerCount) {
    FlowTrace one, many;
    {
        tbb::global_control cap(tbb::global_control::max_allowed_parallelism, 1);
        one = run_flow(inst, mu, sol, 0.5, 1e-3, 50).trace;
    }
    {
        tbb::global_control cap(tbb::global_control::max_allowed_parallelism, 4);
        many = run_flow(inst, mu, sol, 0.5, 1e-3, 50).trace;
    }
    EXPECT_EQ(trace_csv(one), trace_csv(many));
}

TEST_F(D1Flow, NegativeInputDensityIsReported) {
    auto st = make_flow_state(mu, inst);
    st.pi.density(0, 100) = -50.0;
    EXPECT_THROW(flow_step(st, 1e-3, inst), NegativeDensity);
}

TEST_F(D1Flow, RejectsBadStepSizes) {
    const auto st = make_flow_state(mu, inst);
    EXPECT_THROW(flow_step(st, 0.0, inst), DomainError);
    EXPECT_THROW(run_flow(inst, mu, sol, 1.0, -1e-3, 10), DomainError);
}

TEST(Bernoulli, SmoothThroughZero) {
    EXPECT_EQ(bernoulli(0.0), 1.0);
    EXPECT_NEAR(bernoulli(1e-12), 1.0 - 0.5e-12, 1e-20);
    EXPECT_NEAR(bernoulli(1.0), 1.0 / (std::exp(1.0) - 1.0), 1e-15);
    EXPECT_NEAR(bernoulli(-1.0) - bernoulli(1.0), 1.0, 1e-15);
}
