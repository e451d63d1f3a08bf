#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles/quadrature.hpp"
#include "wpo/grid.hpp"

using namespace wpo;

namespace {

const PotentialFamily kGaussian{PotentialFamily::Kind::gaussian, 1.0};
const PotentialFamily kFlat{PotentialFamily::Kind::flat, 1.0};

std::vector<double> gaussian_density(const ActionGrid& g, double mean) {
    std::vector<double> p(g.n);
    for (std::size_t i = 0; i < g.n; ++i) p[i] = std::exp(-0.5 * (g.points[i] - mean) * (g.points[i] - mean));
    const double z = g.integrate(p);
    for (double& v : p) v /= z;
    return p;
}

std::vector<double> random_density(const ActionGrid& g, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double a = u(rng), b = 2.0 * u(rng), c = 0.5 + std::abs(u(rng));
    std::vector<double> p(g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        const double x = g.points[i];
        p[i] = std::exp(a * std::sin(x) - (x - b) * (x - b) / (2.0 * c * c));
    }
    const double z = g.integrate(p);
    for (double& v : p) v /= z;
    return p;
}

} // namespace

TEST(ActionGrid, LayoutAndWeights) {
    const auto g = ActionGrid::make(201, 8.0);
    EXPECT_DOUBLE_EQ(g.h, 0.08);
    EXPECT_EQ(g.points.front(), -8.0);
    EXPECT_EQ(g.points.back(), 8.0);
    EXPECT_EQ(g.points[100], 0.0);
    for (std::size_t i = 0; i + 1 < g.n; ++i) EXPECT_LT(g.points[i], g.points[i + 1]);
    for (std::size_t i = 0; i < g.n; ++i) EXPECT_EQ(g.points[i], -g.points[g.n - 1 - i]);
    EXPECT_EQ(g.weights.front(), g.h / 2);
    EXPECT_EQ(g.weights.back(), g.h / 2);
    for (std::size_t i = 1; i + 1 < g.n; ++i) EXPECT_EQ(g.weights[i], g.h);
    double total = 0.0;
    for (double w : g.weights) total += w;
    EXPECT_NEAR(total, 16.0, 1e-12);
}

TEST(ActionGrid, RejectsEvenOrTinyCounts) {
    EXPECT_THROW(ActionGrid::make(200, 8.0), InvariantError);
    EXPECT_THROW(ActionGrid::make(1, 8.0), InvariantError);
    EXPECT_THROW(ActionGrid::make(101, 0.0), InvariantError);
}

TEST(ActionGrid, TrapezoidConvergesAtSecondOrder) {
    // a^3 + 2a^2 + a + 1 on [-1, 1]: exact integral 4/3 + 2 = 10/3
    auto err = [](std::size_t n) {
        const auto g = ActionGrid::make(n, 1.0);
        std::vector<double> f(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double a = g.points[i];
            f[i] = a * a * a + 2 * a * a + a + 1;
        }
        return std::abs(g.integrate(f) - 10.0 / 3.0);
    };
    const double e51 = err(51), e101 = err(101), e201 = err(201);
    EXPECT_GE(std::log2(e51 / e101), 1.9);
    EXPECT_GE(std::log2(e101 / e201), 1.9);
}

TEST(ReferenceMeasure, GaussianIsNormalisedExactly) {
    const auto g = ActionGrid::make(201, 8.0);
    const auto ref = reference_weights(g, kGaussian);
    EXPECT_EQ(ref.lsi_alpha, 1.0);
    EXPECT_NEAR(g.integrate(ref.density), 1.0, 1e-15);
    for (double m : ref.density) EXPECT_GT(m, 0.0);
    for (std::size_t i = 0; i < g.n; ++i) EXPECT_NEAR(ref.potential[i], 0.5 * g.points[i] * g.points[i], 1e-15);
}

TEST(ReferenceMeasure, GaussianCentreMatchesQuadratureOracle) {
    const auto g = ActionGrid::make(201, 8.0);
    const auto ref = reference_weights(g, kGaussian);
    const double oracle_mu0 = static_cast<double>(1.0L / oracle::gaussian_mass(8.0L));
    EXPECT_NEAR(ref.density[100], oracle_mu0, 1e-12);
    EXPECT_NEAR(ref.density[100], 1.0 / std::sqrt(2.0 * std::numbers::pi), 1e-6);
}

TEST(ReferenceMeasure, FlatIsUniform) {
    const auto g = ActionGrid::make(201, 8.0);
    const auto ref = reference_weights(g, kFlat);
    for (double m : ref.density) EXPECT_NEAR(m, 1.0 / 16.0, 1e-15);
    EXPECT_NEAR(ref.lsi_alpha, std::numbers::pi * std::numbers::pi / 256.0, 1e-15);
}

TEST(ReferenceMeasure, NarrowGaussianStaysFinite) {
    const auto g = ActionGrid::make(201, 8.0);
    const auto ref = reference_weights(g, PotentialFamily{PotentialFamily::Kind::gaussian, 0.05});
    EXPECT_NEAR(g.integrate(ref.density), 1.0, 1e-14);
    EXPECT_NEAR(ref.lsi_alpha, 400.0, 1e-12);
}

TEST(KlDivergence, IdenticalArgumentsGiveZero) {
    const auto g = ActionGrid::make(201, 8.0);
    const auto ref = reference_weights(g, kGaussian);
    EXPECT_EQ(kl_divergence(ref.density, ref.density, g), 0.0);
}

TEST(KlDivergence, ShiftedGaussiansMatchClosedFormAndOracle) {
    const auto g = ActionGrid::make(201, 8.0);
    const double kl = kl_divergence(gaussian_density(g, 0.0), gaussian_density(g, 1.0), g);
    EXPECT_NEAR(kl, 0.5, 1e-4);
    EXPECT_NEAR(kl, static_cast<double>(oracle::truncated_gaussian_kl(0.0L, 1.0L, 8.0L)), 1e-8);
}

TEST(KlDivergence, NonnegativeAndSymmetrisedPositive) {
    const auto g = ActionGrid::make(201, 8.0);
    std::mt19937_64 rng(11);
    for (int k = 0; k < 100; ++k) {
        const auto p = random_density(g, rng);
        const auto q = random_density(g, rng);
        const double pq = kl_divergence(p, q, g), qp = kl_divergence(q, p, g);
        EXPECT_GE(pq, -1e-9);
        EXPECT_GE(qp, -1e-9);
        EXPECT_GT(pq + qp, 0.0);
    }
}

TEST(KlDivergence, MassWhereReferenceVanishesIsRejected) {
    const auto g = ActionGrid::make(11, 1.0);
    std::vector<double> p(g.n, 0.5), q(g.n, 0.0);
    q[0] = 1.0 / g.weights[0];
    EXPECT_THROW(kl_divergence(p, q, g), DomainError);
    std::vector<double> neg(g.n, 0.5);
    neg[3] = -1.0;
    EXPECT_THROW(kl_divergence(neg, p, g), DomainError);
}

TEST(KlDivergence, FlooredDensitiesStayFinite) {
    const auto g = ActionGrid::make(201, 8.0);
    auto p = gaussian_density(g, 0.0);
    auto q = gaussian_density(g, 0.0);
    for (std::size_t i = 0; i < 50; ++i) p[i] = 0.0;
    const double z = g.integrate(p);
    for (double& v : p) v /= z;
    const double kl = kl_divergence(p, q, g);
    EXPECT_TRUE(std::isfinite(kl));
    EXPECT_GE(kl, -1e-9);
}

TEST(GridPolicy, GibbsPoliciesAreValid) {
    const auto g = ActionGrid::make(201, 8.0);
    const auto ref = reference_weights(g, kGaussian);
    StateActionField f(3, g.n);
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t i = 0; i < g.n; ++i) f(s, i) = std::sin(static_cast<double>(s + 1) * g.points[i]);
    const auto pi = gibbs_policy(f, g, ref);
    EXPECT_NO_THROW(pi.validate(g));
    EXPECT_LE(pi.max_mass_error(g), 1e-12);

    GridPolicy bad = pi;
    bad.density(1, 100) *= 2.0;
    EXPECT_THROW(bad.validate(g), DomainError);
}
