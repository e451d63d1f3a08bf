#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "wpo/errors.hpp"
#include "wpo/grid.hpp"

namespace wpo {

// Cost families ------------------------------------------------------------

/// kappa_s * (1 - exp(-(a - m_s)^2 / (2 w_s^2))) + offset_s
struct GaussWellCost {
    std::vector<double> depth;
    std::vector<double> centre;
    std::vector<double> width;
    std::vector<double> offset;
};

/// Cost values given directly at grid points, one row per state. A one-element row is constant in a.
struct TableCost {
    std::vector<std::vector<double>> values;
};

using CostSpec = std::variant<GaussWellCost, TableCost>;

// Transition families ------------------------------------------------------

/// Row softmax of theta[s][s'] . (1, tanh a, tanh^2 a).
struct TanhMixTransition {
    std::vector<std::vector<std::vector<double>>> theta;
};

/// Two states only: P(1 | s, a) = b0_s + b1_s tanh(a).
struct TwoStateLogisticTransition {
    std::vector<double> b0;
    std::vector<double> b1;
};

/// Either [s][s'] (action independent) or [s][i][s'] (one row per grid point).
struct TableTransition {
    std::vector<std::vector<double>> by_state;
    std::vector<std::vector<std::vector<double>>> by_state_action;
};

using TransitionSpec = std::variant<TanhMixTransition, TwoStateLogisticTransition, TableTransition>;

/// Typed description of an instance, before evaluation at grid points.
struct InstanceSpec {
    std::size_t states = 0;
    double gamma = 0.0;
    double tau = 1.0;
    std::size_t grid_points = 201;
    double half_width = 8.0;
    PotentialFamily reference;
    CostSpec cost;
    TransitionSpec transition;
    std::vector<double> rho;
};

/// Finite-state, 1-D action entropy-regularised MDP, discretised on a grid.
/// Immutable after build_instance.
struct MdpInstance {
    std::size_t m = 0;
    double gamma = 0.0;
    double tau = 1.0;
    ActionGrid grid;
    ReferenceMeasure ref;
    StateActionField cost;
    std::vector<double> trans; // [s][i][s'] row-major
    std::vector<double> rho;

    std::size_t n() const noexcept { return grid.n; }

    std::span<const double> next_law(std::size_t s, std::size_t i) const {
        return {trans.data() + (s * grid.n + i) * m, m};
    }

    double max_abs_cost() const {
        double c = 0.0;
        for (double v : cost.data()) c = std::max(c, std::abs(v));
        return c;
    }
};

namespace detail {

inline double per_state(const std::vector<double>& v, std::size_t s, const char* field) {
    if (v.size() == 1) return v[0];
    if (s >= v.size()) throw InvariantError(std::string(field) + ": expected one value per state");
    return v[s];
}

inline void fill_cost(MdpInstance& inst, const CostSpec& spec) {
    const std::size_t m = inst.m, n = inst.n();
    inst.cost = StateActionField(m, n);
    if (const auto* gw = std::get_if<GaussWellCost>(&spec)) {
        for (std::size_t s = 0; s < m; ++s) {
            const double k = per_state(gw->depth, s, "cost.depth");
            const double c = per_state(gw->centre, s, "cost.centre");
            const double w = per_state(gw->width, s, "cost.width");
            const double o = gw->offset.empty() ? 0.0 : per_state(gw->offset, s, "cost.offset");
            if (!(w > 0.0)) throw InvariantError("cost.width must be positive");
            for (std::size_t i = 0; i < n; ++i) {
                const double d = inst.grid.points[i] - c;
                inst.cost(s, i) = k * (1.0 - std::exp(-d * d / (2.0 * w * w))) + o;
            }
        }
    } else {
        const auto& t = std::get<TableCost>(spec);
        if (t.values.size() != m) throw InvariantError("cost table needs one row per state");
        for (std::size_t s = 0; s < m; ++s) {
            const auto& row = t.values[s];
            if (row.size() != n && row.size() != 1)
                throw InvariantError("cost table rows need one value per grid point (or a single constant)");
            for (std::size_t i = 0; i < n; ++i) inst.cost(s, i) = row.size() == 1 ? row[0] : row[i];
        }
    }
    for (double v : inst.cost.data())
        if (!std::isfinite(v)) throw InvariantError("cost is not finite");
}

inline void fill_transitions(MdpInstance& inst, const TransitionSpec& spec) {
    const std::size_t m = inst.m, n = inst.n();
    inst.trans.assign(m * n * m, 0.0);
    auto at = [&](std::size_t s, std::size_t i, std::size_t s2) -> double& { return inst.trans[(s * n + i) * m + s2]; };

    if (const auto* tm = std::get_if<TanhMixTransition>(&spec)) {
        if (tm->theta.size() != m) throw InvariantError("transition.theta needs one block per state");
        std::vector<double> logits(m);
        for (std::size_t s = 0; s < m; ++s) {
            if (tm->theta[s].size() != m) throw InvariantError("transition.theta[s] needs one row per next state");
            for (std::size_t i = 0; i < n; ++i) {
                const double t = std::tanh(inst.grid.points[i]);
                for (std::size_t s2 = 0; s2 < m; ++s2) {
                    const auto& th = tm->theta[s][s2];
                    if (th.size() != 3) throw InvariantError("transition.theta entries need 3 coefficients");
                    logits[s2] = th[0] + th[1] * t + th[2] * t * t;
                }
                const double lz = log_sum_exp(logits);
                for (std::size_t s2 = 0; s2 < m; ++s2) at(s, i, s2) = std::exp(logits[s2] - lz);
            }
        }
    } else if (const auto* tl = std::get_if<TwoStateLogisticTransition>(&spec)) {
        if (m != 2) throw InvariantError("two-state-logistic transitions need exactly 2 states");
        for (std::size_t s = 0; s < m; ++s) {
            const double b0 = per_state(tl->b0, s, "transition.b0");
            const double b1 = per_state(tl->b1, s, "transition.b1");
            for (std::size_t i = 0; i < n; ++i) {
                const double p1 = b0 + b1 * std::tanh(inst.grid.points[i]);
                at(s, i, 0) = 1.0 - p1;
                at(s, i, 1) = p1;
            }
        }
    } else {
        const auto& t = std::get<TableTransition>(spec);
        if (!t.by_state_action.empty()) {
            if (t.by_state_action.size() != m) throw InvariantError("transition table needs one block per state");
            for (std::size_t s = 0; s < m; ++s) {
                if (t.by_state_action[s].size() != n) throw InvariantError("transition table needs one row per grid point");
                for (std::size_t i = 0; i < n; ++i) {
                    if (t.by_state_action[s][i].size() != m) throw InvariantError("transition row length must equal state count");
                    for (std::size_t s2 = 0; s2 < m; ++s2) at(s, i, s2) = t.by_state_action[s][i][s2];
                }
            }
        } else {
            if (t.by_state.size() != m) throw InvariantError("transition table needs one row per state");
            for (std::size_t s = 0; s < m; ++s) {
                if (t.by_state[s].size() != m) throw InvariantError("transition row length must equal state count");
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t s2 = 0; s2 < m; ++s2) at(s, i, s2) = t.by_state[s][s2];
            }
        }
    }

    // Row-stochasticity: renormalise small drift, reject anything else.
    for (std::size_t s = 0; s < m; ++s) {
        for (std::size_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (std::size_t s2 = 0; s2 < m; ++s2) {
                const double p = at(s, i, s2);
                if (!(p >= 0.0) || !std::isfinite(p))
                    throw InvariantError("negative or non-finite transition probability at state " + std::to_string(s));
                sum += p;
            }
            if (std::abs(sum - 1.0) > 1e-9)
                throw InvariantError("transition row (state " + std::to_string(s) + ", action index " +
                                     std::to_string(i) + ") sums to " + std::to_string(sum));
            for (std::size_t s2 = 0; s2 < m; ++s2) at(s, i, s2) /= sum;
        }
    }
}

} // namespace detail

inline MdpInstance build_instance(const InstanceSpec& spec) {
    if (spec.states == 0) throw InvariantError("need at least one state");
    if (!(spec.gamma >= 0.0 && spec.gamma < 1.0)) throw InvariantError("gamma must lie in [0, 1)");
    if (!(spec.tau > 0.0) || !std::isfinite(spec.tau)) throw InvariantError("tau must be positive");

    MdpInstance inst;
    inst.m = spec.states;
    inst.gamma = spec.gamma;
    inst.tau = spec.tau;
    inst.grid = ActionGrid::make(spec.grid_points, spec.half_width);
    inst.ref = reference_weights(inst.grid, spec.reference);
    detail::fill_cost(inst, spec.cost);
    detail::fill_transitions(inst, spec.transition);

    if (spec.rho.size() != inst.m) throw InvariantError("rho needs one entry per state");
    double sum = 0.0;
    for (double r : spec.rho) {
        if (!(r >= 0.0) || !std::isfinite(r)) throw InvariantError("rho must be nonnegative");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvariantError("rho must sum to 1, got " + std::to_string(sum));
    inst.rho = spec.rho;
    for (double& r : inst.rho) r /= sum;
    return inst;
}

} // namespace wpo
