#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "wpo/config.hpp"
#include "wpo/errors.hpp"
#include "wpo/grid.hpp"
#include "wpo/instances.hpp"
#include "wpo/mdp.hpp"
#include "wpo/soft_dp.hpp"
#include "wpo/trace.hpp"

namespace wpo {

/// state,<column> rows.
inline std::string state_csv(std::span<const double> v, const std::string& column = "value") {
    std::string out = "state," + column + "\n";
    for (std::size_t s = 0; s < v.size(); ++s) out += std::to_string(s) + "," + format_double(v[s]) + "\n";
    return out;
}

/// state,action,<column> rows; action is the grid point a_i.
inline std::string field_csv(const StateActionField& f, const ActionGrid& grid, const std::string& column = "value") {
    std::string out = "state,action," + column + "\n";
    for (std::size_t s = 0; s < f.states(); ++s)
        for (std::size_t i = 0; i < f.actions(); ++i)
            out += std::to_string(s) + "," + format_double(grid.points[i]) + "," + format_double(f(s, i)) + "\n";
    return out;
}

/// Reads a state,action,density CSV written by field_csv. Rows may come in any order
/// but must cover every (state, grid point); the result is renormalised on the grid.
inline GridPolicy read_policy_csv(const std::filesystem::path& path, const MdpInstance& inst) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw IoError(path.string() + " is empty");
    GridPolicy pi{StateActionField(inst.m, inst.n(), -1.0)};
    std::size_t row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string a, b, c;
        if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c, ','))
            throw IoError(path.string() + ":" + std::to_string(row) + ": expected state,action,density");
        const auto s = std::strtoul(a.c_str(), nullptr, 10);
        const double x = std::strtod(b.c_str(), nullptr);
        const auto i = static_cast<long>(std::llround((x + inst.grid.half_width) / inst.grid.h));
        if (s >= inst.m || i < 0 || static_cast<std::size_t>(i) >= inst.n() ||
            std::abs(inst.grid.points[static_cast<std::size_t>(i)] - x) > 1e-6 * inst.grid.h)
            throw IoError(path.string() + ":" + std::to_string(row) + ": (state, action) not on the instance grid");
        pi.density(s, static_cast<std::size_t>(i)) = std::strtod(c.c_str(), nullptr);
    }
    for (double v : pi.density.data())
        if (v < 0.0) throw IoError(path.string() + ": missing or negative density values");
    pi.normalise(inst.grid);
    return pi;
}

/// Initial policy of a scenario. The optimal choice needs the soft-DP solution.
inline GridPolicy initial_policy(const InitialPolicySpec& spec, const MdpInstance& inst, const SoftSolution* sol) {
    if (std::holds_alternative<ReferenceInit>(spec)) return reference_policy(inst.m, inst.ref);
    if (std::holds_alternative<OptimalInit>(spec)) {
        if (!sol) throw DomainError("initial policy 'optimal' needs the soft-DP solution");
        return sol->pi_star;
    }
    if (const auto* t = std::get_if<TanhGibbsInit>(&spec)) return tanh_gibbs_policy(inst, t->amplitude);
    const auto& g = std::get<GaussianInit>(spec);
    return gaussian_policy(inst, g.mean, g.std);
}

} // namespace wpo
