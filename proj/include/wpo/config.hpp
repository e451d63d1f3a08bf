#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "wpo/errors.hpp"
#include "wpo/instances.hpp"
#include "wpo/mdp.hpp"

namespace wpo {

using nlohmann::json;

struct ReferenceInit {};
struct OptimalInit {};
struct TanhGibbsInit {
    double amplitude = 0.3;
};
struct GaussianInit {
    std::vector<double> mean{0.0};
    std::vector<double> std{1.0};
};
using InitialPolicySpec = std::variant<ReferenceInit, OptimalInit, TanhGibbsInit, GaussianInit>;

struct RunParams {
    std::string solver = "grid";
    double t_end = 10.0;
    double dt = 1e-3;
    std::size_t record_every = 100;
    std::size_t n_particles = 50000;
    std::optional<std::uint64_t> seed;
    double tol = 1e-10;
};

struct ScenarioConfig {
    InstanceSpec instance;
    InitialPolicySpec initial_policy = ReferenceInit{};
    RunParams run;
    std::string config_hash;
};

namespace detail {

inline const json& require(const json& obj, const std::string& key, const std::string& path) {
    if (!obj.is_object()) throw SchemaError(path, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw SchemaError(path.empty() ? key : path + "." + key, "missing required field");
    return *it;
}

inline std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

inline double number(const json& v, const std::string& path) {
    if (!v.is_number()) throw SchemaError(path, "expected a number");
    return v.get<double>();
}

inline std::size_t count(const json& v, const std::string& path) {
    if (!v.is_number_integer() || v.get<long long>() < 0) throw SchemaError(path, "expected a nonnegative integer");
    return v.get<std::size_t>();
}

inline std::string string(const json& v, const std::string& path) {
    if (!v.is_string()) throw SchemaError(path, "expected a string");
    return v.get<std::string>();
}

/// Number or array of numbers.
inline std::vector<double> numbers(const json& v, const std::string& path) {
    if (v.is_number()) return {v.get<double>()};
    if (!v.is_array()) throw SchemaError(path, "expected a number or an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(number(v[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

inline std::vector<std::vector<double>> matrix(const json& v, const std::string& path) {
    if (!v.is_array()) throw SchemaError(path, "expected an array of arrays");
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto p = path + "[" + std::to_string(i) + "]";
        if (!v[i].is_array()) throw SchemaError(p, "expected an array");
        out.push_back(numbers(v[i], p));
    }
    return out;
}

inline const json& params_of(const json& block, const std::string& path) {
    static const json empty = json::object();
    auto it = block.find("params");
    if (it == block.end()) return empty;
    if (!it->is_object()) throw SchemaError(join(path, "params"), "expected an object");
    return *it;
}

inline PotentialFamily parse_reference(const json& j, const std::string& path) {
    const auto type = string(require(j, "type", path), join(path, "type"));
    const auto& p = params_of(j, path);
    PotentialFamily f;
    if (type == "gaussian") {
        f.kind = PotentialFamily::Kind::gaussian;
        if (p.contains("sigma")) f.sigma = number(p["sigma"], join(path, "params.sigma"));
        if (!(f.sigma > 0.0)) throw SchemaError(join(path, "params.sigma"), "must be positive");
    } else if (type == "flat") {
        f.kind = PotentialFamily::Kind::flat;
    } else {
        throw SchemaError(join(path, "type"), "unknown reference type '" + type + "' (gaussian|flat)");
    }
    return f;
}

inline CostSpec parse_cost(const json& j, const std::string& path) {
    const auto type = string(require(j, "type", path), join(path, "type"));
    const auto pp = join(path, "params");
    const auto& p = params_of(j, path);
    if (type == "gauss-well") {
        GaussWellCost c;
        c.depth = numbers(require(p, "depth", pp), join(pp, "depth"));
        c.centre = numbers(require(p, "centre", pp), join(pp, "centre"));
        c.width = numbers(require(p, "width", pp), join(pp, "width"));
        if (p.contains("offset")) c.offset = numbers(p["offset"], join(pp, "offset"));
        return c;
    }
    if (type == "table") return TableCost{matrix(require(p, "values", pp), join(pp, "values"))};
    throw SchemaError(join(path, "type"), "unknown cost type '" + type + "' (gauss-well|table)");
}

inline TransitionSpec parse_transition(const json& j, const std::string& path) {
    const auto type = string(require(j, "type", path), join(path, "type"));
    const auto pp = join(path, "params");
    const auto& p = params_of(j, path);
    if (type == "tanh-mix") {
        const auto& th = require(p, "theta", pp);
        TanhMixTransition t;
        if (!th.is_array()) throw SchemaError(join(pp, "theta"), "expected [s][s'][3] array");
        for (std::size_t s = 0; s < th.size(); ++s)
            t.theta.push_back(matrix(th[s], join(pp, "theta[" + std::to_string(s) + "]")));
        return t;
    }
    if (type == "two-state-logistic") {
        return TwoStateLogisticTransition{numbers(require(p, "b0", pp), join(pp, "b0")),
                                          numbers(require(p, "b1", pp), join(pp, "b1"))};
    }
    if (type == "table") {
        const auto& v = require(p, "values", pp);
        TableTransition t;
        if (v.is_array() && !v.empty() && v[0].is_array() && !v[0].empty() && v[0][0].is_array()) {
            for (std::size_t s = 0; s < v.size(); ++s)
                t.by_state_action.push_back(matrix(v[s], join(pp, "values[" + std::to_string(s) + "]")));
        } else {
            t.by_state = matrix(v, join(pp, "values"));
        }
        return t;
    }
    throw SchemaError(join(path, "type"), "unknown transition type '" + type + "' (tanh-mix|two-state-logistic|table)");
}

inline InitialPolicySpec parse_initial(const json& j, const std::string& path) {
    const auto type = string(require(j, "type", path), join(path, "type"));
    const auto pp = join(path, "params");
    const auto& p = params_of(j, path);
    if (type == "reference") return ReferenceInit{};
    if (type == "optimal") return OptimalInit{};
    if (type == "tanh-gibbs") {
        TanhGibbsInit t;
        if (p.contains("amplitude")) t.amplitude = number(p["amplitude"], join(pp, "amplitude"));
        return t;
    }
    if (type == "gaussian") {
        GaussianInit g;
        g.mean = numbers(require(p, "mean", pp), join(pp, "mean"));
        g.std = numbers(require(p, "std", pp), join(pp, "std"));
        for (double s : g.std)
            if (!(s > 0.0)) throw SchemaError(join(pp, "std"), "must be positive");
        return g;
    }
    throw SchemaError(join(path, "type"), "unknown initial policy '" + type + "' (reference|optimal|tanh-gibbs|gaussian)");
}

inline RunParams parse_run(const json& j) {
    RunParams r;
    if (!j.is_object()) throw SchemaError("run", "expected an object");
    if (j.contains("solver")) r.solver = string(j["solver"], "run.solver");
    if (j.contains("t_end")) r.t_end = number(j["t_end"], "run.t_end");
    if (j.contains("dt")) r.dt = number(j["dt"], "run.dt");
    if (j.contains("record_every")) r.record_every = count(j["record_every"], "run.record_every");
    if (j.contains("n_particles")) r.n_particles = count(j["n_particles"], "run.n_particles");
    if (j.contains("seed")) r.seed = count(j["seed"], "run.seed");
    if (j.contains("tol")) r.tol = number(j["tol"], "run.tol");
    return r;
}

inline std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace detail

/// Schema checks on run parameters; throws SchemaError naming the field.
inline void validate_run(const RunParams& r) {
    if (r.solver != "grid" && r.solver != "particles") throw SchemaError("run.solver", "expected 'grid' or 'particles'");
    if (!(r.dt > 0.0) || !std::isfinite(r.dt)) throw SchemaError("run.dt", "must be a positive number");
    if (!(r.t_end > 0.0) || !std::isfinite(r.t_end)) throw SchemaError("run.t_end", "must be a positive number");
    if (r.record_every == 0) throw SchemaError("run.record_every", "must be at least 1");
    if (r.dt * static_cast<double>(r.record_every) > r.t_end * (1.0 + 1e-12))
        throw SchemaError("run.record_every", "dt * record_every must not exceed t_end");
    if (!(r.tol > 0.0)) throw SchemaError("run.tol", "must be positive");
    if (r.solver == "particles") {
        if (!r.seed) throw SchemaError("run.seed", "required when solver = particles");
        if (r.n_particles < 1000) throw SchemaError("run.n_particles", "need at least 1000 particles");
    }
}

inline InstanceSpec instance_spec_from_json(const json& j) {
    using namespace detail;
    if (!j.is_object()) throw SchemaError("", "configuration must be a JSON object");
    InstanceSpec spec;
    spec.states = count(require(j, "states", ""), "states");
    spec.gamma = number(require(j, "gamma", ""), "gamma");
    spec.tau = number(require(j, "tau", ""), "tau");
    const auto& g = require(j, "grid", "");
    spec.grid_points = count(require(g, "n", "grid"), "grid.n");
    spec.half_width = number(require(g, "L", "grid"), "grid.L");
    spec.reference = parse_reference(require(j, "reference", ""), "reference");
    spec.cost = parse_cost(require(j, "cost", ""), "cost");
    spec.transition = parse_transition(require(j, "transition", ""), "transition");
    spec.rho = numbers(require(j, "rho", ""), "rho");
    return spec;
}

inline ScenarioConfig scenario_from_json(const json& j) {
    ScenarioConfig cfg;
    cfg.instance = instance_spec_from_json(j);
    if (j.contains("initial_policy")) cfg.initial_policy = detail::parse_initial(j["initial_policy"], "initial_policy");
    if (j.contains("run")) cfg.run = detail::parse_run(j["run"]);
    validate_run(cfg.run);
    cfg.config_hash = detail::fnv1a_hex(j.dump());
    return cfg;
}

inline ScenarioConfig parse_config_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError("", std::string("invalid JSON: ") + e.what());
    }
    return scenario_from_json(j);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline ScenarioConfig parse_config(const std::filesystem::path& path) { return parse_config_text(read_file(path)); }

/// Schema-validates and builds in one go.
inline MdpInstance build_instance(const json& j) { return build_instance(instance_spec_from_json(j)); }

// Serialisation --------------------------------------------------------------

inline json to_json(const InstanceSpec& spec) {
    json j;
    j["states"] = spec.states;
    j["gamma"] = spec.gamma;
    j["tau"] = spec.tau;
    j["grid"] = {{"n", spec.grid_points}, {"L", spec.half_width}};
    if (spec.reference.kind == PotentialFamily::Kind::gaussian)
        j["reference"] = {{"type", "gaussian"}, {"params", {{"sigma", spec.reference.sigma}}}};
    else
        j["reference"] = {{"type", "flat"}, {"params", json::object()}};

    if (const auto* gw = std::get_if<GaussWellCost>(&spec.cost)) {
        json p = {{"depth", gw->depth}, {"centre", gw->centre}, {"width", gw->width}};
        if (!gw->offset.empty()) p["offset"] = gw->offset;
        j["cost"] = {{"type", "gauss-well"}, {"params", p}};
    } else {
        j["cost"] = {{"type", "table"}, {"params", {{"values", std::get<TableCost>(spec.cost).values}}}};
    }

    if (const auto* tm = std::get_if<TanhMixTransition>(&spec.transition)) {
        j["transition"] = {{"type", "tanh-mix"}, {"params", {{"theta", tm->theta}}}};
    } else if (const auto* tl = std::get_if<TwoStateLogisticTransition>(&spec.transition)) {
        j["transition"] = {{"type", "two-state-logistic"}, {"params", {{"b0", tl->b0}, {"b1", tl->b1}}}};
    } else {
        const auto& t = std::get<TableTransition>(spec.transition);
        j["transition"] = {{"type", "table"},
                           {"params", {{"values", t.by_state_action.empty() ? json(t.by_state) : json(t.by_state_action)}}}};
    }
    j["rho"] = spec.rho;
    return j;
}

inline json to_json(const ScenarioConfig& cfg) {
    json j = to_json(cfg.instance);
    std::visit(
        [&](const auto& init) {
            using T = std::decay_t<decltype(init)>;
            if constexpr (std::is_same_v<T, ReferenceInit>)
                j["initial_policy"] = {{"type", "reference"}};
            else if constexpr (std::is_same_v<T, OptimalInit>)
                j["initial_policy"] = {{"type", "optimal"}};
            else if constexpr (std::is_same_v<T, TanhGibbsInit>)
                j["initial_policy"] = {{"type", "tanh-gibbs"}, {"params", {{"amplitude", init.amplitude}}}};
            else
                j["initial_policy"] = {{"type", "gaussian"}, {"params", {{"mean", init.mean}, {"std", init.std}}}};
        },
        cfg.initial_policy);
    json run = {{"solver", cfg.run.solver},           {"t_end", cfg.run.t_end},
                {"dt", cfg.run.dt},                   {"record_every", cfg.run.record_every},
                {"n_particles", cfg.run.n_particles}, {"tol", cfg.run.tol}};
    if (cfg.run.seed) run["seed"] = *cfg.run.seed;
    j["run"] = run;
    return j;
}

} // namespace wpo
