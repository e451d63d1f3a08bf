// wpo: command-line driver for the soft-DP solver, the two flow solvers and the verification suite.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <tbb/global_control.h>

#include "wpo/config.hpp"
#include "wpo/flow_grid.hpp"
#include "wpo/instances.hpp"
#include "wpo/io.hpp"
#include "wpo/particles.hpp"
#include "wpo/policy_eval.hpp"
#include "wpo/soft_dp.hpp"
#include "wpo/trace.hpp"
#include "wpo/verify.hpp"

namespace fs = std::filesystem;
using namespace wpo;

namespace {

enum Exit { kOk = 0, kChecksFailed = 1, kUsage = 2, kRuntime = 3 };

struct Globals {
    std::string config;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
};

ScenarioConfig builtin_scenario(const std::string& id) {
    ScenarioConfig cfg;
    if (id == "d1") {
        cfg.instance = d1_spec();
    } else {
        bool found = false;
        for (auto& [name, spec] : seeded_instances())
            if (name == id) {
                cfg.instance = spec;
                found = true;
            }
        if (!found) throw SchemaError("builtin", "unknown built-in instance '" + id + "'");
    }
    cfg.config_hash = detail::fnv1a_hex(to_json(cfg).dump());
    return cfg;
}

std::vector<std::string> builtin_ids() {
    std::vector<std::string> ids{"d1"};
    for (const auto& entry : seeded_instances()) ids.push_back(entry.first);
    return ids;
}

ScenarioConfig load(const Globals& g) {
    if (g.config.empty()) throw SchemaError("--config", "a configuration file is required");
    auto cfg = parse_config(g.config);
    if (g.seed) cfg.run.seed = g.seed;
    return cfg;
}

nlohmann::json provenance_for(const ScenarioConfig& cfg, const std::string& solver) {
    Provenance p;
    p.config_hash = cfg.config_hash;
    p.seed = cfg.run.seed.value_or(0);
    p.solver = solver;
    return provenance_json(p);
}

int cmd_solve(const Globals& g, std::optional<double> tol) {
    const auto cfg = load(g);
    const auto inst = build_instance(cfg.instance);
    const auto sol = solve_optimal(inst, tol.value_or(cfg.run.tol));
    const fs::path dir = g.out;
    ensure_dir(dir);
    write_text(dir / "v_star.csv", state_csv(sol.v_star));
    write_text(dir / "q_star.csv", field_csv(sol.q_star, inst.grid));
    write_text(dir / "pi_star.csv", field_csv(sol.pi_star.density, inst.grid, "density"));
    const nlohmann::json rep = {{"residual", sol.residual},
                                {"iters", sol.iters},
                                {"tol", sol.tol},
                                {"v_star", sol.v_star},
                                {"provenance", provenance_for(cfg, "soft_dp")}};
    write_text(dir / "solve_report.json", rep.dump(2) + "\n");
    std::printf("solved: iters=%zu residual=%.3e\n", sol.iters, sol.residual);
    for (std::size_t s = 0; s < inst.m; ++s) std::printf("  V*(%zu) = %.12f\n", s, sol.v_star[s]);
    return kOk;
}

int cmd_eval(const Globals& g, const std::string& policy_path) {
    const auto cfg = load(g);
    const auto inst = build_instance(cfg.instance);
    std::optional<SoftSolution> sol;
    if (std::holds_alternative<OptimalInit>(cfg.initial_policy)) sol = solve_optimal(inst, cfg.run.tol);
    const auto pi = policy_path.empty() ? initial_policy(cfg.initial_policy, inst, sol ? &*sol : nullptr)
                                        : read_policy_csv(policy_path, inst);
    const auto ev = evaluate_policy(pi, inst);
    const auto occ = occupancy(pi, inst, inst.rho);
    const auto fd = flat_derivative(pi, ev, inst.tau);
    const fs::path dir = g.out;
    ensure_dir(dir);
    write_text(dir / "v.csv", state_csv(ev.v));
    write_text(dir / "q.csv", field_csv(ev.q, inst.grid));
    write_text(dir / "occupancy.csv", state_csv(occ.d, "d"));
    write_text(dir / "flat_derivative.csv", field_csv(fd.g, inst.grid));
    std::printf("V(rho) = %.12f\n", integrate_against(ev.v, inst.rho));
    return kOk;
}

struct RunOverrides {
    std::optional<double> t_end;
    std::optional<double> dt;
    std::optional<std::size_t> record_every;
    std::optional<std::size_t> n_particles;
    std::optional<std::uint64_t> seed;
};

RunParams effective_run(ScenarioConfig cfg, const RunOverrides& o, const std::string& solver) {
    if (o.t_end) cfg.run.t_end = *o.t_end;
    if (o.dt) cfg.run.dt = *o.dt;
    if (o.record_every) cfg.run.record_every = *o.record_every;
    if (o.n_particles) cfg.run.n_particles = *o.n_particles;
    if (o.seed) cfg.run.seed = *o.seed;
    cfg.run.solver = solver;
    validate_run(cfg.run);
    return cfg.run;
}

void write_flow_outputs(const fs::path& dir, const FlowTrace& trace, const VerificationContext& ctx,
                        const RunParams& run) {
    const auto summary = summarise(trace, ctx);
    emit_trace(trace, summary, dir);
    nlohmann::json rep = {{"solver", trace.provenance.solver},
                          {"t_end", run.t_end},
                          {"dt", run.dt},
                          {"record_every", run.record_every},
                          {"records", trace.records.size()},
                          {"steps", trace.steps.empty() ? 0 : trace.steps.size() - 1},
                          {"final_gap", json_number(summary.final_gap)},
                          {"fitted_rate", json_number(summary.fitted_rate)},
                          {"r_squared", json_number(summary.r_squared)},
                          {"predicted_rate", json_number(summary.predicted_rate)},
                          {"envelope_passed", summary.envelope_passed},
                          {"provenance", provenance_json(trace.provenance)}};
    write_text(dir / "flow_report.json", rep.dump(2) + "\n");
    std::printf("final gap %.6e, fitted rate %.6g (R^2 %.4f), certified rate %.6g, envelope %s\n", summary.final_gap,
                summary.fitted_rate, summary.r_squared, summary.predicted_rate,
                summary.envelope_passed ? "holds" : "VIOLATED");
}

int cmd_flow(const Globals& g, const RunOverrides& o) {
    const auto cfg = load(g);
    const auto run = effective_run(cfg, o, "grid");
    const auto inst = build_instance(cfg.instance);
    auto ctx = VerificationContext::make(inst, "config", run.tol);
    const auto pi0 = initial_policy(cfg.initial_policy, inst, &ctx.solution);
    auto res = run_flow(inst, pi0, ctx.solution, run.t_end, run.dt, run.record_every);
    res.trace.provenance.config_hash = cfg.config_hash;
    res.trace.provenance.seed = run.seed.value_or(0);
    write_flow_outputs(g.out, res.trace, ctx, run);
    return kOk;
}

int cmd_particles(const Globals& g, const RunOverrides& o) {
    const auto cfg = load(g);
    const auto run = effective_run(cfg, o, "particles");
    const auto inst = build_instance(cfg.instance);
    auto ctx = VerificationContext::make(inst, "config", run.tol);
    const auto pi0 = initial_policy(cfg.initial_policy, inst, &ctx.solution);
    const auto ens = sample_ensemble(pi0, inst.grid, run.n_particles, *run.seed);
    auto res = run_particle_flow(inst, ens, ctx.solution, run.t_end, run.dt, run.record_every);
    res.trace.provenance.config_hash = cfg.config_hash;
    write_flow_outputs(g.out, res.trace, ctx, run);
    return kOk;
}

int cmd_verify(const Globals& g, const std::vector<std::string>& builtins, SuiteOptions opt) {
    std::vector<std::pair<std::string, ScenarioConfig>> scenarios;
    if (!g.config.empty()) scenarios.emplace_back(fs::path(g.config).stem().string(), load(g));
    for (const auto& b : builtins) {
        if (b == "all") {
            for (const auto& id : builtin_ids()) scenarios.emplace_back(id, builtin_scenario(id));
        } else {
            scenarios.emplace_back(b, builtin_scenario(b));
        }
    }
    if (scenarios.empty()) throw SchemaError("--config", "give --config or --builtin");
    if (g.seed) opt.seed = *g.seed;

    nlohmann::json doc = {{"code_version", kCodeVersion}, {"seed", opt.seed}, {"trials", opt.trials}};
    nlohmann::json reports = nlohmann::json::array();
    bool all_passed = true;
    for (const auto& [id, cfg] : scenarios) {
        const auto inst = build_instance(cfg.instance);
        std::optional<SoftSolution> sol;
        if (std::holds_alternative<OptimalInit>(cfg.initial_policy)) sol = solve_optimal(inst, cfg.run.tol);
        const auto pi0 = initial_policy(cfg.initial_policy, inst, sol ? &*sol : nullptr);
        for (const auto& rep : run_verification_suite(inst, id, pi0, opt)) {
            std::printf("%s  %-24s %-18s max_residual=%.3e tol=%.3e\n", rep.passed ? "PASS" : "FAIL",
                        rep.check_name.c_str(), id.c_str(), rep.max_residual, rep.tolerance);
            all_passed = all_passed && rep.passed;
            auto j = to_json(rep);
            j["config_hash"] = cfg.config_hash;
            reports.push_back(std::move(j));
        }
    }
    doc["passed"] = all_passed;
    doc["reports"] = std::move(reports);

    fs::path target = g.out;
    if (target.extension() != ".json") {
        ensure_dir(target);
        target /= "report.json";
    } else if (target.has_parent_path()) {
        ensure_dir(target.parent_path());
    }
    write_text(target, doc.dump(2) + "\n");
    std::printf("%s: report written to %s\n", all_passed ? "all checks passed" : "SOME CHECKS FAILED",
                target.string().c_str());
    return all_passed ? kOk : kChecksFailed;
}

int cmd_report(const Globals& g, const std::string& summary_path, bool gnuplot) {
    const fs::path dir = g.out;
    const fs::path summary_file = summary_path.empty() ? dir / "summary.json" : fs::path(summary_path);
    const auto j = nlohmann::json::parse(read_file(summary_file), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw IoError(summary_file.string() + " is not a JSON object");
    std::printf("%-18s %s\n", "quantity", "value");
    std::printf("%-18s %s\n", "------------------", "----------------------");
    for (const auto& [key, value] : j.items()) {
        if (value.is_number())
            std::printf("%-18s %.10g\n", key.c_str(), value.get<double>());
        else
            std::printf("%-18s %s\n", key.c_str(), value.dump().c_str());
    }
    if (gnuplot) {
        const fs::path trace_dir = summary_file.parent_path().empty() ? fs::path(".") : summary_file.parent_path();
        const auto recs = read_trace_csv(trace_dir / "trace.csv");
        std::string dat = "# t gap kl_opt_total kl_prox_total fisher_prox_total -dissipation_rhs\n";
        for (const auto& r : recs) {
            dat += format_double(r.t) + " " + format_double(r.gap) + " " + format_double(r.kl_opt_total) + " " +
                   format_double(r.kl_prox_total) + " " + format_double(r.fisher_prox_total) + " " +
                   format_double(-r.dissipation_rhs) + "\n";
        }
        write_text(trace_dir / "trace.dat", dat);
        write_text(trace_dir / "trace.gp",
                   "set logscale y\n"
                   "set xlabel 't'\n"
                   "set terminal pngcairo size 900,600\n"
                   "set output 'trace.png'\n"
                   "plot 'trace.dat' using 1:2 with lines title 'gap', \\\n"
                   "     'trace.dat' using 1:4 with lines title 'kl_prox_total', \\\n"
                   "     'trace.dat' using 1:6 with lines title '-dV/dt'\n");
        std::printf("wrote %s and %s\n", (trace_dir / "trace.dat").string().c_str(),
                    (trace_dir / "trace.gp").string().c_str());
    }
    return kOk;
}

int cmd_config(const std::string& builtin) {
    std::cout << to_json(builtin_scenario(builtin)).dump(2) << "\n";
    return kOk;
}

std::unique_ptr<tbb::global_control> thread_cap() {
    const char* env = std::getenv("WPO_THREADS");
    if (!env || !*env) return nullptr;
    const long n = std::strtol(env, nullptr, 10);
    if (n < 1) return nullptr;
    return std::make_unique<tbb::global_control>(tbb::global_control::max_allowed_parallelism,
                                                 static_cast<std::size_t>(n));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Wasserstein policy optimisation lab: soft DP, gradient flows and certification checks"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--config", g.config, "Scenario configuration (JSON)");
    app.add_option("--out", g.out, "Output directory (verify: directory or .json file)");
    app.add_option("--seed", g.seed, "RNG seed, overrides the configuration");

    std::optional<double> tol;
    auto* solve = app.add_subcommand("solve", "Soft dynamic programming for V*, Q* and pi*");
    solve->add_option("--tol", tol, "Certified sup-norm error of V*");

    std::string policy_path;
    auto* eval = app.add_subcommand("eval", "Evaluate a policy: V, Q, occupancy and flat derivative");
    eval->add_option("--policy", policy_path, "state,action,density CSV (default: the configured initial policy)");

    RunOverrides flow_o;
    auto* flow = app.add_subcommand("flow", "Deterministic grid flow");
    flow->add_option("--t-end", flow_o.t_end, "Final time");
    flow->add_option("--dt", flow_o.dt, "Time step");
    flow->add_option("--record-every", flow_o.record_every, "Steps between diagnostics records");

    RunOverrides part_o;
    auto* particles = app.add_subcommand("particles", "Particle (Langevin) flow");
    particles->add_option("--t-end", part_o.t_end, "Final time");
    particles->add_option("--dt", part_o.dt, "Time step");
    particles->add_option("--record-every", part_o.record_every, "Steps between diagnostics records");
    particles->add_option("--n", part_o.n_particles, "Particles per state");

    SuiteOptions suite;
    std::vector<std::string> builtins;
    auto* verify = app.add_subcommand("verify", "Run every certification check; exit 0 iff all pass");
    verify->add_option("--trials", suite.trials, "Random trials per check")->capture_default_str();
    verify->add_option("--t-end", suite.t_end, "Flow length for the flow checks")->capture_default_str();
    verify->add_option("--dt", suite.dt, "Flow time step")->capture_default_str();
    verify->add_option("--builtin", builtins, "Built-in instance id (d1, random-1000-m2, ..., or all)");

    std::string summary_path;
    bool gnuplot = false;
    auto* report = app.add_subcommand("report", "Print summary.json as a table");
    report->add_option("--summary", summary_path, "summary.json path (default: <out>/summary.json)");
    report->add_flag("--gnuplot", gnuplot, "Also write trace.dat and trace.gp next to the summary");

    std::string builtin_cfg;
    auto* config = app.add_subcommand("config", "Print the configuration of a built-in instance");
    config->add_option("--builtin", builtin_cfg, "Instance id")->required();

    CLI11_PARSE(app, argc, argv);
    const auto cap = thread_cap();

    try {
        if (*solve) return cmd_solve(g, tol);
        if (*eval) return cmd_eval(g, policy_path);
        if (*flow) return cmd_flow(g, flow_o);
        if (*particles) {
            part_o.seed = g.seed;
            return cmd_particles(g, part_o);
        }
        if (*verify) return cmd_verify(g, builtins, suite);
        if (*report) return cmd_report(g, summary_path, gnuplot);
        if (*config) return cmd_config(builtin_cfg);
    } catch (const SchemaError& e) {
        std::fprintf(stderr, "wpo: %s\n", e.what());
        return kUsage;
    } catch (const EnvelopeViolation& e) {
        std::fprintf(stderr, "wpo: %s\n", e.what());
        return kChecksFailed;
    } catch (const FlowStepError& e) {
        if (e.time)
            std::fprintf(stderr, "wpo: %s (t = %.6g)\n", e.what(), *e.time);
        else
            std::fprintf(stderr, "wpo: %s\n", e.what());
        return kRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "wpo: %s\n", e.what());
        return kRuntime;
    }
    return kUsage;
}
