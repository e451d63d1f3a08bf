#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wpo/errors.hpp"

namespace wpo {

inline constexpr const char* kCodeVersion = "wpo 0.1.0";

/// One diagnostics sample along a flow.
///
/// Totals: kl_opt_total and fisher_prox_total are weighted by the current
/// occupancy d^{pi_t}_rho, kl_prox_total by the optimal occupancy d^{pi*}_rho.
/// With those weights gap = tau/(1-gamma) kl_opt_total and
/// dissipation_rhs = -tau^2/(1-gamma) fisher_prox_total.
struct DiagnosticsRecord {
    double t = 0.0;
    double v_rho = 0.0;
    double gap = 0.0;
    double dissipation_rhs = 0.0;
    double kl_opt_total = 0.0;
    double kl_prox_total = 0.0;
    double fisher_prox_total = 0.0;
    double mass_error = 0.0;
    std::vector<double> v;           // V^{pi_t}(s)
    std::vector<double> kl_opt;      // KL(pi_t | pi*)(s)
    std::vector<double> kl_prox;     // KL(pi_t | Phi[pi_t])(s)
    std::vector<double> fisher_prox; // int |grad ln(dpi_t / dPhi[pi_t])|^2 dpi_t
    std::vector<double> q_osc;       // max_a Q - min_a Q per state
};

/// v_rho after every accepted step (not only at record times).
struct StepSample {
    double t = 0.0;
    double v_rho = 0.0;
    double mass_error = 0.0;
};

struct Provenance {
    std::string config_hash = "none";
    std::string code_version = kCodeVersion;
    std::uint64_t seed = 0;
    std::string solver = "grid";
};

struct FlowTrace {
    std::vector<DiagnosticsRecord> records;
    std::vector<StepSample> steps;
    double dt = 0.0;
    Provenance provenance;
};

struct RateFit {
    double rate = 0.0;
    double r_squared = 0.0;
    std::size_t points = 0;
};

/// Least-squares slope of ln(gap) against t over [window * t_end, t_end].
inline RateFit fit_rate(const FlowTrace& trace, double window = 0.5) {
    if (trace.records.empty()) throw InsufficientData("fit_rate: empty trace");
    const double t_end = trace.records.back().t;
    const double t_start = window * t_end;
    std::vector<double> xs, ys;
    for (const auto& r : trace.records) {
        if (r.t + 1e-12 * std::max(1.0, t_end) < t_start || !(r.gap > 1e-12)) continue;
        xs.push_back(r.t);
        ys.push_back(std::log(r.gap));
    }
    if (xs.size() < 10)
        throw InsufficientData("fit_rate: need at least 10 records with gap > 1e-12 in the window, got " +
                               std::to_string(xs.size()));
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0) throw InsufficientData("fit_rate: all window records share one time");
    const double slope = sxy / sxx;
    RateFit fit;
    fit.rate = slope == 0.0 ? 0.0 : -slope;
    fit.points = xs.size();
    if (syy == 0.0) {
        fit.r_squared = 1.0;
    } else {
        double sse = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double e = ys[i] - (my + slope * (xs[i] - mx));
            sse += e * e;
        }
        fit.r_squared = 1.0 - sse / syy;
    }
    return fit;
}

/// Scalars written next to a trace.
struct TraceSummary {
    double final_gap = std::numeric_limits<double>::quiet_NaN();
    double fitted_rate = std::numeric_limits<double>::quiet_NaN();
    double r_squared = std::numeric_limits<double>::quiet_NaN();
    double kappa_bar = std::numeric_limits<double>::quiet_NaN();
    double kappa_under = std::numeric_limits<double>::quiet_NaN();
    double alpha = std::numeric_limits<double>::quiet_NaN();
    double predicted_rate = std::numeric_limits<double>::quiet_NaN();
    bool envelope_passed = false;
};

inline constexpr const char* kTraceHeader =
    "t,v_rho,gap,dissipation_rhs,kl_opt_total,kl_prox_total,fisher_prox_total,mass_error";

/// 17 significant digits: exact decimal round trip of binary64.
inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// JSON value for a double; NaN and infinities become null.
inline nlohmann::json json_number(double x) {
    if (!std::isfinite(x)) return nullptr;
    return x;
}

inline std::string trace_csv(const FlowTrace& trace) {
    std::string out = kTraceHeader;
    out += '\n';
    for (const auto& r : trace.records) {
        const double row[] = {r.t, r.v_rho, r.gap, r.dissipation_rhs, r.kl_opt_total,
                              r.kl_prox_total, r.fisher_prox_total, r.mass_error};
        for (std::size_t k = 0; k < std::size(row); ++k) {
            if (k) out += ',';
            out += format_double(row[k]);
        }
        out += '\n';
    }
    return out;
}

inline nlohmann::json provenance_json(const Provenance& p) {
    return {{"config_hash", p.config_hash}, {"code_version", p.code_version}, {"seed", p.seed}, {"solver", p.solver}};
}

inline nlohmann::json per_state_json(const FlowTrace& trace) {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : trace.records) {
        recs.push_back({{"t", r.t},
                        {"v", r.v},
                        {"kl_opt", r.kl_opt},
                        {"kl_prox", r.kl_prox},
                        {"fisher_prox", r.fisher_prox},
                        {"q_osc", r.q_osc}});
    }
    return {{"dt", trace.dt}, {"provenance", provenance_json(trace.provenance)}, {"records", recs}};
}

inline nlohmann::json summary_json(const TraceSummary& s) {
    return {{"final_gap", json_number(s.final_gap)},
            {"fitted_rate", json_number(s.fitted_rate)},
            {"r_squared", json_number(s.r_squared)},
            {"kappa_bar", json_number(s.kappa_bar)},
            {"kappa_under", json_number(s.kappa_under)},
            {"alpha", json_number(s.alpha)},
            {"predicted_rate", json_number(s.predicted_rate)},
            {"envelope_passed", s.envelope_passed}};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw IoError("failed writing " + path.string());
}

inline void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

/// Writes trace.csv, trace_per_state.json and summary.json into dir.
inline void emit_trace(const FlowTrace& trace, const TraceSummary& summary, const std::filesystem::path& dir) {
    ensure_dir(dir);
    write_text(dir / "trace.csv", trace_csv(trace));
    write_text(dir / "trace_per_state.json", per_state_json(trace).dump(2) + "\n");
    write_text(dir / "summary.json", summary_json(summary).dump(2) + "\n");
}

/// Reads the scalar columns of a trace.csv back.
inline std::vector<DiagnosticsRecord> read_trace_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != kTraceHeader) throw IoError("unexpected trace.csv header in " + path.string());
    std::vector<DiagnosticsRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ss, cell, ',')) vals.push_back(std::strtod(cell.c_str(), nullptr));
        if (vals.size() != 8) throw IoError("malformed trace.csv row: " + line);
        DiagnosticsRecord r;
        r.t = vals[0];
        r.v_rho = vals[1];
        r.gap = vals[2];
        r.dissipation_rhs = vals[3];
        r.kl_opt_total = vals[4];
        r.kl_prox_total = vals[5];
        r.fisher_prox_total = vals[6];
        r.mass_error = vals[7];
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace wpo
