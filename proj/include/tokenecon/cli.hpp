#pragma once
// Command implementations behind tools/tokenecon. Each command returns a process exit code:
// 0 success, 1 certificate or assumption failure, 2 input/config/I-O error.

#include <cstdlib>
#include <filesystem>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tokenecon/design.hpp"
#include "tokenecon/io.hpp"
#include "tokenecon/meanfield.hpp"
#include "tokenecon/population.hpp"

namespace tokenecon::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2 };

inline constexpr const char* kOutputRootEnv = "TOKENECON_OUTPUT_ROOT";

struct RunConfig {
    std::filesystem::path scenario;
    std::filesystem::path out;  // empty: <output root>/<scenario name>
    std::filesystem::path tolls;  // empty: <out>/tolls.csv
    std::optional<double> horizon;  // units of 1/Rr
    std::optional<std::size_t> samples;
    std::optional<std::size_t> population;
    std::vector<std::uint64_t> seeds;
    std::vector<std::size_t> sweep;
    std::string mode = "meanfield";
    bool baseline_zero_tolls = false;
    bool with_baseline = true;
    bool allow_heavy = false;
};

inline std::filesystem::path output_root() {
    const char* env = std::getenv(kOutputRootEnv);
    return env && *env ? std::filesystem::path(env) : std::filesystem::path("tokenecon-out");
}

inline std::filesystem::path output_dir(const RunConfig& rc, const ScenarioConfig& cfg) {
    if (rc.out.empty()) return output_root() / cfg.scenario.name;
    return rc.out.is_absolute() ? rc.out : output_root() / rc.out;
}

struct Context {
    ScenarioConfig cfg;
    std::filesystem::path out;
    double horizon = 0.0;  // absolute time
    double dt = 0.0;
};

inline Context prepare(const RunConfig& rc, std::ostream& log) {
    Context ctx;
    if (rc.scenario.empty()) throw ConfigError("no scenario file given");
    ctx.cfg = load_scenario(rc.scenario);
    if (ctx.cfg.heavy && !rc.allow_heavy)
        throw ConfigError("scenario '" + ctx.cfg.scenario.name + "' is flagged heavy; pass --heavy to run it");
    if (rc.horizon) ctx.cfg.solver.horizon = *rc.horizon;
    if (rc.samples) ctx.cfg.solver.samples = *rc.samples;
    if (rc.population) ctx.cfg.population.size = *rc.population;
    if (!rc.seeds.empty()) ctx.cfg.population.seeds = rc.seeds;
    if (!rc.sweep.empty()) ctx.cfg.population.sweep = rc.sweep;
    if (!(ctx.cfg.solver.horizon > 0.0) || ctx.cfg.solver.samples < 1)
        throw ConfigError("horizon and sample count must be positive");
    ctx.out = output_dir(rc, ctx.cfg);
    ctx.horizon = ctx.cfg.solver.horizon / ctx.cfg.scenario.rates.revision;
    ctx.dt = ctx.horizon / static_cast<double>(ctx.cfg.solver.samples);
    for (const auto& w : ctx.cfg.warnings) log << "warning: " << w << '\n';
    return ctx;
}

// Assumption checks as the validate command prints them; returns true when all hold.
inline bool report_assumptions(const Scenario& s, std::ostream& log) {
    const auto diags = validate_scenario(s);
    const double ratio = s.rates.noise / s.rates.action;
    log << "noise bound (Rno < Rd/4): " << (s.rates.noise < s.rates.action / 4.0 ? "ok" : "violated")
        << " (Rno/Rd = " << ratio << ")\n";
    log << "informal separation Rno << Rd: " << (ratio <= 0.1 ? "ok" : "weak") << " (Rno/Rd = " << ratio
        << ", flagged above 0.1)\n";
    log << "revision ratio Rr/(Rd+Rno) = " << s.rates.revision / s.rates.jump() << " (bound "
        << s.max_revision_ratio << ")\n";
    for (const auto& d : diags) log << d.assumption << " violated: " << d.message << '\n';
    return diags.empty();
}

// ---- metrics -------------------------------------------------------------------------------

struct Metrics {
    double j_eff = 0.0;
    double j_fair = 0.0;
    double j = 0.0;
    std::vector<double> dispersion;  // per class
    double eps_final = 0.0;
    std::optional<double> first_entry;
    FlowVector sigma_final;
    std::vector<double> w_bar_final;
};

// Long-run averages over the samples at or after burn_in_time.
inline Metrics reduce_rows(const Scenario& s, const ObjectiveSpec& obj, const std::vector<TrajectoryRow>& rows,
                           double burn_in_time, double eps_target) {
    Metrics mt;
    std::vector<double> wsum(s.class_count(), 0.0);
    std::size_t n = 0;
    for (const auto& r : rows) {
        if (!mt.first_entry && r.eps <= eps_target) mt.first_entry = r.t;
        if (r.t < burn_in_time) continue;
        mt.j_eff += efficiency(r.sigma, s.rewards);
        for (std::size_t c = 0; c < wsum.size(); ++c) wsum[c] += r.w_bar[c];
        ++n;
    }
    if (n == 0) throw ModelError("no samples after burn-in");
    mt.j_eff /= static_cast<double>(n);
    for (double& w : wsum) w /= static_cast<double>(n);
    mt.j_fair = fairness(wsum);
    mt.j = combined_objective(obj, mt.j_eff, mt.j_fair);
    mt.eps_final = rows.back().eps;
    mt.sigma_final = rows.back().sigma;
    mt.w_bar_final = rows.back().w_bar;
    return mt;
}

// Coefficient of variation of policy payoffs, weighted by policy mass, within each class.
inline std::vector<double> policy_dispersion(const GameModel& m, const StatePolicyDistribution& mu) {
    const auto x = policy_marginals(m, mu);
    const auto F = payoff_map(m, mu);
    std::vector<double> out(m.classes(), 0.0);
    for (std::size_t c = 0; c < m.classes(); ++c) {
        double tot = 0.0, mean = 0.0, var = 0.0;
        for (std::size_t u = 0; u < x[c].size(); ++u) tot += x[c][u], mean += x[c][u] * F[c][u];
        if (!(tot > 0.0)) continue;
        mean /= tot;
        for (std::size_t u = 0; u < x[c].size(); ++u) var += x[c][u] * (F[c][u] - mean) * (F[c][u] - mean);
        out[c] = std::sqrt(var / tot) / std::max(std::abs(mean), 1e-300);
    }
    return out;
}

inline ojson metrics_json(const Metrics& mt) {
    ojson j;
    j["j_eff"] = mt.j_eff;
    j["j_fair"] = mt.j_fair;
    j["j"] = mt.j;
    j["dispersion"] = mt.dispersion;
    j["eps_final"] = mt.eps_final;
    j["first_entry_time"] = mt.first_entry ? ojson(*mt.first_entry) : ojson(nullptr);
    j["sigma_final"] = mt.sigma_final;
    j["w_bar_final"] = mt.w_bar_final;
    return j;
}

// Rough size of the state-policy grid for a token cap: about A^2/2 policies per token count.
inline double estimated_cells(const Scenario& s, int k_max) {
    const double K = k_max + 1.0;
    double cells = 0.0;
    for (const auto& c : s.classes) cells += 0.5 * static_cast<double>(c.actions.size() * c.actions.size()) * K * K;
    return cells;
}

// ---- design --------------------------------------------------------------------------------

inline int cmd_design(const RunConfig& rc, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    auto ctx = prepare(rc, log);
    const auto& s = ctx.cfg.scenario;
    if (!report_assumptions(s, log)) {
        err << "scenario " << s.name << " violates the model assumptions\n" << describe(validate_scenario(s));
        return kFailure;
    }
    DesignResult r;
    try {
        r = design_tolls(s, ctx.cfg.solver.objective, ctx.cfg.solver.design);
    } catch (const CertificationError& e) {
        err << "scenario " << s.name << ": " << e.what() << '\n';
        return kFailure;
    } catch (const DesignError& e) {
        err << "scenario " << s.name << ": " << e.what() << '\n';
        return kFailure;
    }
    const double cells = estimated_cells(s, r.selection.k_max);
    if (cells > ctx.cfg.solver.max_cells) {
        err << "scenario " << s.name << ": designed k_max=" << r.selection.k_max << " (alpha=" << r.selection.alpha
            << ") gives roughly " << cells << " state-policy cells, above solver.max_cells=" << ctx.cfg.solver.max_cells
            << "; raise solver.rho or solver.gap_tol, or solver.max_cells on a larger machine\n";
        return kFailure;
    }
    GameModel m(r.designed, ctx.cfg.solver.max_distinct_actions);
    const auto cand = construct_optimal_msne(m, r.decomposition, r.optimum);

    write_file(ctx.out / "design.json", dump(design_json(r, &cand)));
    write_file(ctx.out / "tolls.csv", toll_csv(r.designed));

    bool ok = true;
    auto fail = [&](const std::string& what) {
        err << "certificate failed: " << what << '\n';
        ok = false;
    };
    if (r.toll_identity_residual > kCertificateTol) fail("toll identity residual " + fmt(r.toll_identity_residual));
    if (r.selection.tail_bound > ctx.cfg.solver.design.tail_tol) fail("tail bound above tail_tol");
    for (std::size_t c = 0; c < r.decomposition.size(); ++c)
        if (r.decomposition[c].support_violations > 0) fail("decomposition support in class " + std::to_string(c));
    if (!validate_scenario(r.designed).empty()) fail("designed scenario:\n" + describe(validate_scenario(r.designed)));

    log << "designed " << s.name << ": alpha=" << r.selection.alpha << " k_max=" << r.selection.k_max
        << " policies=" << m.size() / m.states() << " candidate eps=" << cand.certificate.eps << '\n';
    log << "wrote " << (ctx.out / "design.json").string() << " and " << (ctx.out / "tolls.csv").string() << '\n';
    return ok ? kOk : kFailure;
}

// ---- simulate ------------------------------------------------------------------------------

inline Scenario simulated_scenario(const RunConfig& rc, const Context& ctx, bool zero) {
    Scenario s = ctx.cfg.scenario;
    if (zero) {
        s.tolls = zero_tolls(s);
        return s;
    }
    const auto path = rc.tolls.empty() ? ctx.out / "tolls.csv" : rc.tolls;
    if (!std::filesystem::exists(path))
        throw ConfigError("toll map " + path.string() + " not found; run design first or pass --baseline-zero-tolls");
    auto tf = load_toll_csv(path, s);
    s.tolls = tf.tolls;
    s.k_max = tf.k_max;
    return s;
}

struct MeanFieldRun {
    std::vector<TrajectoryRow> rows;
    Metrics metrics;
    StatePolicyDistribution final_state;
};

inline MeanFieldRun run_meanfield(const Context& ctx, const Scenario& s) {
    GameModel m(s, ctx.cfg.solver.max_distinct_actions);
    const auto spec = make_protocol(m, ctx.cfg.solver.protocol);
    MeanFieldRun out;
    IntegrateOptions io;
    io.keep_states = false;
    io.sample_interval = ctx.dt;
    io.step_factor = ctx.cfg.solver.step_factor;
    io.observer = [&](double t, const StatePolicyDistribution& mu) { out.rows.push_back(summarize_state(m, t, mu)); };
    auto tr = integrate(m, spec, default_initial(m), ctx.horizon, io);
    out.final_state = tr.final_state;
    out.metrics = reduce_rows(s, ctx.cfg.solver.objective, out.rows, ctx.cfg.solver.burn_in * ctx.horizon,
                              ctx.cfg.solver.eps_target);
    out.metrics.dispersion = policy_dispersion(m, tr.final_state);
    return out;
}

struct PopulationRun {
    std::uint64_t seed = 0;
    std::vector<TrajectoryRow> rows;
    std::vector<AgentSummary> agents;
    Metrics metrics;
};

inline PopulationRun run_population(const Context& ctx, const GameModel& m, const RevisionProtocolSpec& spec,
                                    std::uint64_t seed) {
    auto p = init_population(m, ctx.cfg.population.size, default_initial(m), seed);
    PopulationRunOptions po;
    po.sample_interval = ctx.dt;
    po.burn_in = ctx.cfg.solver.burn_in;
    po.keep_states = true;
    auto tr = run(p, spec, ctx.horizon, po);
    PopulationRun out;
    out.seed = seed;
    for (std::size_t i = 0; i < tr.t.size(); ++i) out.rows.push_back(summarize_state(m, tr.t[i], tr.states[i]));
    out.agents = std::move(tr.agents);
    out.metrics = reduce_rows(m.scenario(), ctx.cfg.solver.objective, out.rows, tr.burn_in_time,
                              ctx.cfg.solver.eps_target);
    out.metrics.dispersion = intra_class_dispersion(out.agents, m.classes());
    return out;
}

inline ojson aggregate(const std::vector<Metrics>& ms) {
    auto stats = [&](auto get) {
        double mean = 0.0, sq = 0.0;
        for (const auto& m : ms) mean += get(m);
        mean /= static_cast<double>(ms.size());
        for (const auto& m : ms) sq += (get(m) - mean) * (get(m) - mean);
        const double sd = ms.size() > 1 ? std::sqrt(sq / static_cast<double>(ms.size() - 1)) : 0.0;
        return ojson{{"mean", mean}, {"stddev", sd}};
    };
    auto max_disp = [](const Metrics& m) {
        return m.dispersion.empty() ? 0.0 : *std::max_element(m.dispersion.begin(), m.dispersion.end());
    };
    ojson j;
    j["j_eff"] = stats([](const Metrics& m) { return m.j_eff; });
    j["j_fair"] = stats([](const Metrics& m) { return m.j_fair; });
    j["j"] = stats([](const Metrics& m) { return m.j; });
    j["max_dispersion"] = stats(max_disp);
    j["eps_final"] = stats([](const Metrics& m) { return m.eps_final; });
    return j;
}

inline double relative_gain(double j, double j0) { return (j - j0) / std::max(std::abs(j0), 1e-300); }

inline int cmd_simulate(const RunConfig& rc, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    auto ctx = prepare(rc, log);
    if (rc.mode != "meanfield" && rc.mode != "population")
        throw ConfigError("unknown mode '" + rc.mode + "' (expected meanfield or population)");
    const bool zero = rc.baseline_zero_tolls;
    const Scenario s = simulated_scenario(rc, ctx, zero);
    if (!report_assumptions(s, log)) {
        err << "scenario " << s.name << " violates the model assumptions\n";
        return kFailure;
    }
    const bool baseline = rc.with_baseline && !zero;
    const auto dir = ctx.out / (rc.mode + (zero ? "-zero-tolls" : ""));

    ojson report;
    report["scenario"] = s.name;
    report["mode"] = rc.mode;
    report["tolls"] = zero ? "zero" : "designed";
    report["k_max"] = s.k_max;
    report["horizon"] = ctx.horizon;
    report["burn_in_time"] = ctx.cfg.solver.burn_in * ctx.horizon;
    report["objective"] = to_string(ctx.cfg.solver.objective.kind);

    if (rc.mode == "meanfield") {
        auto mf = run_meanfield(ctx, s);
        write_file(dir / "trajectory.csv", trajectory_csv(s, mf.rows));
        report["metrics"] = metrics_json(mf.metrics);
        if (baseline) {
            auto b = run_meanfield(ctx, simulated_scenario(rc, ctx, true));
            report["baseline"] = metrics_json(b.metrics);
            report["relative_gain"] = relative_gain(mf.metrics.j, b.metrics.j);
        }
        log << s.name << " meanfield: J=" << mf.metrics.j << " eps=" << mf.metrics.eps_final << '\n';
    } else {
        auto run_all = [&](const Scenario& sc, const std::filesystem::path& d, bool write) {
            GameModel m(sc, ctx.cfg.solver.max_distinct_actions);
            const auto spec = make_protocol(m, ctx.cfg.solver.protocol);
            std::vector<Metrics> ms;
            ojson runs = ojson::array();
            // Replicas run concurrently; results are collected in seed order so output is deterministic.
            std::vector<std::future<PopulationRun>> jobs;
            for (auto seed : ctx.cfg.population.seeds)
                jobs.push_back(std::async(std::launch::async, [&, seed] { return run_population(ctx, m, spec, seed); }));
            for (auto& job : jobs) {
                auto pr = job.get();
                const auto seed = pr.seed;
                if (write) {
                    const auto sd = d / ("seed_" + std::to_string(seed));
                    write_file(sd / "trajectory.csv", trajectory_csv(sc, pr.rows));
                    write_file(sd / "agents.csv", agents_csv(pr.agents));
                }
                auto mj = metrics_json(pr.metrics);
                mj = ojson{{"seed", seed}, {"metrics", mj}};
                runs.push_back(mj);
                ms.push_back(pr.metrics);
            }
            return std::make_pair(runs, ms);
        };
        report["population"] = ctx.cfg.population.size;
        auto [runs, ms] = run_all(s, dir, true);
        report["runs"] = runs;
        report["aggregate"] = aggregate(ms);
        if (baseline) {
            auto [bruns, bms] = run_all(simulated_scenario(rc, ctx, true), dir / "baseline", false);
            report["baseline"] = {{"runs", bruns}, {"aggregate", aggregate(bms)}};
            double g = 0.0;
            for (std::size_t i = 0; i < ms.size(); ++i) g += relative_gain(ms[i].j, bms[i].j);
            report["relative_gain"] = g / static_cast<double>(ms.size());
        }
        log << s.name << " population: " << ctx.cfg.population.seeds.size() << " seeds, N="
            << ctx.cfg.population.size << '\n';
    }
    write_file(dir / "metrics.json", dump(report));
    log << "wrote " << dir.string() << '\n';
    return kOk;
}

// ---- compare -------------------------------------------------------------------------------

struct SweepRow {
    std::size_t n = 0;
    double sup = 0.0;
};

inline bool strictly_decreasing(const std::vector<SweepRow>& rows) {
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (!(rows[i].sup < rows[i - 1].sup)) return false;
    return true;
}

inline std::vector<SweepRow> sweep_distances(const Context& ctx, const Scenario& s) {
    GameModel m(s, ctx.cfg.solver.max_distinct_actions);
    const auto spec = make_protocol(m, ctx.cfg.solver.protocol);
    const auto mu0 = default_initial(m);
    IntegrateOptions io;
    io.sample_interval = ctx.dt;
    io.step_factor = ctx.cfg.solver.step_factor;
    auto mf = integrate(m, spec, mu0, ctx.horizon, io);
    std::vector<std::future<SweepRow>> jobs;
    for (auto n : ctx.cfg.population.sweep)
        jobs.push_back(std::async(std::launch::async, [&, n] {
            auto p = init_population(m, n, mu0, ctx.cfg.population.seeds.front());
            PopulationRunOptions po;
            po.sample_interval = ctx.dt;
            po.keep_states = true;
            auto tr = run(p, spec, ctx.horizon, po);
            return SweepRow{n, compare_to_meanfield(tr.t, tr.states, mf.t, mf.states).sup};
        }));
    std::vector<SweepRow> rows;
    for (auto& job : jobs) rows.push_back(job.get());
    return rows;
}

inline int cmd_compare(const RunConfig& rc, std::ostream& log = std::cout, std::ostream& = std::cerr) {
    auto ctx = prepare(rc, log);
    const Scenario s = simulated_scenario(rc, ctx, rc.baseline_zero_tolls);
    if (ctx.cfg.population.sweep.empty()) throw ConfigError("empty N sweep");
    const auto rows = sweep_distances(ctx, s);
    std::ostringstream csv;
    csv << "# tokenecon-compare v" << kCsvSchemaVersion << "\nN,sup_l1\n";
    for (const auto& r : rows) csv << r.n << ',' << fmt(r.sup) << '\n';
    ojson j;
    j["scenario"] = s.name;
    j["seed"] = ctx.cfg.population.seeds.front();
    j["horizon"] = ctx.horizon;
    ojson tab = ojson::array();
    for (const auto& r : rows) tab.push_back({{"N", r.n}, {"sup_l1", r.sup}});
    j["rows"] = tab;
    if (rows.size() > 1)
        j["verdict"] = strictly_decreasing(rows) ? "strictly decreasing" : "not strictly decreasing";
    const auto dir = ctx.out / "compare";
    write_file(dir / "compare.csv", csv.str());
    write_file(dir / "compare.json", dump(j));
    for (const auto& r : rows) log << "N=" << r.n << " sup l1=" << r.sup << '\n';
    if (rows.size() > 1) log << "verdict: " << j["verdict"].get<std::string>() << '\n';
    return kOk;
}

// ---- validate ------------------------------------------------------------------------------

inline int cmd_validate(const RunConfig& rc, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    auto ctx = prepare(rc, log);
    Scenario s = ctx.cfg.scenario;
    if (!rc.tolls.empty()) {
        auto tf = load_toll_csv(rc.tolls, s);
        s.tolls = tf.tolls;
        s.k_max = tf.k_max;
    }
    log << "scenario " << s.name << ": " << s.resource_count() << " resources, " << s.class_count() << " classes\n";
    if (!report_assumptions(s, log)) {
        err << "scenario " << s.name << " violates the model assumptions\n";
        return kFailure;
    }
    return kOk;
}

// Runs a command, mapping exceptions onto the exit-code contract.
template <class Fn>
int guarded(Fn&& fn, std::ostream& err = std::cerr) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    } catch (const AssumptionError& e) {
        err << "assumption violated: " << e.what() << '\n';
        return kFailure;
    } catch (const DesignError& e) {
        err << "design failed: " << e.what() << '\n';
        return kFailure;
    } catch (const IntegrationError& e) {
        err << "integration failed: " << e.what() << '\n';
        return kFailure;
    } catch (const ModelError& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    }
}

}  // namespace tokenecon::cli
