#pragma once
// Scenario files (TOML), toll-map / trajectory / agent CSVs and the design JSON.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "tokenecon/design.hpp"
#include "tokenecon/meanfield.hpp"
#include "tokenecon/model.hpp"
#include "tokenecon/network.hpp"
#include "tokenecon/population.hpp"

namespace tokenecon {

// Malformed or missing input. The CLI maps it to exit code 2.
class ConfigError : public ModelError {
public:
    using ModelError::ModelError;
};

inline constexpr int kCsvSchemaVersion = 1;

struct SolverConfig {
    RevisionProtocolSpec::Kind protocol = RevisionProtocolSpec::Kind::PairwiseComparison;
    ObjectiveSpec objective;
    DesignOptions design;
    double horizon = 50.0;  // in units of 1/Rr
    std::size_t samples = 200;
    double step_factor = 1.0;
    double burn_in = 0.5;
    double eps_target = 1e-3;
    std::size_t max_distinct_actions = 2;
    double max_cells = 5e7;  // refuse designs whose state-policy grid would be larger
};

struct PopulationConfig {
    std::size_t size = 1000;
    std::vector<std::uint64_t> seeds{1};
    std::vector<std::size_t> sweep{100, 1000, 10000};
};

struct ScenarioConfig {
    Scenario scenario;
    SolverConfig solver;
    PopulationConfig population;
    bool heavy = false;
    bool tolls_given = false;
    std::filesystem::path source;
    std::vector<std::string> warnings;
};

namespace detail {

template <class T>
T req(const toml::node_view<const toml::node>& v, const std::string& key) {
    auto x = v.value<T>();
    if (!x) throw ConfigError("missing or mistyped key '" + key + "'");
    return *x;
}

template <class T>
T opt(const toml::node_view<const toml::node>& v, const std::string& key, T fallback) {
    if (!v) return fallback;
    auto x = v.value<T>();
    if (!x) throw ConfigError("mistyped key '" + key + "'");
    return *x;
}

inline double positive(double v, const std::string& key) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("'" + key + "' must be positive");
    return v;
}

template <class T>
std::vector<T> list(const toml::node_view<const toml::node>& v, const std::string& key) {
    std::vector<T> out;
    if (!v) return out;
    const auto* arr = v.as_array();
    if (!arr) throw ConfigError("'" + key + "' must be an array");
    for (const auto& e : *arr) {
        auto x = e.template value<T>();
        if (!x) throw ConfigError("'" + key + "' has a mistyped entry");
        out.push_back(*x);
    }
    return out;
}

inline RewardFn parse_resource(const toml::table& t, std::size_t idx) {
    const toml::node_view<const toml::node> v{t};
    const std::string where = "resources[" + std::to_string(idx) + "]";
    const auto kind = opt<std::string>(v["kind"], where + ".kind", "affine");
    if (kind == "affine")
        return RewardFn::affine(req<double>(v["intercept"], where + ".intercept"),
                                positive(req<double>(v["slope"], where + ".slope"), where + ".slope"));
    if (kind == "bpr")
        return RewardFn::negated_bpr(req<double>(v["free_flow"], where + ".free_flow"),
                                     req<double>(v["capacity"], where + ".capacity"),
                                     opt<double>(v["b"], where + ".b", 0.15),
                                     opt<double>(v["power"], where + ".power", 4.0),
                                     opt<double>(v["flow_scale"], where + ".flow_scale", 1.0),
                                     opt<double>(v["eps_rel"], where + ".eps_rel", 1e-3));
    throw ConfigError(where + ": unknown resource kind '" + kind + "'");
}

}  // namespace detail

inline ScenarioConfig parse_scenario(std::string_view text, const std::filesystem::path& source = "<scenario>") {
    toml::table root;
    try {
        root = toml::parse(text, source.string());
    } catch (const toml::parse_error& e) {
        std::ostringstream os;
        os << source.string() << ": " << e.description() << " at line " << e.source().begin.line;
        throw ConfigError(os.str());
    }
    const toml::node_view<const toml::node> v{root};
    using detail::opt;
    using detail::req;

    ScenarioConfig cfg;
    cfg.source = source;
    auto& s = cfg.scenario;
    s.name = opt<std::string>(v["name"], "name", source.stem().string());
    cfg.heavy = opt<bool>(v["heavy"], "heavy", false);

    s.rates.action = detail::positive(opt<double>(v["rates"]["action"], "rates.action", 1.0), "rates.action");
    s.rates.noise = opt<double>(v["rates"]["noise"], "rates.noise", 0.1);
    s.rates.revision = opt<double>(v["rates"]["revision"], "rates.revision", 0.011);
    s.max_revision_ratio = opt<double>(v["rates"]["max_revision_ratio"], "rates.max_revision_ratio", 0.05);
    if (s.rates.noise < 0.0 || !(s.rates.revision > 0.0)) throw ConfigError("rates must be positive");

    s.k_max = static_cast<int>(opt<std::int64_t>(v["tokens"]["k_max"], "tokens.k_max", 10));
    s.seed = static_cast<std::uint64_t>(opt<std::int64_t>(v["population"]["seed"], "population.seed", 1));

    auto& pc = cfg.population;
    pc.size = static_cast<std::size_t>(opt<std::int64_t>(v["population"]["size"], "population.size", 1000));
    if (auto seeds = detail::list<std::int64_t>(v["population"]["seeds"], "population.seeds"); !seeds.empty())
        pc.seeds.assign(seeds.begin(), seeds.end());
    else
        pc.seeds = {s.seed};
    if (auto sw = detail::list<std::int64_t>(v["population"]["sweep"], "population.sweep"); !sw.empty())
        pc.sweep.assign(sw.begin(), sw.end());
    s.population = pc.size;

    auto& sc = cfg.solver;
    sc.protocol = parse_protocol(opt<std::string>(v["solver"]["protocol"], "solver.protocol", "pairwise"));
    sc.objective = parse_objective(opt<std::string>(v["solver"]["objective"], "solver.objective", "avg-reward"),
                                   opt<double>(v["solver"]["gamma"], "solver.gamma", 0.1));
    sc.design.rho = opt<double>(v["solver"]["rho"], "solver.rho", 0.05);
    sc.design.tail_tol = opt<double>(v["solver"]["tail_tol"], "solver.tail_tol", 1e-4);
    // reward gaps at or below this count as zero when choosing alpha
    sc.design.gap_tol = detail::positive(opt<double>(v["solver"]["gap_tol"], "solver.gap_tol", 1e-6), "solver.gap_tol");
    sc.design.solver.prune = opt<double>(v["solver"]["prune_flows"], "solver.prune_flows", 0.0);
    sc.max_cells = detail::positive(opt<double>(v["solver"]["max_cells"], "solver.max_cells", 5e7), "solver.max_cells");
    sc.design.pair_cap =
        static_cast<std::size_t>(opt<std::int64_t>(v["solver"]["pair_cap"], "solver.pair_cap", 64));
    sc.horizon = detail::positive(opt<double>(v["solver"]["horizon"], "solver.horizon", 50.0), "solver.horizon");
    sc.samples = static_cast<std::size_t>(opt<std::int64_t>(v["solver"]["samples"], "solver.samples", 200));
    sc.step_factor = opt<double>(v["solver"]["step_factor"], "solver.step_factor", 1.0);
    sc.burn_in = opt<double>(v["solver"]["burn_in"], "solver.burn_in", 0.5);
    sc.eps_target = opt<double>(v["solver"]["eps_target"], "solver.eps_target", 1e-3);
    sc.max_distinct_actions = static_cast<std::size_t>(
        opt<std::int64_t>(v["solver"]["max_distinct_actions"], "solver.max_distinct_actions", 2));
    if (sc.samples < 1) throw ConfigError("solver.samples must be at least 1");
    if (!(sc.burn_in >= 0.0 && sc.burn_in < 1.0)) throw ConfigError("solver.burn_in must lie in [0,1)");
    if (!(sc.design.rho > 0.0 && sc.design.rho < 1.0)) throw ConfigError("solver.rho must lie in (0,1)");

    if (root.contains("network")) {
        const auto dir = source.parent_path();
        auto resolve = [&](const std::string& key) {
            std::filesystem::path p = req<std::string>(v["network"][key], "network." + key);
            return p.is_relative() ? dir / p : p;
        };
        NetworkGameOptions no;
        no.max_paths = static_cast<std::size_t>(opt<std::int64_t>(v["network"]["max_paths"], "network.max_paths", 3));
        no.flow_scale = opt<double>(v["network"]["flow_scale"], "network.flow_scale", 1.0);
        no.eps_rel = opt<double>(v["network"]["eps_rel"], "network.eps_rel", 1e-3);
        Network net;
        std::vector<OdPair> ods;
        try {
            net = load_network(resolve("file"));
            ods = load_od(resolve("od"));
        } catch (const ParseError& e) {
            throw ConfigError(e.what());
        }
        auto game = build_network_game(net, ods, no);
        s.rewards = std::move(game.scenario.rewards);
        s.classes = std::move(game.scenario.classes);
        cfg.warnings = std::move(game.warnings);
    } else {
        const auto* res = root["resources"].as_array();
        if (!res || res->empty()) throw ConfigError("scenario needs [[resources]] or [network]");
        for (std::size_t i = 0; i < res->size(); ++i) {
            const auto* t = (*res)[i].as_table();
            if (!t) throw ConfigError("resources[" + std::to_string(i) + "] must be a table");
            s.rewards.push_back(detail::parse_resource(*t, i));
        }
        const auto* cls = root["classes"].as_array();
        if (!cls || cls->empty()) throw ConfigError("scenario needs at least one [[classes]] entry");
        for (std::size_t i = 0; i < cls->size(); ++i) {
            const auto* t = (*cls)[i].as_table();
            const std::string where = "classes[" + std::to_string(i) + "]";
            if (!t) throw ConfigError(where + " must be a table");
            const toml::node_view<const toml::node> cv{*t};
            ClassSpec c;
            c.name = opt<std::string>(cv["name"], where + ".name", "c" + std::to_string(i));
            c.mass = detail::positive(opt<double>(cv["mass"], where + ".mass", 1.0), where + ".mass");
            const auto* acts = cv["actions"].as_array();
            if (!acts || acts->empty()) throw ConfigError(where + ".actions must be a nonempty array");
            auto labels = detail::list<std::string>(cv["labels"], where + ".labels");
            for (std::size_t a = 0; a < acts->size(); ++a) {
                Action act;
                for (auto r : detail::list<std::int64_t>(toml::node_view<const toml::node>{(*acts)[a]},
                                                          where + ".actions")) {
                    if (r < 0 || static_cast<std::size_t>(r) >= s.rewards.size())
                        throw ConfigError(where + ": action references unknown resource " + std::to_string(r));
                    act.resources.push_back(static_cast<std::size_t>(r));
                }
                if (act.resources.empty()) throw ConfigError(where + ": empty action");
                std::sort(act.resources.begin(), act.resources.end());
                act.label = a < labels.size() ? labels[a] : "a" + std::to_string(a);
                c.actions.push_back(std::move(act));
            }
            auto tolls = detail::list<std::int64_t>(cv["tolls"], where + ".tolls");
            if (!tolls.empty()) {
                if (tolls.size() != c.actions.size()) throw ConfigError(where + ".tolls length differs from actions");
                cfg.tolls_given = true;
            }
            s.tolls.emplace_back(tolls.begin(), tolls.end());
            s.classes.push_back(std::move(c));
        }
        if (cfg.tolls_given) {
            for (std::size_t c = 0; c < s.classes.size(); ++c)
                if (s.tolls[c].empty()) s.tolls[c].assign(s.classes[c].actions.size(), 0);
        } else {
            s.tolls.clear();
        }
    }
    if (s.tolls.empty()) s.tolls = zero_tolls(s);
    return cfg;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + p.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline ScenarioConfig load_scenario(const std::filesystem::path& p) { return parse_scenario(read_text(p), p); }

// ---- CSV ---------------------------------------------------------------------------------

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + p.string());
    out << content;
    if (!out) throw ConfigError("write failed for " + p.string());
}

inline std::string toll_csv(const Scenario& s) {
    std::ostringstream os;
    os << "# tokenecon-tolls v" << kCsvSchemaVersion << "\n# k_max," << s.k_max << "\nclass,action,label,toll\n";
    for (std::size_t c = 0; c < s.classes.size(); ++c)
        for (std::size_t a = 0; a < s.classes[c].actions.size(); ++a)
            os << c << ',' << a << ',' << s.classes[c].actions[a].label << ',' << s.tolls[c][a] << '\n';
    return os.str();
}

struct TollFile {
    TollMap tolls;
    int k_max = 0;
};

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline void expect_schema(std::istream& in, const std::string& kind, const std::string& src) {
    std::string line;
    const std::string want = "# tokenecon-" + kind + " v" + std::to_string(kCsvSchemaVersion);
    if (!std::getline(in, line) || line != want)
        throw ConfigError(src + ": expected schema header '" + want + "'");
}

inline TollFile parse_toll_csv(std::istream& in, const Scenario& s, const std::string& src = "<tolls>") {
    expect_schema(in, "tolls", src);
    TollFile tf;
    std::string line;
    if (!std::getline(in, line) || line.rfind("# k_max,", 0) != 0) throw ConfigError(src + ": missing k_max header");
    try {
        tf.k_max = std::stoi(line.substr(8));
    } catch (const std::exception&) {
        throw ConfigError(src + ": bad k_max header");
    }
    std::getline(in, line);  // column names
    tf.tolls = zero_tolls(s);
    std::vector<std::vector<char>> seen;
    for (const auto& row : tf.tolls) seen.emplace_back(row.size(), 0);
    std::size_t n = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv(line);
        try {
            if (f.size() != 4) throw std::invalid_argument("field count");
            const auto c = std::stoul(f[0]), a = std::stoul(f[1]);
            if (c >= tf.tolls.size() || a >= tf.tolls[c].size()) throw std::out_of_range("index");
            tf.tolls[c][a] = std::stoi(f[3]);
            seen[c][a] = 1;
            ++n;
        } catch (const std::exception&) {
            throw ConfigError(src + ": bad row '" + line + "' (toll map does not match the scenario)");
        }
    }
    for (const auto& row : seen)
        for (char x : row)
            if (!x) throw ConfigError(src + ": toll map does not cover every class action");
    return tf;
}

inline TollFile load_toll_csv(const std::filesystem::path& p, const Scenario& s) {
    std::istringstream in(read_text(p));
    return parse_toll_csv(in, s, p.string());
}

// One sampled row of a trajectory, shared by mean-field and population output.
struct TrajectoryRow {
    double t = 0.0;
    FlowVector sigma;
    std::vector<double> w_bar;
    double potential = 0.0;
    double eps = 0.0;
};

inline TrajectoryRow summarize_state(const GameModel& m, double t, const StatePolicyDistribution& mu) {
    TrajectoryRow r;
    r.t = t;
    r.sigma = sigma_from_distribution(m, mu);
    r.w_bar = class_average_rewards(m, mu);
    r.potential = potential(m, policy_marginals(m, mu));
    r.eps = msne_certificate(m, mu).eps;
    return r;
}

inline std::string trajectory_csv(const Scenario& s, const std::vector<TrajectoryRow>& rows) {
    std::ostringstream os;
    os << "# tokenecon-trajectory v" << kCsvSchemaVersion << "\nt";
    for (std::size_t r = 0; r < s.resource_count(); ++r) os << ",sigma_" << r;
    for (std::size_t c = 0; c < s.class_count(); ++c) os << ",wbar_" << c;
    os << ",U,eps\n";
    for (const auto& row : rows) {
        os << fmt(row.t);
        for (double v : row.sigma) os << ',' << fmt(v);
        for (double v : row.w_bar) os << ',' << fmt(v);
        os << ',' << fmt(row.potential) << ',' << fmt(row.eps) << '\n';
    }
    return os.str();
}

inline std::vector<TrajectoryRow> parse_trajectory_csv(std::istream& in, std::size_t resources, std::size_t classes,
                                                       const std::string& src = "<trajectory>") {
    expect_schema(in, "trajectory", src);
    std::string line;
    std::getline(in, line);
    if (split_csv(line).size() != 3 + resources + classes)
        throw ConfigError(src + ": column count does not match the scenario");
    std::vector<TrajectoryRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv(line);
        if (f.size() != 3 + resources + classes) throw ConfigError(src + ": ragged row");
        TrajectoryRow r;
        std::size_t i = 0;
        r.t = std::stod(f[i++]);
        for (std::size_t k = 0; k < resources; ++k) r.sigma.push_back(std::stod(f[i++]));
        for (std::size_t k = 0; k < classes; ++k) r.w_bar.push_back(std::stod(f[i++]));
        r.potential = std::stod(f[i++]);
        r.eps = std::stod(f[i++]);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::string agents_csv(const std::vector<AgentSummary>& agents) {
    std::ostringstream os;
    os << "# tokenecon-agents v" << kCsvSchemaVersion << "\nagent,class,mean_reward,action_count\n";
    for (const auto& a : agents)
        os << a.id << ',' << a.cls << ',' << fmt(a.mean_reward) << ',' << a.action_count << '\n';
    return os.str();
}

// ---- JSON --------------------------------------------------------------------------------

using ojson = nlohmann::ordered_json;

inline ojson design_json(const DesignResult& r, const CandidateMsne* cand = nullptr) {
    const auto& s = r.designed;
    ojson j;
    j["scenario"] = s.name;
    j["objective"] = to_string(r.objective.kind);
    if (r.objective.kind == ObjectiveSpec::Kind::MinClassPlusAverage) j["gamma"] = r.objective.gamma;
    j["alpha"] = r.selection.alpha;
    j["k_max"] = r.selection.k_max;
    j["delta_min"] = r.selection.delta_min;
    j["tail_bound"] = r.selection.tail_bound;
    j["sigma"] = r.optimum.sigma;
    j["j_eff"] = r.optimum.j_eff;
    j["j_fair"] = r.optimum.j_f;
    j["objective_value"] = r.optimum.objective;
    j["solver_residual"] = r.optimum.residual;
    j["toll_identity_residual"] = r.toll_identity_residual;
    ojson classes = ojson::array();
    for (std::size_t c = 0; c < s.classes.size(); ++c) {
        ojson jc;
        jc["name"] = s.classes[c].name;
        jc["mass"] = s.classes[c].mass;
        jc["w_bar"] = r.optimum.w_bar[c];
        ojson acts = ojson::array();
        for (std::size_t a = 0; a < s.classes[c].actions.size(); ++a) {
            ojson ja;
            ja["label"] = s.classes[c].actions[a].label;
            ja["flow"] = r.optimum.flows[c][a];
            ja["reward"] = r.optimum.w_action[c][a];
            ja["toll_continuous"] = r.selection.continuous[c][a];
            ja["toll"] = r.selection.tolls[c][a];
            acts.push_back(ja);
        }
        jc["actions"] = acts;
        const auto& lp = r.lp[c];
        jc["lp"] = {{"y_t", lp.y_t},
                    {"y_m", lp.y_m},
                    {"primal_residual", lp.primal_residual},
                    {"dual_residual", lp.dual_residual},
                    {"slackness_residual", lp.slackness_residual},
                    {"duality_gap", lp.duality_gap}};
        const auto& d = r.decomposition[c];
        ojson comps = ojson::array();
        for (const auto& comp : d.components)
            comps.push_back({{"p", comp.p}, {"q", comp.q}, {"g_p", comp.g_p}, {"g_q", comp.g_q}});
        jc["decomposition"] = {{"components", comps},
                               {"zero_toll_case", d.zero_toll_case},
                               {"pair_cap_hit", d.pair_cap_hit},
                               {"support_violations", d.support_violations},
                               {"drift_residual", d.drift_residual},
                               {"mass_residual", d.mass_residual},
                               {"flow_residual", d.flow_residual},
                               {"payoff_residual", d.payoff_residual}};
        classes.push_back(jc);
    }
    j["classes"] = classes;
    if (cand) {
        j["candidate_msne"] = {{"eps", cand->certificate.eps},
                               {"eps_policy", cand->certificate.eps_policy},
                               {"eps_state", cand->certificate.eps_state},
                               {"flow_match", cand->flow_match}};
    }
    return j;
}

inline std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

}  // namespace tokenecon
