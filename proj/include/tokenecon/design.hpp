#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tokenecon/meanfield.hpp"
#include "tokenecon/model.hpp"
#include "tokenecon/numerics.hpp"
#include "tokenecon/policy.hpp"
#include "tokenecon/wallet.hpp"

namespace tokenecon {

class DesignError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CertificationError : public DesignError {
public:
    using DesignError::DesignError;
};

struct ObjectiveSpec {
    enum class Kind { AverageReward, MinClassPlusAverage };
    Kind kind = Kind::AverageReward;
    double gamma = 0.1;

    static ObjectiveSpec average_reward() { return {}; }
    static ObjectiveSpec min_class(double gamma) { return {Kind::MinClassPlusAverage, gamma}; }
};

inline std::string to_string(ObjectiveSpec::Kind k) {
    return k == ObjectiveSpec::Kind::AverageReward ? "avg-reward" : "min-class";
}

inline ObjectiveSpec parse_objective(const std::string& s, double gamma) {
    if (s == "avg-reward" || s == "average") return ObjectiveSpec::average_reward();
    if (s == "min-class" || s == "min-class+avg") {
        if (gamma < 0.0) throw ModelError("gamma must be nonnegative");
        return ObjectiveSpec::min_class(gamma);
    }
    throw ModelError("unknown objective '" + s + "'");
}

// g(J_eff, J_F) for the configured objective
inline double combined_objective(const ObjectiveSpec& obj, double j_eff, double j_f) {
    return obj.kind == ObjectiveSpec::Kind::AverageReward ? j_eff : j_f + obj.gamma * j_eff;
}

struct SystemOptimum {
    std::vector<std::vector<double>> flows;     // f*[c][a], action events per unit time
    FlowVector sigma;
    std::vector<std::vector<double>> w_action;  // w(a, sigma*)
    std::vector<double> w_bar;
    double j_eff = 0.0;
    double j_f = 0.0;
    double objective = 0.0;
    double residual = 0.0;  // relative duality gap or projected-gradient norm
    std::size_t iterations = 0;
};

struct SystemOptimumOptions {
    double tol = 1e-12;          // relative duality gap for the average-reward solver
    std::size_t max_sweeps = 200000;
    std::size_t multistarts = 8;
    std::uint64_t seed = 12345;
    double prune = 0.0;  // relative flow below which an action is folded away; 0 keeps all
};

namespace detail {

inline SystemOptimum finish_optimum(const Scenario& s, const ObjectiveSpec& obj,
                                    std::vector<std::vector<double>> f) {
    SystemOptimum o;
    o.flows = std::move(f);
    o.sigma = sigma_from_action_flows(s, o.flows);
    for (std::size_t c = 0; c < s.classes.size(); ++c) {
        std::vector<double> w;
        double acc = 0.0;
        for (std::size_t a = 0; a < s.classes[c].actions.size(); ++a) {
            w.push_back(action_reward(s.classes[c].actions[a], o.sigma, s.rewards));
            acc += o.flows[c][a] * w.back();
        }
        o.w_action.push_back(w);
        o.w_bar.push_back(acc / (s.classes[c].mass * s.rates.action));
    }
    o.j_eff = efficiency(o.sigma, s.rewards);
    o.j_f = fairness(o.w_bar);
    o.objective = combined_objective(obj, o.j_eff, o.j_f);
    return o;
}

// d/dx of x w(x)
inline double marginal_reward(const RewardFn& w, double x) { return w(x) + x * w.derivative(x); }

inline SystemOptimum solve_average_reward(const Scenario& s, const SystemOptimumOptions& opt) {
    const std::size_t C = s.classes.size();
    std::vector<std::vector<double>> f(C);
    for (std::size_t c = 0; c < C; ++c) {
        const auto n = s.classes[c].actions.size();
        f[c].assign(n, s.classes[c].mass * s.rates.action / static_cast<double>(n));
    }
    FlowVector sigma = sigma_from_action_flows(s, f);
    std::vector<double> delta(s.resource_count(), 0.0);

    auto grad = [&](std::size_t c, std::size_t a) {
        double g = 0.0;
        for (auto r : s.classes[c].actions[a].resources) g += marginal_reward(s.rewards[r], sigma[r]);
        return g;
    };

    double gap = 0.0, J = 0.0;
    std::size_t sweep = 0;
    for (; sweep < opt.max_sweeps; ++sweep) {
        // global duality gap at the current point
        gap = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            double best = -std::numeric_limits<double>::infinity(), lin = 0.0;
            for (std::size_t a = 0; a < f[c].size(); ++a) {
                const double g = grad(c, a);
                best = std::max(best, g);
                lin += f[c][a] * g;
            }
            gap += s.classes[c].mass * s.rates.action * best - lin;
        }
        J = efficiency(sigma, s.rewards);
        if (gap <= opt.tol * std::max(1.0, std::abs(J))) break;

        // one pairwise step per class: shift mass from the worst used action to the best one
        for (std::size_t c = 0; c < C; ++c) {
            std::size_t best = 0, worst = f[c].size();
            double gb = -std::numeric_limits<double>::infinity(), gw = std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < f[c].size(); ++a) {
                const double g = grad(c, a);
                if (g > gb) gb = g, best = a;
                if (f[c][a] > 0.0 && g < gw) gw = g, worst = a;
            }
            if (worst == f[c].size() || best == worst || gb <= gw) continue;
            const auto& rb = s.classes[c].actions[best].resources;
            const auto& rw = s.classes[c].actions[worst].resources;
            std::vector<std::size_t> touched;
            for (auto r : rb) delta[r] += 1.0, touched.push_back(r);
            for (auto r : rw) delta[r] -= 1.0, touched.push_back(r);
            auto slope = [&](double step) {
                double d = 0.0;
                for (auto r : touched)
                    if (delta[r] != 0.0) d += delta[r] * marginal_reward(s.rewards[r], sigma[r] + step * delta[r]);
                return d;
            };
            // directional derivative counts shared resources once per occurrence in touched
            std::sort(touched.begin(), touched.end());
            touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
            const double hi = f[c][worst];
            double step = hi;
            if (slope(hi) < 0.0) {
                double lo = 0.0, up = hi;
                for (int it = 0; it < 100 && up - lo > 1e-17 * std::max(1.0, hi); ++it) {
                    const double mid = 0.5 * (lo + up);
                    (slope(mid) > 0.0 ? lo : up) = mid;
                }
                step = 0.5 * (lo + up);
            }
            f[c][best] += step;
            f[c][worst] -= step;
            if (step == hi) f[c][worst] = 0.0;
            for (auto r : touched) {
                sigma[r] += step * delta[r];
                delta[r] = 0.0;
            }
        }
        if (sweep % 64 == 63) sigma = sigma_from_action_flows(s, f);  // refresh accumulated rounding
    }
    if (gap > 1e-6 * std::max(1.0, std::abs(J)))
        throw DesignError("system optimum did not converge: relative gap " + std::to_string(gap));
    auto o = finish_optimum(s, ObjectiveSpec::average_reward(), f);
    o.residual = gap / std::max(1.0, std::abs(J));
    o.iterations = sweep;
    return o;
}

// Smoothed min-class objective: -T log sum_c exp(-w̄_c / T) + gamma J_eff, and its gradient.
struct SmoothEval {
    double value = 0.0;
    std::vector<std::vector<double>> grad;
};

inline SmoothEval smooth_min_class(const Scenario& s, double gamma, double T,
                                   const std::vector<std::vector<double>>& f) {
    const std::size_t C = s.classes.size(), R = s.resource_count();
    auto sigma = sigma_from_action_flows(s, f);
    std::vector<double> w(R), dw(R);
    for (std::size_t r = 0; r < R; ++r) {
        w[r] = s.rewards[r](sigma[r]);
        dw[r] = s.rewards[r].derivative(sigma[r]);
    }
    std::vector<std::vector<double>> phi(C, std::vector<double>(R, 0.0));  // class flow on r
    std::vector<double> wbar(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t a = 0; a < f[c].size(); ++a)
            for (auto r : s.classes[c].actions[a].resources) phi[c][r] += f[c][a];
        double acc = 0.0;
        for (std::size_t r = 0; r < R; ++r) acc += phi[c][r] * w[r];
        wbar[c] = acc / (s.classes[c].mass * s.rates.action);
    }
    const double lo = *std::min_element(wbar.begin(), wbar.end());
    std::vector<double> pi(C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += (pi[c] = std::exp(-(wbar[c] - lo) / T));
    for (double& p : pi) p /= z;
    SmoothEval ev;
    ev.value = lo - T * std::log(z) + gamma * efficiency(sigma, s.rewards);
    // gradient of sum_c pi_c w̄_c plus gamma * marginal rewards
    std::vector<double> mix(R, 0.0);  // sum_c pi_c phi_c,r / (m_c Rd)
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t r = 0; r < R; ++r) mix[r] += pi[c] * phi[c][r] / (s.classes[c].mass * s.rates.action);
    ev.grad.resize(C);
    for (std::size_t c = 0; c < C; ++c) {
        const double own = pi[c] / (s.classes[c].mass * s.rates.action);
        for (std::size_t a = 0; a < f[c].size(); ++a) {
            double g = 0.0;
            for (auto r : s.classes[c].actions[a].resources)
                g += own * w[r] + dw[r] * mix[r] + gamma * (w[r] + sigma[r] * dw[r]);
            ev.grad[c].push_back(g);
        }
    }
    return ev;
}

inline SystemOptimum solve_min_class(const Scenario& s, double gamma, const SystemOptimumOptions& opt) {
    const std::size_t C = s.classes.size();
    const ObjectiveSpec obj = ObjectiveSpec::min_class(gamma);
    std::mt19937_64 rng(opt.seed);
    std::exponential_distribution<double> ex(1.0);
    SystemOptimum best;
    best.objective = -std::numeric_limits<double>::infinity();
    double scale = 0.0;
    for (const auto& w : s.rewards) scale = std::max(scale, std::abs(w(0.0)));
    scale = std::max(scale, 1e-3);

    for (std::size_t start = 0; start < std::max<std::size_t>(opt.multistarts, 1); ++start) {
        std::vector<std::vector<double>> f(C);
        for (std::size_t c = 0; c < C; ++c) {
            const double m = s.classes[c].mass * s.rates.action;
            const auto n = s.classes[c].actions.size();
            if (start == 0) {
                f[c].assign(n, m / static_cast<double>(n));
            } else {
                double tot = 0.0;
                for (std::size_t a = 0; a < n; ++a) tot += (f[c].emplace_back(ex(rng)), f[c].back());
                for (double& v : f[c]) v *= m / tot;
            }
        }
        double step = 1.0, resid = 0.0;
        std::size_t iters = 0;
        for (double T = 0.1 * scale; T >= 1e-7 * scale; T *= 0.5) {
            for (std::size_t it = 0; it < 2000; ++it, ++iters) {
                auto ev = smooth_min_class(s, gamma, T, f);
                std::vector<std::vector<double>> fn(C);
                double sq = 0.0, lin = 0.0, val = 0.0;
                for (int bt = 0; bt < 60; ++bt) {
                    sq = lin = 0.0;
                    for (std::size_t c = 0; c < C; ++c) {
                        std::vector<double> y(f[c]);
                        for (std::size_t a = 0; a < y.size(); ++a) y[a] += step * ev.grad[c][a];
                        fn[c] = project_simplex(y, s.classes[c].mass * s.rates.action);
                        for (std::size_t a = 0; a < y.size(); ++a) {
                            const double d = fn[c][a] - f[c][a];
                            sq += d * d;
                            lin += ev.grad[c][a] * d;
                        }
                    }
                    val = smooth_min_class(s, gamma, T, fn).value;
                    if (val >= ev.value + lin - sq / (2.0 * step) - 1e-15 * std::abs(ev.value)) break;
                    step *= 0.5;
                }
                f.swap(fn);
                resid = std::sqrt(sq) / step;
                step *= 1.5;
                if (resid <= 1e-10 * scale) break;
            }
        }
        auto o = finish_optimum(s, obj, f);
        o.residual = resid;
        o.iterations = iters;
        if (o.objective > best.objective) best = o;
    }
    return best;
}

}  // namespace detail

inline SystemOptimum solve_system_optimum(const Scenario& s, const ObjectiveSpec& obj,
                                          const SystemOptimumOptions& opt = {}) {
    if (s.classes.empty()) throw DesignError("scenario has no classes");
    for (const auto& c : s.classes)
        if (c.actions.empty()) throw DesignError("class " + c.name + " has no actions");
    auto o = obj.kind == ObjectiveSpec::Kind::AverageReward ? detail::solve_average_reward(s, opt)
                                                             : detail::solve_min_class(s, obj.gamma, opt);
    if (opt.prune <= 0.0) return o;
    // Fold residual flows (below prune * m Rd) into the class's heaviest action.
    auto f = o.flows;
    bool changed = false;
    for (std::size_t c = 0; c < f.size(); ++c) {
        const double cut = opt.prune * s.classes[c].mass * s.rates.action;
        const auto top = static_cast<std::size_t>(std::max_element(f[c].begin(), f[c].end()) - f[c].begin());
        for (std::size_t a = 0; a < f[c].size(); ++a)
            if (a != top && f[c][a] > 0.0 && f[c][a] < cut) {
                f[c][top] += f[c][a];
                f[c][a] = 0.0;
                changed = true;
            }
    }
    if (!changed) return o;
    auto p = detail::finish_optimum(s, obj, std::move(f));
    p.residual = o.residual;
    p.iterations = o.iterations;
    return p;
}

using ContinuousTolls = std::vector<std::vector<double>>;

// tau~ = Rno/Rd + alpha (w*_a - w̄*_c), used and unused actions alike
inline ContinuousTolls continuous_tolls(const SystemOptimum& opt, double alpha, double rno, double rd) {
    if (!(alpha > 0.0)) throw DesignError("alpha must be positive");
    ContinuousTolls t(opt.flows.size());
    for (std::size_t c = 0; c < opt.flows.size(); ++c)
        for (std::size_t a = 0; a < opt.flows[c].size(); ++a)
            t[c].push_back(rno / rd + alpha * (opt.w_action[c][a] - opt.w_bar[c]));
    return t;
}

struct LpCertificate {
    double y_t = 0.0;
    double y_m = 0.0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double slackness_residual = 0.0;
    double duality_gap = 0.0;
    double max_residual() const {
        return std::max({primal_residual, dual_residual, slackness_residual, duality_gap});
    }
};

inline constexpr double kCertificateTol = 1e-8;

// Checks f* against the class LP  max sum w*_a nu_a  s.t.  sum tau~_a nu_a <= m Rno,
// sum nu_a = m Rd, nu >= 0, using the closed-form dual point (1/alpha, w̄* - Rno/(alpha Rd)).
inline std::vector<LpCertificate> verify_class_lp(const Scenario& s, const SystemOptimum& opt,
                                                  const ContinuousTolls& tau, double alpha,
                                                  double tol = kCertificateTol) {
    const double rno = s.rates.noise, rd = s.rates.action;
    std::vector<LpCertificate> out;
    std::ostringstream failures;
    for (std::size_t c = 0; c < opt.flows.size(); ++c) {
        const double m = s.classes[c].mass;
        const auto& f = opt.flows[c];
        const auto& w = opt.w_action[c];
        LpCertificate lp;
        lp.y_t = 1.0 / alpha;
        lp.y_m = -rno / (alpha * rd) + opt.w_bar[c];
        double sum_f = 0.0, toll_use = 0.0, primal_obj = 0.0;
        for (std::size_t a = 0; a < f.size(); ++a) {
            sum_f += f[a];
            toll_use += tau[c][a] * f[a];
            primal_obj += w[a] * f[a];
            lp.primal_residual = std::max(lp.primal_residual, -f[a]);
            const double reduced = tau[c][a] * lp.y_t + lp.y_m - w[a];
            lp.dual_residual = std::max(lp.dual_residual, -reduced);
            lp.slackness_residual = std::max(lp.slackness_residual, std::abs(f[a] * reduced));
        }
        lp.primal_residual = std::max({lp.primal_residual, std::abs(sum_f - m * rd), toll_use - m * rno});
        lp.dual_residual = std::max(lp.dual_residual, -lp.y_t);
        lp.slackness_residual = std::max(lp.slackness_residual, std::abs(lp.y_t * (m * rno - toll_use)));
        lp.duality_gap = std::abs(primal_obj - (m * rno * lp.y_t + m * rd * lp.y_m));
        auto check = [&](double v, const char* what) {
            if (v > tol) failures << "class " << s.classes[c].name << ": " << what << " residual " << v << "; ";
        };
        check(lp.primal_residual, "primal feasibility");
        check(lp.dual_residual, "dual feasibility");
        check(lp.slackness_residual, "complementary slackness");
        check(lp.duality_gap, "duality gap");
        out.push_back(lp);
    }
    if (!failures.str().empty()) throw CertificationError("class LP certificate failed: " + failures.str());
    return out;
}

inline TollMap discretize_tolls(const ContinuousTolls& tau) {
    TollMap t(tau.size());
    for (std::size_t c = 0; c < tau.size(); ++c) {
        for (double v : tau[c]) t[c].push_back(static_cast<int>(round_half_away(v)));
        if (!t[c].empty() && *std::min_element(t[c].begin(), t[c].end()) > 0)
            throw DesignError("rounded tolls of class " + std::to_string(c) +
                              " are all positive (every class needs a free or earning action); increase alpha");
    }
    return t;
}

struct AlphaSelection {
    double alpha = 1.0;
    int k_max = 1;
    double delta_min = 0.0;  // 0 when every used action earns the class average
    int max_toll = 0;
    double tail_bound = 0.0;
    ContinuousTolls continuous;
    TollMap tolls;
};

inline bool is_used(const SystemOptimum& opt, const Scenario& s, std::size_t c, std::size_t a) {
    return opt.flows[c][a] > 1e-10 * s.classes[c].mass * s.rates.action;
}

// alpha = max(1, 0.5 / (rho * Delta_min)); k_max is the smallest multiple of the largest toll
// meeting the tail tolerance and at least ten times the largest |toll|.
inline AlphaSelection select_alpha_kbar(const Scenario& s, const SystemOptimum& opt, double rho,
                                        double tail_tol, double gap_tol = 1e-6) {
    if (!(rho > 0.0 && rho < 1.0)) throw DesignError("rho must lie in (0,1)");
    if (!(tail_tol > 0.0 && tail_tol < 1.0)) throw DesignError("tail_tol must lie in (0,1)");
    AlphaSelection sel;
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < opt.flows.size(); ++c)
        for (std::size_t a = 0; a < opt.flows[c].size(); ++a) {
            if (!is_used(opt, s, c, a)) continue;
            const double g = std::abs(opt.w_action[c][a] - opt.w_bar[c]);
            if (g > gap_tol) dmin = std::min(dmin, g);
        }
    sel.delta_min = std::isfinite(dmin) ? dmin : 0.0;
    sel.alpha = sel.delta_min > 0.0 ? std::max(1.0, 0.5 / (rho * sel.delta_min)) : 1.0;
    sel.continuous = continuous_tolls(opt, sel.alpha, s.rates.noise, s.rates.action);
    sel.tolls = discretize_tolls(sel.continuous);
    int max_abs = 0;
    sel.max_toll = 0;
    for (const auto& row : sel.tolls)
        for (int t : row) {
            sel.max_toll = std::max(sel.max_toll, t);
            max_abs = std::max(max_abs, std::abs(t));
        }
    const int floor_k = std::max(1, 10 * max_abs);
    if (sel.max_toll <= 0) {
        sel.k_max = floor_k;
        sel.tail_bound = 0.0;
        return sel;
    }
    const double ratio = s.rates.noise / s.rates.action;
    for (int k = sel.max_toll;; k += sel.max_toll) {
        const double b = tail_mass_bound(sel.max_toll, k, ratio);
        if (k >= floor_k && b <= tail_tol) {
            sel.k_max = k;
            sel.tail_bound = b;
            break;
        }
    }
    return sel;
}

struct FlowComponent {
    std::size_t p = 0;
    std::size_t q = 0;  // equals p for a singleton
    double g_p = 0.0;
    double g_q = 0.0;
    bool singleton() const { return p == q; }
    double total() const { return singleton() ? g_p : g_p + g_q; }
};

struct ClassDecomposition {
    std::vector<FlowComponent> components;
    bool zero_toll_case = false;
    bool pair_cap_hit = false;
    std::size_t support_violations = 0;  // (a) components not supported on exactly two actions
    double drift_residual = 0.0;         // (b) per-component token balance
    double mass_residual = 0.0;          // (c) total flow versus m Rd
    double flow_residual = 0.0;          // (d) per-action mismatch with f*
    double payoff_residual = 0.0;        // (e) per-component payoff mismatch
};

using FlowDecomposition = std::vector<ClassDecomposition>;

struct DecompositionOptions {
    std::size_t pair_cap = 64;
    double gap_tol = 1e-6;
};

namespace detail {

// min ||V s - f||^2 + ||D s||^2 over {s >= 0, sum s = mass}, accelerated projected gradient
inline std::vector<double> simplex_qp(const Eigen::MatrixXd& V, const Eigen::VectorXd& d,
                                      const Eigen::VectorXd& f, double mass) {
    const auto L = V.cols();
    Eigen::MatrixXd H = 2.0 * (V.transpose() * V);
    H.diagonal() += 2.0 * d.cwiseAbs2();
    Eigen::VectorXd b = -2.0 * V.transpose() * f;
    const double lip = std::max(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H).eigenvalues().maxCoeff(), 1e-300);
    std::vector<double> s(static_cast<std::size_t>(L), mass / static_cast<double>(L)), y = s, prev = s;
    double t = 1.0;
    auto obj = [&](const std::vector<double>& x) {
        Eigen::Map<const Eigen::VectorXd> v(x.data(), L);
        return 0.5 * v.dot(H * v) + b.dot(v);
    };
    double last = obj(s);
    for (int it = 0; it < 200000; ++it) {
        Eigen::Map<const Eigen::VectorXd> yv(y.data(), L);
        Eigen::VectorXd g = H * yv + b;
        std::vector<double> z(static_cast<std::size_t>(L));
        for (Eigen::Index i = 0; i < L; ++i) z[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] - g(i) / lip;
        prev = s;
        s = project_simplex(z, mass);
        const double cur = obj(s);
        if (cur > last) {  // restart momentum
            t = 1.0;
            y = s;
            last = cur;
            continue;
        }
        const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        double change = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            y[i] = s[i] + (t - 1.0) / tn * (s[i] - prev[i]);
            change = std::max(change, std::abs(s[i] - prev[i]));
        }
        t = tn;
        last = cur;
        if (change <= 1e-16 * std::max(1.0, mass)) break;
    }
    return s;
}

}  // namespace detail

// Splits each class's optimal flow into components that single monotone policies can carry:
// zero-toll singletons, or (p, q) pairs with toll_p <= 0 < toll_q whose action mix balances
// the token budget.
inline FlowDecomposition decompose_flows(const Scenario& s, const SystemOptimum& opt, const TollMap& tolls,
                                         const DecompositionOptions& o = {}) {
    const double rd = s.rates.action, ratio = s.rates.noise / s.rates.action;
    FlowDecomposition out;
    for (std::size_t c = 0; c < opt.flows.size(); ++c) {
        const auto& f = opt.flows[c];
        const auto& w = opt.w_action[c];
        const double wb = opt.w_bar[c], mass = s.classes[c].mass * rd;
        const std::size_t A = f.size();
        ClassDecomposition dec;

        bool all_used_zero = true;
        for (std::size_t a = 0; a < A; ++a)
            if (is_used(opt, s, c, a) && tolls[c][a] != 0) all_used_zero = false;

        if (all_used_zero) {
            dec.zero_toll_case = true;
            for (std::size_t a = 0; a < A; ++a)
                if (is_used(opt, s, c, a)) dec.components.push_back({a, a, f[a], 0.0});
        } else {
            struct Pair {
                std::size_t p, q;
                double vp, vq;
            };
            std::vector<Pair> pairs;
            for (std::size_t p = 0; p < A; ++p)
                for (std::size_t q = 0; q < A; ++q) {
                    const int tp = tolls[c][p], tq = tolls[c][q];
                    if (!(tp <= 0 && tq > 0)) continue;
                    const double span = static_cast<double>(tq - tp);
                    pairs.push_back({p, q, (tq - ratio) / span, (ratio - tp) / span});
                }
            if (pairs.empty())
                throw DesignError("class " + s.classes[c].name +
                                  ": no action pair with toll_p <= 0 < toll_q; increase alpha");
            if (pairs.size() > o.pair_cap) {
                std::stable_sort(pairs.begin(), pairs.end(), [&](const Pair& x, const Pair& y) {
                    return f[x.p] + f[x.q] > f[y.p] + f[y.q];
                });
                pairs.resize(o.pair_cap);
                dec.pair_cap_hit = true;
            }
            const auto L = static_cast<Eigen::Index>(pairs.size());
            Eigen::MatrixXd V = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(A), L);
            Eigen::VectorXd d(L), fv(static_cast<Eigen::Index>(A));
            for (std::size_t a = 0; a < A; ++a) fv(static_cast<Eigen::Index>(a)) = f[a];
            for (Eigen::Index i = 0; i < L; ++i) {
                const auto& pr = pairs[static_cast<std::size_t>(i)];
                V(static_cast<Eigen::Index>(pr.p), i) = pr.vp;
                V(static_cast<Eigen::Index>(pr.q), i) = pr.vq;
                d(i) = (w[pr.p] - wb) * pr.vp + (w[pr.q] - wb) * pr.vq;
            }
            auto sol = detail::simplex_qp(V, d, fv, mass);
            for (Eigen::Index i = 0; i < L; ++i) {
                const double si = sol[static_cast<std::size_t>(i)];
                if (si <= 1e-12 * mass) continue;
                const auto& pr = pairs[static_cast<std::size_t>(i)];
                dec.components.push_back({pr.p, pr.q, si * pr.vp, si * pr.vq});
            }
        }

        std::vector<double> cover(A, 0.0);
        double total = 0.0;
        for (const auto& comp : dec.components) {
            cover[comp.p] += comp.g_p;
            total += comp.total();
            if (comp.singleton()) {
                if (tolls[c][comp.p] != 0) ++dec.support_violations;
                continue;
            }
            cover[comp.q] += comp.g_q;
            if (!(comp.g_p > 0.0 && comp.g_q > 0.0)) ++dec.support_violations;
            const double bal = ratio * comp.total() - tolls[c][comp.p] * comp.g_p - tolls[c][comp.q] * comp.g_q;
            dec.drift_residual = std::max(dec.drift_residual, std::abs(bal));
            dec.payoff_residual =
                std::max(dec.payoff_residual, std::abs((w[comp.p] - wb) * comp.g_p + (w[comp.q] - wb) * comp.g_q));
        }
        dec.mass_residual = std::abs(total - mass);
        for (std::size_t a = 0; a < A; ++a) dec.flow_residual = std::max(dec.flow_residual, std::abs(cover[a] - f[a]));
        out.push_back(std::move(dec));
    }
    return out;
}

struct CandidateMsne {
    PolicyMass x;
    StatePolicyDistribution mu;
    MsneCertificate certificate;
    double flow_match = 0.0;  // max_a |f*_a - Rd * mass playing a|
};

// Threshold policy per pair component, constant policy per singleton, lifted through eta.
inline CandidateMsne construct_optimal_msne(const GameModel& m, const FlowDecomposition& dec,
                                            const SystemOptimum& opt) {
    const auto& s = m.scenario();
    const double rd = s.rates.action;
    CandidateMsne cand;
    cand.x.resize(m.classes());
    for (std::size_t c = 0; c < m.classes(); ++c) {
        cand.x[c].assign(m.policies(c), 0.0);
        const auto& fam = m.table(c).family;
        for (const auto& comp : dec[c].components) {
            Policy u = comp.singleton() ? constant_policy(c, comp.p, m.k_max())
                                        : threshold_policy(c, comp.p, comp.q, s.tolls[c], m.k_max());
            const auto idx = fam.index_of(u);
            if (idx == fam.size()) throw DesignError("component policy missing from the enumerated family");
            cand.x[c][idx] += comp.total() / rd;
        }
        // guard rounding in the decomposition's total mass
        const double tot = std::accumulate(cand.x[c].begin(), cand.x[c].end(), 0.0);
        if (tot > 0.0)
            for (double& v : cand.x[c]) v *= m.mass(c) / tot;
    }
    cand.mu = steady_state_lift(m, cand.x);
    cand.certificate = msne_certificate(m, cand.mu);
    auto am = action_mass(m, cand.mu);
    for (std::size_t c = 0; c < m.classes(); ++c)
        for (std::size_t a = 0; a < am[c].size(); ++a)
            cand.flow_match = std::max(cand.flow_match, std::abs(opt.flows[c][a] - rd * am[c][a]));
    return cand;
}

struct DesignOptions {
    double rho = 0.05;
    double tail_tol = 1e-4;
    double gap_tol = 1e-6;
    std::size_t pair_cap = 64;
    SystemOptimumOptions solver;
};

struct DesignResult {
    ObjectiveSpec objective;
    SystemOptimum optimum;
    AlphaSelection selection;
    std::vector<LpCertificate> lp;
    FlowDecomposition decomposition;
    double toll_identity_residual = 0.0;  // max_c |sum_a f*_a tau~_a - m Rno|
    Scenario designed;                     // input scenario with integer tolls and k_max applied
};

inline DesignResult design_tolls(const Scenario& s, const ObjectiveSpec& obj, const DesignOptions& o = {}) {
    DesignResult r;
    r.objective = obj;
    r.optimum = solve_system_optimum(s, obj, o.solver);
    r.selection = select_alpha_kbar(s, r.optimum, o.rho, o.tail_tol, o.gap_tol);
    r.lp = verify_class_lp(s, r.optimum, r.selection.continuous, r.selection.alpha);
    for (std::size_t c = 0; c < s.classes.size(); ++c) {
        double acc = 0.0;
        for (std::size_t a = 0; a < r.optimum.flows[c].size(); ++a)
            acc += r.optimum.flows[c][a] * r.selection.continuous[c][a];
        r.toll_identity_residual = std::max(r.toll_identity_residual, std::abs(acc - s.classes[c].mass * s.rates.noise));
    }
    r.decomposition = decompose_flows(s, r.optimum, r.selection.tolls, {o.pair_cap, o.gap_tol});
    r.designed = s;
    r.designed.tolls = r.selection.tolls;
    r.designed.k_max = r.selection.k_max;
    return r;
}

}  // namespace tokenecon
