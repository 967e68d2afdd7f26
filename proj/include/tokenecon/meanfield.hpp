#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tokenecon/model.hpp"
#include "tokenecon/numerics.hpp"
#include "tokenecon/policy.hpp"
#include "tokenecon/wallet.hpp"

namespace tokenecon {

class IntegrationError : public std::runtime_error {
public:
    IntegrationError(const std::string& what, double t) : std::runtime_error(what), time(t) {}
    double time;
};

// maximal block of token counts [begin, end) on which a policy plays one action
struct ActionRun {
    std::size_t action = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
};

struct ClassTables {
    PolicyFamily family;
    std::vector<std::vector<ActionRun>> runs;  // [u]
    std::vector<WalletChain> chains;
    std::vector<std::vector<double>> eta;  // [u][k]
    std::vector<std::vector<std::pair<std::size_t, double>>> freq;  // [u] -> (action, stationary share)
};

// Scenario plus everything derived from its tolls: policy families, chains and their
// stationary distributions. Immutable once built.
//
// A StatePolicyDistribution is a flat vector; class c, policy u, token count k lives at
// offset(c) + u * states() + k.
class GameModel {
public:
    explicit GameModel(Scenario s, std::size_t max_distinct_actions = 2,
                       std::size_t policy_limit = kPolicyHardLimit)
        : s_(std::move(s)) {
        if (s_.tolls.empty()) s_.tolls = zero_tolls(s_);
        if (s_.tolls.size() != s_.classes.size()) throw ModelError("toll map does not match classes");
        if (s_.k_max < 1) throw ModelError("k_max must be at least 1");
        states_ = static_cast<std::size_t>(s_.k_max) + 1;
        std::size_t total = 0;
        for (std::size_t c = 0; c < s_.classes.size(); ++c) {
            const auto& tolls = s_.tolls[c];
            ClassTables t;
            t.family = enumerate_policies(c, tolls, s_.k_max, max_distinct_actions,
                                          policy_limit > total ? policy_limit - total : 0);
            total += t.family.size();
            for (const auto& u : t.family.policies) {
                std::vector<ActionRun> rs;
                for (std::size_t k = 0; k < u.action_at.size(); ++k) {
                    if (rs.empty() || rs.back().action != u.action_at[k]) rs.push_back({u.action_at[k], k, k});
                    rs.back().end = k + 1;
                }
                t.runs.push_back(std::move(rs));
                t.chains.push_back(build_chain(u, tolls, s_.rates));
                t.eta.push_back(stationary_distribution(t.chains.back()));
                auto g = action_frequencies(u, t.eta.back(), tolls.size());
                std::vector<std::pair<std::size_t, double>> sp;
                for (std::size_t a = 0; a < g.size(); ++a)
                    if (g[a] > 0.0) sp.emplace_back(a, g[a]);
                t.freq.push_back(std::move(sp));
            }
            offsets_.push_back(size_);
            size_ += t.family.size() * states_;
            tables_.push_back(std::move(t));
        }
    }

    const Scenario& scenario() const { return s_; }
    const Rates& rates() const { return s_.rates; }
    std::size_t classes() const { return tables_.size(); }
    const ClassTables& table(std::size_t c) const { return tables_[c]; }
    std::size_t policies(std::size_t c) const { return tables_[c].family.size(); }
    std::size_t actions(std::size_t c) const { return s_.classes[c].actions.size(); }
    std::size_t states() const { return states_; }
    int k_max() const { return s_.k_max; }
    double mass(std::size_t c) const { return s_.classes[c].mass; }
    std::size_t offset(std::size_t c) const { return offsets_[c]; }
    std::size_t index(std::size_t c, std::size_t u, std::size_t k) const {
        return offsets_[c] + u * states_ + k;
    }
    std::size_t size() const { return size_; }

private:
    Scenario s_;
    std::vector<ClassTables> tables_;
    std::vector<std::size_t> offsets_;
    std::size_t states_ = 0;
    std::size_t size_ = 0;
};

using StatePolicyDistribution = std::vector<double>;
using PolicyMass = std::vector<std::vector<double>>;     // x[c][u]
using PayoffVector = std::vector<std::vector<double>>;   // F[c][u]
using ActionTable = std::vector<std::vector<double>>;    // [c][a]

inline void check_shape(const GameModel& m, const StatePolicyDistribution& mu) {
    if (mu.size() != m.size())
        throw ModelError("distribution has " + std::to_string(mu.size()) + " cells, model expects " +
                         std::to_string(m.size()));
}

// mass currently playing each action: sum over (k,u) with u(k) = a
inline ActionTable action_mass(const GameModel& m, const StatePolicyDistribution& mu) {
    check_shape(m, mu);
    ActionTable out(m.classes());
    for (std::size_t c = 0; c < m.classes(); ++c) {
        out[c].assign(m.actions(c), 0.0);
        const auto& runs = m.table(c).runs;
        for (std::size_t u = 0; u < runs.size(); ++u) {
            const double* row = &mu[m.index(c, u, 0)];
            for (const auto& r : runs[u]) out[c][r.action] += std::accumulate(row + r.begin, row + r.end, 0.0);
        }
    }
    return out;
}

inline FlowVector sigma_from_distribution(const GameModel& m, const StatePolicyDistribution& mu) {
    auto am = action_mass(m, mu);
    for (auto& row : am)
        for (double& v : row) v *= m.rates().action;
    return sigma_from_action_flows(m.scenario(), am);
}

inline ActionTable action_rewards(const GameModel& m, const FlowVector& sigma) {
    ActionTable w(m.classes());
    for (std::size_t c = 0; c < m.classes(); ++c) {
        for (const auto& a : m.scenario().classes[c].actions)
            w[c].push_back(action_reward(a, sigma, m.scenario().rewards));
    }
    return w;
}

inline PayoffVector payoffs_from_sigma(const GameModel& m, const FlowVector& sigma) {
    auto w = action_rewards(m, sigma);
    PayoffVector F(m.classes());
    for (std::size_t c = 0; c < m.classes(); ++c) {
        const auto& fr = m.table(c).freq;
        F[c].resize(fr.size());
        for (std::size_t u = 0; u < fr.size(); ++u) {
            double v = 0.0;
            for (auto [a, g] : fr[u]) v += g * w[c][a];
            F[c][u] = v;
        }
    }
    return F;
}

inline PayoffVector payoff_map(const GameModel& m, const StatePolicyDistribution& mu) {
    return payoffs_from_sigma(m, sigma_from_distribution(m, mu));
}

inline PolicyMass policy_marginals(const GameModel& m, const StatePolicyDistribution& mu) {
    check_shape(m, mu);
    PolicyMass x(m.classes());
    for (std::size_t c = 0; c < m.classes(); ++c) {
        x[c].assign(m.policies(c), 0.0);
        for (std::size_t u = 0; u < m.policies(c); ++u) {
            const double* row = &mu[m.index(c, u, 0)];
            x[c][u] = std::accumulate(row, row + m.states(), 0.0);
        }
    }
    return x;
}

inline std::vector<double> class_masses(const GameModel& m, const StatePolicyDistribution& mu) {
    auto x = policy_marginals(m, mu);
    std::vector<double> out;
    for (const auto& r : x) out.push_back(std::accumulate(r.begin(), r.end(), 0.0));
    return out;
}

// w̄_c: average single-stage reward over the action events of class c
inline std::vector<double> class_average_rewards(const GameModel& m, const StatePolicyDistribution& mu) {
    auto am = action_mass(m, mu);
    auto w = action_rewards(m, sigma_from_distribution(m, mu));
    std::vector<double> out(m.classes(), 0.0);
    for (std::size_t c = 0; c < m.classes(); ++c) {
        double tot = 0.0, acc = 0.0;
        for (std::size_t a = 0; a < am[c].size(); ++a) {
            acc += am[c][a] * w[c][a];
            tot += am[c][a];
        }
        out[c] = tot > 0.0 ? acc / tot : 0.0;
    }
    return out;
}

struct RevisionProtocolSpec {
    enum class Kind { Imitative, PairwiseComparison };
    Kind kind = Kind::PairwiseComparison;
    std::vector<double> kappa;  // per class
    double revision_rate = 0.0;
};

inline std::string to_string(RevisionProtocolSpec::Kind k) {
    return k == RevisionProtocolSpec::Kind::Imitative ? "imitative" : "pairwise";
}

inline RevisionProtocolSpec::Kind parse_protocol(const std::string& s) {
    if (s == "imitative") return RevisionProtocolSpec::Kind::Imitative;
    if (s == "pairwise" || s == "pairwise-comparison" || s == "smith")
        return RevisionProtocolSpec::Kind::PairwiseComparison;
    throw ModelError("unknown revision protocol '" + s + "'");
}

// Upper bound on max_{u,v} F_v - F_u over all admissible flows. Policy payoffs are convex
// combinations of action rewards, so the largest action-reward gap bounds them; for each pair
// of actions the resources they do not share are evaluated at zero and at peak flow.
inline double payoff_range_bound(const Scenario& s, std::size_t c) {
    const auto& acts = s.classes[c].actions;
    std::vector<double> peak(s.resource_count(), 0.0);
    for (const auto& cls : s.classes) {
        std::vector<char> uses(s.resource_count(), 0);
        for (const auto& a : cls.actions)
            for (auto r : a.resources) uses[r] = 1;
        for (std::size_t r = 0; r < uses.size(); ++r)
            if (uses[r]) peak[r] += s.rates.action * cls.mass;
    }
    double best = 0.0;
    for (const auto& a : acts)
        for (const auto& b : acts) {
            if (&a == &b) continue;
            double hi = 0.0;
            for (auto r : a.resources)
                if (!std::binary_search(b.resources.begin(), b.resources.end(), r)) hi += s.rewards[r](0.0);
            for (auto r : b.resources)
                if (!std::binary_search(a.resources.begin(), a.resources.end(), r)) hi -= s.rewards[r](peak[r]);
            best = std::max(best, hi);
        }
    return best;
}

// kappa = Rr / ((n - 1) * payoff range) keeps every row of revision rates below Rr.
inline RevisionProtocolSpec make_protocol(const GameModel& m, RevisionProtocolSpec::Kind kind) {
    RevisionProtocolSpec spec;
    spec.kind = kind;
    spec.revision_rate = m.rates().revision;
    for (std::size_t c = 0; c < m.classes(); ++c) {
        const double n = static_cast<double>(m.policies(c));
        const double range = payoff_range_bound(m.scenario(), c);
        spec.kappa.push_back(n > 1.0 && range > 0.0 ? m.rates().revision / ((n - 1.0) * range) : 0.0);
    }
    return spec;
}

// rho[u][v]: rate at which a class-c agent on u switches to v
inline Eigen::MatrixXd revision_rates(const RevisionProtocolSpec& spec, std::size_t c,
                                      const std::vector<double>& F, const std::vector<double>& x) {
    const auto n = static_cast<Eigen::Index>(F.size());
    const double mass = std::accumulate(x.begin(), x.end(), 0.0);
    Eigen::MatrixXd rho = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index u = 0; u < n; ++u)
        for (Eigen::Index v = 0; v < n; ++v) {
            if (u == v) continue;
            double r = spec.kappa[c] * std::max(0.0, F[static_cast<std::size_t>(v)] - F[static_cast<std::size_t>(u)]);
            if (spec.kind == RevisionProtocolSpec::Kind::Imitative)
                r *= mass > 0.0 ? x[static_cast<std::size_t>(v)] / mass : 0.0;
            rho(u, v) = r;
        }
    return rho;
}

// Wallet relaxation part of the drift: (Rd+Rno) (P^T mu_u - mu_u) per policy. Within a run of
// constant action the action kernel is a shift by the toll, capped at k_max.
inline void add_chain_drift(const GameModel& m, const StatePolicyDistribution& mu,
                            StatePolicyDistribution& out) {
    const double rd = m.rates().action, rn = m.rates().noise, j = rd + rn;
    const std::size_t K = m.states(), top = K - 1;
    for (std::size_t c = 0; c < m.classes(); ++c) {
        const auto& runs = m.table(c).runs;
        const auto& tolls = m.scenario().tolls[c];
        for (std::size_t u = 0; u < runs.size(); ++u) {
            const double* __restrict v = &mu[m.index(c, u, 0)];
            double* __restrict o = &out[m.index(c, u, 0)];
            for (std::size_t k = 0; k < K; ++k) o[k] -= j * v[k];
            for (std::size_t k = 0; k < top; ++k) o[k + 1] += rn * v[k];
            o[top] += rn * v[top];
            for (const auto& r : runs[u]) {
                const long tau = tolls[r.action];
                // k - tau < top  <=>  k < top + tau
                const long lim = std::clamp<long>(static_cast<long>(top) + tau, static_cast<long>(r.begin),
                                                  static_cast<long>(r.end));
                for (auto k = static_cast<long>(r.begin); k < lim; ++k) o[k - tau] += rd * v[k];
                double capped = 0.0;
                for (auto k = static_cast<std::size_t>(lim); k < r.end; ++k) capped += v[k];
                o[top] += rd * capped;
            }
        }
    }
}

// Policy revision part. Uses the sorted-payoff prefix sums so one class costs O(n log n + n K).
inline void add_revision_drift(const GameModel& m, const RevisionProtocolSpec& spec,
                               const StatePolicyDistribution& mu, const PayoffVector& F,
                               StatePolicyDistribution& out) {
    const std::size_t K = m.states();
    std::vector<double> s0(K), s1(K);
    for (std::size_t c = 0; c < m.classes(); ++c) {
        const std::size_t n = m.policies(c);
        const double kappa = spec.kappa[c];
        if (n < 2 || kappa == 0.0) continue;
        const auto& f = F[c];
        std::vector<double> x(n);
        for (std::size_t u = 0; u < n; ++u) {
            const double* row = &mu[m.index(c, u, 0)];
            x[u] = std::accumulate(row, row + K, 0.0);
        }
        const double mass = std::accumulate(x.begin(), x.end(), 0.0);
        if (!(mass > 0.0)) continue;
        std::vector<std::size_t> ord(n);
        std::iota(ord.begin(), ord.end(), 0);
        std::stable_sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) { return f[a] < f[b]; });

        const bool imitative = spec.kind == RevisionProtocolSpec::Kind::Imitative;
        // outflow rate of each policy from suffix sums over better policies
        std::vector<double> outrate(n, 0.0);
        double suf_f = 0.0, suf_w = 0.0, suf_wf = 0.0;
        for (std::size_t i = n; i-- > 0;) {
            const std::size_t u = ord[i];
            if (imitative)
                outrate[u] = kappa * (suf_wf - f[u] * suf_w) / mass;
            else
                outrate[u] = kappa * (suf_f - f[u] * static_cast<double>(n - 1 - i));
            suf_f += f[u];
            suf_w += x[u];
            suf_wf += x[u] * f[u];
        }
        std::fill(s0.begin(), s0.end(), 0.0);
        std::fill(s1.begin(), s1.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t u = ord[i];
            const std::size_t base = m.index(c, u, 0);
            const double gain = imitative ? kappa * x[u] / mass : kappa;
            const double fu = f[u], ru = outrate[u];
            const double* __restrict v = &mu[base];
            double* __restrict o = &out[base];
            double* __restrict a0 = s0.data();
            double* __restrict a1 = s1.data();
            for (std::size_t k = 0; k < K; ++k) {
                o[k] += gain * (fu * a0[k] - a1[k]) - ru * v[k];
                a0[k] += v[k];
                a1[k] += v[k] * fu;
            }
        }
    }
}

inline void drift(const GameModel& m, const RevisionProtocolSpec& spec, const StatePolicyDistribution& mu,
                  StatePolicyDistribution& out) {
    check_shape(m, mu);
    out.assign(mu.size(), 0.0);
    add_chain_drift(m, mu, out);
    add_revision_drift(m, spec, mu, payoff_map(m, mu), out);
}

inline StatePolicyDistribution drift(const GameModel& m, const RevisionProtocolSpec& spec,
                                     const StatePolicyDistribution& mu) {
    StatePolicyDistribution out;
    drift(m, spec, mu, out);
    return out;
}

inline StatePolicyDistribution steady_state_lift(const GameModel& m, const PolicyMass& x) {
    StatePolicyDistribution mu(m.size(), 0.0);
    for (std::size_t c = 0; c < m.classes(); ++c) {
        if (x[c].size() != m.policies(c)) throw ModelError("policy mass has wrong length");
        for (std::size_t u = 0; u < m.policies(c); ++u) {
            const auto& eta = m.table(c).eta[u];
            for (std::size_t k = 0; k < m.states(); ++k) mu[m.index(c, u, k)] = x[c][u] * eta[k];
        }
    }
    return mu;
}

inline void renormalize(const GameModel& m, StatePolicyDistribution& mu) {
    for (std::size_t c = 0; c < m.classes(); ++c) {
        const std::size_t b = m.offset(c), e = b + m.policies(c) * m.states();
        const double tot = std::accumulate(mu.begin() + static_cast<long>(b), mu.begin() + static_cast<long>(e), 0.0);
        const double scale = m.mass(c) / tot;
        for (std::size_t i = b; i < e; ++i) mu[i] *= scale;
    }
}

inline PolicyMass uniform_policy_mass(const GameModel& m) {
    PolicyMass x(m.classes());
    for (std::size_t c = 0; c < m.classes(); ++c)
        x[c].assign(m.policies(c), m.mass(c) / static_cast<double>(m.policies(c)));
    return x;
}

// Uniform over policies, lifted, with a small floor on every cell.
inline StatePolicyDistribution default_initial(const GameModel& m, double floor = 1e-6) {
    auto mu = steady_state_lift(m, uniform_policy_mass(m));
    for (double& v : mu) v += floor;
    renormalize(m, mu);
    return mu;
}

// Random interior point: Dirichlet(1) policy mix, token profile half stationary, half random.
template <class Rng>
StatePolicyDistribution random_interior(const GameModel& m, Rng& rng, double floor = 1e-6) {
    std::exponential_distribution<double> ex(1.0);
    PolicyMass x(m.classes());
    for (std::size_t c = 0; c < m.classes(); ++c) {
        double tot = 0.0;
        for (std::size_t u = 0; u < m.policies(c); ++u) {
            x[c].push_back(ex(rng));
            tot += x[c].back();
        }
        for (double& v : x[c]) v *= m.mass(c) / tot;
    }
    StatePolicyDistribution mu(m.size(), 0.0);
    std::vector<double> r(m.states());
    for (std::size_t c = 0; c < m.classes(); ++c)
        for (std::size_t u = 0; u < m.policies(c); ++u) {
            double tot = 0.0;
            for (double& v : r) tot += (v = ex(rng));
            const auto& eta = m.table(c).eta[u];
            for (std::size_t k = 0; k < m.states(); ++k)
                mu[m.index(c, u, k)] = x[c][u] * (0.5 * eta[k] + 0.5 * r[k] / tot) + floor;
        }
    renormalize(m, mu);
    return mu;
}

inline FlowVector sigma_of_mix(const GameModel& m, const PolicyMass& x) {
    ActionTable am(m.classes());
    for (std::size_t c = 0; c < m.classes(); ++c) {
        am[c].assign(m.actions(c), 0.0);
        for (std::size_t u = 0; u < m.policies(c); ++u)
            for (auto [a, g] : m.table(c).freq[u]) am[c][a] += m.rates().action * x[c][u] * g;
    }
    return sigma_from_action_flows(m.scenario(), am);
}

// U(x) = (1/Rd) sum_r integral_0^{sigma_r} w_r, sigma taken at the lift of x
inline double potential(const GameModel& m, const PolicyMass& x) {
    auto sigma = sigma_of_mix(m, x);
    double U = 0.0;
    for (std::size_t r = 0; r < sigma.size(); ++r) U += m.scenario().rewards[r].integral(sigma[r]);
    return U / m.rates().action;
}

// dU/dx equals the payoff of the lift
inline PayoffVector potential_gradient(const GameModel& m, const PolicyMass& x) {
    return payoffs_from_sigma(m, sigma_of_mix(m, x));
}

struct PotentialMaximum {
    PolicyMass x;
    FlowVector sigma;
    double value = 0.0;
    double residual = 0.0;  // norm of the unit-step projected-gradient map
    std::size_t iterations = 0;
};

// Projected gradient ascent on the concave potential over the product of class simplices.
inline PotentialMaximum maximize_potential(const GameModel& m, double tol = 1e-12,
                                           std::size_t max_iter = 200000) {
    PotentialMaximum res;
    auto x = uniform_policy_mass(m);
    double step = 1.0;
    double U = potential(m, x);
    auto grad = potential_gradient(m, x);
    std::size_t it = 0;
    double resid = 0.0;
    for (; it < max_iter; ++it) {
        PolicyMass xn(m.classes());
        double U_new = 0.0, lin = 0.0, sq = 0.0;
        for (int bt = 0; bt < 60; ++bt) {
            lin = sq = 0.0;
            for (std::size_t c = 0; c < m.classes(); ++c) {
                std::vector<double> y(x[c]);
                for (std::size_t u = 0; u < y.size(); ++u) y[u] += step * grad[c][u];
                xn[c] = project_simplex(y, m.mass(c));
                for (std::size_t u = 0; u < y.size(); ++u) {
                    const double d = xn[c][u] - x[c][u];
                    lin += grad[c][u] * d;
                    sq += d * d;
                }
            }
            U_new = potential(m, xn);
            if (U_new >= U + lin - sq / (2.0 * step) - 1e-15 * std::abs(U)) break;
            step *= 0.5;
        }
        x.swap(xn);
        U = U_new;
        grad = potential_gradient(m, x);
        // Unit-step gradient mapping: zero exactly at a maximizer, and unlike the adaptive
        // step it is not inflated by near-tied policies once the step has grown large.
        resid = 0.0;
        for (std::size_t c = 0; c < m.classes(); ++c) {
            std::vector<double> y(x[c]);
            for (std::size_t u = 0; u < y.size(); ++u) y[u] += grad[c][u];
            const auto p = project_simplex(y, m.mass(c));
            for (std::size_t u = 0; u < y.size(); ++u) resid += (p[u] - x[c][u]) * (p[u] - x[c][u]);
        }
        resid = std::sqrt(resid);
        if (resid <= tol) break;
        step *= 1.5;
    }
    res.x = x;
    res.sigma = sigma_of_mix(m, x);
    res.value = U;
    res.residual = resid;
    res.iterations = it;
    return res;
}

struct ClassCertificate {
    double eps_policy = 0.0;
    double eps_state = 0.0;
};

struct MsneCertificate {
    double eps_policy = 0.0;
    double eps_state = 0.0;
    double eps = 0.0;
    std::vector<ClassCertificate> per_class;
};

// Smallest eps with: every policy holding more than eps mass is eps-optimal, and every cell
// is within eps of its stationary profile. Policy part solves the self-referential threshold
// exactly: eps works iff eps >= min(mass_u, gap_u) for every u.
inline MsneCertificate msne_certificate(const GameModel& m, const StatePolicyDistribution& mu) {
    auto F = payoff_map(m, mu);
    auto x = policy_marginals(m, mu);
    MsneCertificate cert;
    for (std::size_t c = 0; c < m.classes(); ++c) {
        ClassCertificate cc;
        const double best = *std::max_element(F[c].begin(), F[c].end());
        for (std::size_t u = 0; u < m.policies(c); ++u) {
            cc.eps_policy = std::max(cc.eps_policy, std::min(x[c][u], best - F[c][u]));
            const auto& eta = m.table(c).eta[u];
            for (std::size_t k = 0; k < m.states(); ++k)
                cc.eps_state = std::max(cc.eps_state, std::abs(mu[m.index(c, u, k)] - eta[k] * x[c][u]));
        }
        cert.eps_policy = std::max(cert.eps_policy, cc.eps_policy);
        cert.eps_state = std::max(cert.eps_state, cc.eps_state);
        cert.per_class.push_back(cc);
    }
    cert.eps = std::max(cert.eps_policy, cert.eps_state);
    return cert;
}

struct IntegrateOptions {
    double step = 0.0;             // 0: default step factor / (Rd+Rno)
    double step_factor = 1.0;
    double sample_interval = 0.0;  // 0: T/200
    bool keep_states = true;
    double max_clip = 1e-8;
    std::function<void(double, const StatePolicyDistribution&)> observer;
    std::function<bool(double, const StatePolicyDistribution&)> stop;  // checked at sample times
};

struct Trajectory {
    std::vector<double> t;
    std::vector<StatePolicyDistribution> states;
    StatePolicyDistribution final_state;
    std::size_t steps = 0;
    std::size_t rejected = 0;
    bool stopped = false;  // stop predicate fired before T_end
};

inline double default_step(const GameModel& m, double factor = 1.0) {
    const double rr = m.rates().revision;
    double h = factor / m.rates().jump();
    if (rr > 0.0) h = std::min(h, factor / rr);
    return h;
}

// Classical RK4. A step that drives more than max_clip mass negative is rejected and halved;
// smaller undershoots are clipped and the class masses restored.
inline Trajectory integrate(const GameModel& m, const RevisionProtocolSpec& spec,
                           StatePolicyDistribution mu, double T_end, const IntegrateOptions& opt = {}) {
    check_shape(m, mu);
    if (!(T_end >= 0.0)) throw ModelError("negative horizon");
    const double h_max = opt.step > 0.0 ? opt.step : default_step(m, opt.step_factor);
    const double dt_sample = opt.sample_interval > 0.0 ? opt.sample_interval : std::max(T_end / 200.0, h_max);
    const double h_min = 1e-12 * std::max(1.0, T_end);

    Trajectory tr;
    auto record = [&](double t) {
        tr.t.push_back(t);
        if (opt.keep_states) tr.states.push_back(mu);
        if (opt.observer) opt.observer(t, mu);
    };
    const std::size_t n = mu.size();
    StatePolicyDistribution k1, k2, k3, k4, tmp(n), cand(n);

    double t = 0.0;
    record(t);
    const auto n_samples = static_cast<std::size_t>(std::ceil(T_end / dt_sample - 1e-9));
    for (std::size_t s = 1; s <= n_samples; ++s) {
        const double t_next = std::min(T_end, static_cast<double>(s) * dt_sample);
        const auto n_steps = static_cast<std::size_t>(std::ceil((t_next - t) / h_max - 1e-9));
        const double h_nom = (t_next - t) / static_cast<double>(std::max<std::size_t>(n_steps, 1));
        while (t < t_next - 1e-12 * std::max(1.0, t_next)) {
            double h = std::min(h_nom, t_next - t);
            for (;;) {
                drift(m, spec, mu, k1);
                for (std::size_t i = 0; i < n; ++i) tmp[i] = mu[i] + 0.5 * h * k1[i];
                drift(m, spec, tmp, k2);
                for (std::size_t i = 0; i < n; ++i) tmp[i] = mu[i] + 0.5 * h * k2[i];
                drift(m, spec, tmp, k3);
                for (std::size_t i = 0; i < n; ++i) tmp[i] = mu[i] + h * k3[i];
                drift(m, spec, tmp, k4);
                double neg = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    cand[i] = mu[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                    if (cand[i] < 0.0) neg -= cand[i];
                }
                if (neg <= opt.max_clip) break;
                ++tr.rejected;
                h *= 0.5;
                if (h < h_min) throw IntegrationError("step size underflow at t=" + std::to_string(t), t);
            }
            // geometric token tails underflow into subnormals, which are very slow; drop them
            for (double& v : cand) v = v < 1e-280 ? 0.0 : v;
            mu.swap(cand);
            renormalize(m, mu);
            t += h;
            ++tr.steps;
        }
        t = t_next;
        record(t);
        if (opt.stop && opt.stop(t, mu)) {
            tr.stopped = true;
            break;
        }
    }
    tr.final_state = mu;
    return tr;
}

}  // namespace tokenecon
