#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tokenecon/meanfield.hpp"
#include "tokenecon/model.hpp"
#include "tokenecon/wallet.hpp"

namespace tokenecon {

struct AgentState {
    std::uint32_t cls = 0;
    std::uint32_t policy = 0;
    int k = 0;
    double reward_sum = 0.0;  // since the last reset (burn-in)
    std::uint64_t action_count = 0;

    double mean_reward() const { return action_count ? reward_sum / static_cast<double>(action_count) : 0.0; }
};

enum class EventKind : int { Action = 0, Noise = 1, Revision = 2 };

// N agents on one GameModel. Keeps per-cell and per-resource counts in sync with the agent
// array so that the empirical measure and sigma-hat are O(1) to query per event.
class PopulationState {
public:
    PopulationState(const GameModel& m, std::vector<AgentState> agents, std::uint64_t seed)
        : m_(&m), agents_(std::move(agents)), rng_(seed), cells_(m.size(), 0),
          resource_(m.scenario().resource_count(), 0), class_count_(m.classes(), 0) {
        if (agents_.empty()) throw ModelError("population needs at least one agent");
        std::vector<std::vector<std::uint32_t>> policy_count(m.classes());
        for (std::size_t c = 0; c < m.classes(); ++c) policy_count[c].assign(m.policies(c), 0);
        for (const auto& a : agents_) {
            if (a.cls >= m.classes() || a.policy >= m.policies(a.cls) || a.k < 0 || a.k > m.k_max())
                throw ModelError("agent state out of range");
            ++cells_[m.index(a.cls, a.policy, static_cast<std::size_t>(a.k))];
            ++class_count_[a.cls];
            ++policy_count[a.cls][a.policy];
            for (auto r : action_of(a).resources) ++resource_[r];
        }
        policy_count_ = std::move(policy_count);
    }

    const GameModel& model() const { return *m_; }
    std::size_t size() const { return agents_.size(); }
    const std::vector<AgentState>& agents() const { return agents_; }
    double time() const { return t_; }
    const std::array<std::uint64_t, 3>& event_counts() const { return events_; }
    std::uint64_t version() const { return version_; }
    std::mt19937_64& rng() { return rng_; }
    const std::vector<std::uint32_t>& cell_counts() const { return cells_; }
    std::uint32_t class_count(std::size_t c) const { return class_count_[c]; }
    std::uint32_t policy_count(std::size_t c, std::size_t u) const { return policy_count_[c][u]; }

    double total_rate() const {
        const auto& r = m_->rates();
        return static_cast<double>(agents_.size()) * (r.action + r.noise + r.revision);
    }

    FlowVector sigma_hat() const {
        FlowVector s(resource_.size());
        const double scale = m_->rates().action / static_cast<double>(agents_.size());
        for (std::size_t r = 0; r < s.size(); ++r) s[r] = scale * static_cast<double>(resource_[r]);
        return s;
    }

    // F(mu-hat), recomputed only when sigma-hat changed since the last call
    const PayoffVector& payoffs() {
        if (!f_valid_ || f_version_ != version_) {
            f_cache_ = payoffs_from_sigma(*m_, sigma_hat());
            f_version_ = version_;
            f_valid_ = true;
        }
        return f_cache_;
    }

    void advance_clock(double dt) { t_ += dt; }

    void reset_rewards() {
        for (auto& a : agents_) a.reward_sum = 0.0, a.action_count = 0;
    }

    // Applies one event of the given kind to agent i.
    void apply(std::size_t i, EventKind kind, const RevisionProtocolSpec& spec) {
        auto& a = agents_[i];
        ++events_[static_cast<std::size_t>(kind)];
        const auto& tolls = m_->scenario().tolls[a.cls];
        switch (kind) {
            case EventKind::Action: {
                const auto act = policy_of(a)(a.k);
                if (tolls[act] > a.k) throw std::logic_error("agent played an unaffordable action");
                a.reward_sum += current_reward(m_->scenario().classes[a.cls].actions[act]);
                ++a.action_count;
                move_tokens(a, action_kernel(a.k, tolls[act], m_->k_max()));
                break;
            }
            case EventKind::Noise:
                move_tokens(a, noise_kernel(a.k, m_->k_max()));
                break;
            case EventKind::Revision: {
                const std::uint32_t v = revise(a, spec);
                if (v != a.policy) switch_policy(a, v);
                break;
            }
        }
    }

private:
    const Policy& policy_of(const AgentState& a) const { return m_->table(a.cls).family[a.policy]; }
    const Action& action_of(const AgentState& a) const {
        return m_->scenario().classes[a.cls].actions[policy_of(a)(a.k)];
    }

    // w(a, sigma-hat) without materializing sigma-hat
    double current_reward(const Action& act) const {
        const double scale = m_->rates().action / static_cast<double>(agents_.size());
        double w = 0.0;
        for (auto r : act.resources) w += m_->scenario().rewards[r](scale * static_cast<double>(resource_[r]));
        return w;
    }

    void relocate(AgentState& a, std::uint32_t policy, int k) {
        const auto& before = action_of(a);
        --cells_[m_->index(a.cls, a.policy, static_cast<std::size_t>(a.k))];
        --policy_count_[a.cls][a.policy];
        a.policy = policy;
        a.k = k;
        ++cells_[m_->index(a.cls, a.policy, static_cast<std::size_t>(a.k))];
        ++policy_count_[a.cls][a.policy];
        const auto& after = action_of(a);
        if (&before != &after) {
            for (auto r : before.resources) --resource_[r];
            for (auto r : after.resources) ++resource_[r];
            ++version_;
        }
    }

    void move_tokens(AgentState& a, int k) {
        if (k != a.k) relocate(a, a.policy, k);
    }
    void switch_policy(AgentState& a, std::uint32_t v) { relocate(a, v, a.k); }

    // Switch u -> v with probability rho_uv / Rr, rates evaluated at the empirical measure.
    std::uint32_t revise(const AgentState& a, const RevisionProtocolSpec& spec) {
        const double rr = spec.revision_rate;
        if (!(rr > 0.0)) return a.policy;
        const auto& F = payoffs()[a.cls];
        const double kappa = spec.kappa[a.cls];
        const double mass = static_cast<double>(class_count_[a.cls]);
        const double fu = F[a.policy];
        double draw = std::uniform_real_distribution<double>(0.0, rr)(rng_);
        double total = 0.0;
        std::uint32_t chosen = a.policy;
        for (std::uint32_t v = 0; v < F.size(); ++v) {
            if (v == a.policy || F[v] <= fu) continue;
            double r = kappa * (F[v] - fu);
            if (spec.kind == RevisionProtocolSpec::Kind::Imitative)
                r *= static_cast<double>(policy_count_[a.cls][v]) / mass;
            total += r;
            if (chosen == a.policy && draw < total) chosen = v;
        }
        if (total > rr * (1.0 + 1e-9)) throw std::logic_error("revision rates exceed the revision clock");
        return chosen;
    }

    const GameModel* m_;
    std::vector<AgentState> agents_;
    std::mt19937_64 rng_;
    double t_ = 0.0;
    std::array<std::uint64_t, 3> events_{};
    std::vector<std::uint32_t> cells_;
    std::vector<std::uint32_t> resource_;
    std::vector<std::uint32_t> class_count_;
    std::vector<std::vector<std::uint32_t>> policy_count_;
    std::uint64_t version_ = 0;
    std::uint64_t f_version_ = 0;
    bool f_valid_ = false;
    PayoffVector f_cache_;
};

// round(N m_c) per class, fixed up by largest remainder so the counts sum to N
inline std::vector<std::size_t> class_counts(const Scenario& s, std::size_t N) {
    const double tot = s.total_mass();
    std::vector<std::size_t> n(s.classes.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t used = 0;
    for (std::size_t c = 0; c < n.size(); ++c) {
        const double exact = static_cast<double>(N) * s.classes[c].mass / tot;
        n[c] = static_cast<std::size_t>(std::floor(exact));
        used += n[c];
        rem.emplace_back(exact - std::floor(exact), c);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; used < N; ++i, ++used) ++n[rem[i % rem.size()].second];
    return n;
}

// Agents drawn i.i.d. per class from mu0's normalized (policy, token) distribution.
inline PopulationState init_population(const GameModel& m, std::size_t N, const StatePolicyDistribution& mu0,
                                       std::uint64_t seed) {
    check_shape(m, mu0);
    if (N < m.classes())
        throw ModelError("population of " + std::to_string(N) + " cannot cover " + std::to_string(m.classes()) +
                         " classes");
    std::mt19937_64 rng(seed);
    auto counts = class_counts(m.scenario(), N);
    std::vector<AgentState> agents;
    agents.reserve(N);
    for (std::size_t c = 0; c < m.classes(); ++c) {
        const auto b = static_cast<long>(m.offset(c));
        const auto e = b + static_cast<long>(m.policies(c) * m.states());
        std::discrete_distribution<std::size_t> pick(mu0.begin() + b, mu0.begin() + e);
        for (std::size_t i = 0; i < counts[c]; ++i) {
            const std::size_t cell = pick(rng);
            AgentState a;
            a.cls = static_cast<std::uint32_t>(c);
            a.policy = static_cast<std::uint32_t>(cell / m.states());
            a.k = static_cast<int>(cell % m.states());
            agents.push_back(a);
        }
    }
    // the event stream gets its own seed so initial sampling and dynamics stay decoupled
    return PopulationState(m, std::move(agents), seed ^ 0x9e3779b97f4a7c15ULL);
}

struct EmpiricalMeasure {
    StatePolicyDistribution mu;
    FlowVector sigma;
};

inline EmpiricalMeasure empirical_distribution(const PopulationState& p) {
    EmpiricalMeasure e;
    const double inv = 1.0 / static_cast<double>(p.size());
    e.mu.resize(p.cell_counts().size());
    for (std::size_t i = 0; i < e.mu.size(); ++i) e.mu[i] = inv * static_cast<double>(p.cell_counts()[i]);
    e.sigma = p.sigma_hat();
    return e;
}

// Draws the next event: the clock advances by Exp(N (Rd + Rno + Rr)), a uniform agent rings,
// and the clock type is chosen in proportion to its rate.
inline double next_event_gap(PopulationState& p) {
    return std::exponential_distribution<double>(p.total_rate())(p.rng());
}

inline void fire_event(PopulationState& p, const RevisionProtocolSpec& spec) {
    const auto& r = p.model().rates();
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, p.size() - 1)(p.rng());
    const double u = std::uniform_real_distribution<double>(0.0, r.action + r.noise + r.revision)(p.rng());
    const EventKind kind = u < r.action ? EventKind::Action
                           : u < r.action + r.noise ? EventKind::Noise
                                                    : EventKind::Revision;
    p.apply(i, kind, spec);
}

inline void step_event(PopulationState& p, const RevisionProtocolSpec& spec) {
    p.advance_clock(next_event_gap(p));
    fire_event(p, spec);
}

struct PopulationRunOptions {
    double sample_interval = 0.0;  // 0: T/200
    double burn_in = 0.5;          // fraction of the horizon before per-agent averages start
    bool keep_states = true;
};

struct AgentSummary {
    std::size_t id;
    std::size_t cls;
    double mean_reward;
    std::uint64_t action_count;
};

struct PopulationTrajectory {
    std::vector<double> t;
    std::vector<StatePolicyDistribution> states;
    std::vector<FlowVector> sigma;
    std::vector<std::vector<double>> class_rewards;  // instantaneous w̄_c per sample
    std::vector<AgentSummary> agents;                 // averages after burn-in
    double burn_in_time = 0.0;
    std::array<std::uint64_t, 3> events{};
};

inline std::vector<double> empirical_class_rewards(const GameModel& m, const EmpiricalMeasure& e) {
    auto am = action_mass(m, e.mu);
    auto w = action_rewards(m, e.sigma);
    std::vector<double> out(m.classes(), 0.0);
    for (std::size_t c = 0; c < m.classes(); ++c) {
        double acc = 0.0, tot = 0.0;
        for (std::size_t a = 0; a < am[c].size(); ++a) acc += am[c][a] * w[c][a], tot += am[c][a];
        out[c] = tot > 0.0 ? acc / tot : 0.0;
    }
    return out;
}

// Event loop from the current clock to T_end. Samples are taken on the grid t0 + j dt; the
// state is piecewise constant between events so a sample shows the state just before the
// first event past its time.
inline PopulationTrajectory run(PopulationState& p, const RevisionProtocolSpec& spec, double T_end,
                                const PopulationRunOptions& opt = {}) {
    if (!(T_end > p.time())) throw ModelError("horizon must lie after the current time");
    if (!(opt.burn_in >= 0.0 && opt.burn_in < 1.0)) throw ModelError("burn-in fraction must lie in [0,1)");
    const double t0 = p.time();
    const double dt = opt.sample_interval > 0.0 ? opt.sample_interval : (T_end - t0) / 200.0;
    PopulationTrajectory tr;
    tr.burn_in_time = t0 + opt.burn_in * (T_end - t0);
    const auto n_samples = static_cast<std::size_t>(std::ceil((T_end - t0) / dt - 1e-9));
    std::size_t next_sample = 0;
    bool burned = opt.burn_in == 0.0;
    if (burned) p.reset_rewards();

    auto sample_time = [&](std::size_t j) { return j >= n_samples ? T_end : t0 + static_cast<double>(j) * dt; };
    auto record = [&](double t) {
        auto e = empirical_distribution(p);
        tr.t.push_back(t);
        tr.sigma.push_back(e.sigma);
        tr.class_rewards.push_back(empirical_class_rewards(p.model(), e));
        if (opt.keep_states) tr.states.push_back(std::move(e.mu));
    };
    auto flush_until = [&](double t_event) {
        while (next_sample <= n_samples && sample_time(next_sample) <= t_event) {
            if (!burned && tr.burn_in_time <= sample_time(next_sample)) {
                p.reset_rewards();
                burned = true;
            }
            record(sample_time(next_sample++));
        }
        if (!burned && tr.burn_in_time <= t_event) {
            p.reset_rewards();
            burned = true;
        }
    };

    for (;;) {
        const double t_next = p.time() + next_event_gap(p);
        if (t_next > T_end) {
            flush_until(T_end);
            p.advance_clock(T_end - p.time());
            break;
        }
        flush_until(t_next);
        p.advance_clock(t_next - p.time());
        fire_event(p, spec);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto& a = p.agents()[i];
        tr.agents.push_back({i, a.cls, a.mean_reward(), a.action_count});
    }
    tr.events = p.event_counts();
    return tr;
}

// coefficient of variation of per-agent mean rewards within each class
inline std::vector<double> intra_class_dispersion(const std::vector<AgentSummary>& agents, std::size_t classes) {
    std::vector<double> sum(classes, 0.0), sq(classes, 0.0);
    std::vector<std::size_t> n(classes, 0);
    for (const auto& a : agents) {
        if (a.action_count == 0) continue;
        sum[a.cls] += a.mean_reward;
        sq[a.cls] += a.mean_reward * a.mean_reward;
        ++n[a.cls];
    }
    std::vector<double> cv(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
        if (n[c] < 2) continue;
        const double mean = sum[c] / static_cast<double>(n[c]);
        const double var = std::max(0.0, (sq[c] - static_cast<double>(n[c]) * mean * mean) / static_cast<double>(n[c] - 1));
        cv[c] = std::sqrt(var) / std::abs(mean);
    }
    return cv;
}

struct TrajectoryDistance {
    std::vector<double> t;
    std::vector<double> distance;  // l1 norm per sample
    double sup = 0.0;
};

inline TrajectoryDistance compare_to_meanfield(const std::vector<double>& t_pop,
                                               const std::vector<StatePolicyDistribution>& pop,
                                               const std::vector<double>& t_mf,
                                               const std::vector<StatePolicyDistribution>& mf) {
    if (t_pop.size() != t_mf.size() || pop.size() != t_pop.size() || mf.size() != t_mf.size())
        throw ModelError("sample grids differ in length");
    TrajectoryDistance d;
    for (std::size_t i = 0; i < t_pop.size(); ++i) {
        if (std::abs(t_pop[i] - t_mf[i]) > 1e-9 * std::max(1.0, std::abs(t_mf[i])))
            throw ModelError("sample grids differ at index " + std::to_string(i));
        if (pop[i].size() != mf[i].size()) throw ModelError("state sizes differ at index " + std::to_string(i));
        const double v = l1_diff(pop[i], mf[i]);
        d.t.push_back(t_pop[i]);
        d.distance.push_back(v);
        d.sup = std::max(d.sup, v);
    }
    return d;
}

}  // namespace tokenecon
