#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tokenecon {

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Violated modelling assumption (tolls, rates, rewards). Reported with exit code 1 by the CLI.
class AssumptionError : public ModelError {
public:
    using ModelError::ModelError;
};

using FlowVector = std::vector<double>;
// tolls[c][a], integer token price of action a for class c
using TollMap = std::vector<std::vector<int>>;

struct Rates {
    double action = 1.0;    // Rd
    double noise = 0.1;     // Rno
    double revision = 0.011;  // Rr
    double jump() const { return action + noise; }
};

// Single-stage reward of one resource as a function of its normalized flow rate.
//   affine:       w(x) = intercept - slope * x
//   negated BPR:  w(x) = -t0 * (1 + b * (scale * x / cap)^p) - eps * x
class RewardFn {
public:
    enum class Kind { Affine, NegatedBpr };

    static RewardFn affine(double intercept, double slope) {
        RewardFn f;
        f.kind_ = Kind::Affine;
        f.intercept_ = intercept;
        f.slope_ = slope;
        return f;
    }

    // eps defaults to eps_rel * t0 per unit flow; a zero free-flow time falls back to eps_rel.
    static RewardFn negated_bpr(double free_flow, double capacity, double b, double power,
                                double flow_scale = 1.0, double eps_rel = 1e-3) {
        if (!(capacity > 0.0)) throw ModelError("BPR capacity must be positive");
        if (!(power >= 1.0)) throw ModelError("BPR power must be >= 1");
        if (free_flow < 0.0 || b < 0.0 || !(flow_scale > 0.0))
            throw ModelError("BPR parameters must be nonnegative");
        RewardFn f;
        f.kind_ = Kind::NegatedBpr;
        f.t0_ = free_flow;
        f.b_ = b;
        f.power_ = power;
        f.coef_ = free_flow * b * std::pow(flow_scale / capacity, power);
        f.slope_ = eps_rel * (free_flow > 0.0 ? free_flow : 1.0);
        f.capacity_ = capacity;
        f.flow_scale_ = flow_scale;
        return f;
    }

    Kind kind() const { return kind_; }

    double operator()(double x) const {
        if (kind_ == Kind::Affine) return intercept_ - slope_ * x;
        return -t0_ - coef_ * std::pow(x, power_) - slope_ * x;
    }

    double derivative(double x) const {
        if (kind_ == Kind::Affine) return -slope_;
        return -coef_ * power_ * std::pow(x, power_ - 1.0) - slope_;
    }

    // closed-form integral of w over [0, x]
    double integral(double x) const {
        if (kind_ == Kind::Affine) return intercept_ * x - 0.5 * slope_ * x * x;
        return -t0_ * x - coef_ * std::pow(x, power_ + 1.0) / (power_ + 1.0) - 0.5 * slope_ * x * x;
    }

    // guaranteed uniform decrease: w(x) - w(y) <= -min_slope() * (x - y) for x > y >= 0
    double min_slope() const { return slope_; }

    double intercept() const { return kind_ == Kind::Affine ? intercept_ : -t0_; }
    double affine_slope() const { return slope_; }
    double free_flow() const { return t0_; }
    double capacity() const { return capacity_; }
    double bpr_b() const { return b_; }
    double power() const { return power_; }
    double flow_scale() const { return flow_scale_; }

private:
    Kind kind_ = Kind::Affine;
    double intercept_ = 0.0;
    double slope_ = 1.0;
    double t0_ = 0.0;
    double b_ = 0.0;
    double power_ = 1.0;
    double coef_ = 0.0;
    double capacity_ = 1.0;
    double flow_scale_ = 1.0;
};

struct Action {
    std::vector<std::size_t> resources;  // sorted, nonempty
    std::string label;
};

struct ClassSpec {
    std::string name;
    double mass = 1.0;
    std::vector<Action> actions;
    int origin = -1;  // network games only
    int dest = -1;
};

struct Scenario {
    std::string name;
    std::vector<RewardFn> rewards;  // one per resource
    std::vector<ClassSpec> classes;
    Rates rates;
    int k_max = 0;
    TollMap tolls;
    std::uint64_t seed = 1;
    std::size_t population = 0;
    double max_revision_ratio = 0.05;

    std::size_t resource_count() const { return rewards.size(); }
    std::size_t class_count() const { return classes.size(); }
    double total_mass() const {
        double m = 0.0;
        for (const auto& c : classes) m += c.mass;
        return m;
    }
    int max_abs_toll() const {
        int t = 0;
        for (const auto& row : tolls)
            for (int v : row) t = std::max(t, std::abs(v));
        return t;
    }
};

inline TollMap zero_tolls(const Scenario& s) {
    TollMap t;
    for (const auto& c : s.classes) t.emplace_back(c.actions.size(), 0);
    return t;
}

inline double action_reward(const Action& a, const FlowVector& sigma,
                            const std::vector<RewardFn>& rewards) {
    double w = 0.0;
    for (std::size_t r : a.resources) w += rewards[r](sigma[r]);
    return w;
}

// flows[c][a] in action events per unit time; sigma_r sums the flows of actions using r
inline FlowVector sigma_from_action_flows(const Scenario& s,
                                          const std::vector<std::vector<double>>& flows) {
    FlowVector sigma(s.resource_count(), 0.0);
    for (std::size_t c = 0; c < s.classes.size(); ++c)
        for (std::size_t a = 0; a < s.classes[c].actions.size(); ++a)
            for (std::size_t r : s.classes[c].actions[a].resources) sigma[r] += flows[c][a];
    return sigma;
}

inline double efficiency(const FlowVector& sigma, const std::vector<RewardFn>& rewards) {
    double j = 0.0;
    for (std::size_t r = 0; r < sigma.size(); ++r) j += sigma[r] * rewards[r](sigma[r]);
    return j;
}

inline double fairness(const std::vector<double>& class_avg) {
    return *std::min_element(class_avg.begin(), class_avg.end());
}

struct Diagnostic {
    std::string assumption;
    std::string message;
};

inline std::string describe(const std::vector<Diagnostic>& ds) {
    std::ostringstream os;
    for (const auto& d : ds) os << d.assumption << " violated: " << d.message << '\n';
    return os.str();
}

// Checks the standing assumptions of the model. Empty result iff all hold.
inline std::vector<Diagnostic> validate_scenario(const Scenario& s) {
    std::vector<Diagnostic> out;
    auto add = [&](const char* which, std::string msg) { out.push_back({which, std::move(msg)}); };

    if (s.rewards.empty()) add("Structure", "no resources");
    if (s.classes.empty()) add("Structure", "no classes");
    for (std::size_t c = 0; c < s.classes.size(); ++c) {
        const auto& cls = s.classes[c];
        if (!(cls.mass > 0.0)) add("Structure", "class " + cls.name + " has nonpositive mass");
        if (cls.actions.empty()) add("Structure", "class " + cls.name + " has no actions");
        for (const auto& a : cls.actions) {
            if (a.resources.empty()) add("Structure", "class " + cls.name + " has an empty action");
            for (std::size_t r : a.resources)
                if (r >= s.rewards.size())
                    add("Structure", "class " + cls.name + " references unknown resource " +
                                         std::to_string(r));
        }
    }

    // rewards must decrease uniformly; checked on a grid of the admissible flow range
    const double x_max = s.rates.action * std::max(s.total_mass(), 1e-12);
    for (std::size_t r = 0; r < s.rewards.size(); ++r) {
        const auto& w = s.rewards[r];
        if (!(w.min_slope() > 0.0)) {
            add("decreasing rewards", "resource " + std::to_string(r) + " is not uniformly decreasing");
            continue;
        }
        const int n = 64;
        for (int i = 0; i < n; ++i) {
            double x = x_max * i / n, y = x_max * (i + 1) / n;
            if (w(y) - w(x) > -w.min_slope() * (y - x) * (1.0 - 1e-9)) {
                add("decreasing rewards", "resource " + std::to_string(r) + " decrease below slope bound");
                break;
            }
        }
    }

    if (!(s.rates.action > 0.0)) add("Rates", "action rate must be positive");
    if (s.rates.noise < 0.0 || s.rates.revision < 0.0) add("Rates", "rates must be nonnegative");
    if (!(s.rates.noise < s.rates.action / 4.0))
        add("noise bound", "noise rate " + std::to_string(s.rates.noise) +
                                " is not below action rate / 4 = " +
                                std::to_string(s.rates.action / 4.0));
    if (s.rates.action > 0.0 && s.rates.revision / s.rates.jump() > s.max_revision_ratio)
        add("time-scale separation", "revision ratio Rr/(Rd+Rno) = " +
                                std::to_string(s.rates.revision / s.rates.jump()) +
                                " exceeds bound " + std::to_string(s.max_revision_ratio));

    if (s.tolls.size() != s.classes.size()) {
        add("Structure", "toll map does not match class count");
    } else {
        for (std::size_t c = 0; c < s.classes.size(); ++c) {
            const auto& row = s.tolls[c];
            if (row.size() != s.classes[c].actions.size()) {
                add("Structure", "toll map row " + std::to_string(c) + " has wrong length");
                continue;
            }
            if (!row.empty() && *std::min_element(row.begin(), row.end()) > 0)
                add("affordability", "class " + s.classes[c].name + " has no action with toll <= 0");
        }
    }
    if (s.k_max < 1) add("Tokens", "k_max must be at least 1");
    if (s.k_max < s.max_abs_toll())
        add("Tokens", "k_max " + std::to_string(s.k_max) + " is below max |toll| " +
                          std::to_string(s.max_abs_toll()));
    return out;
}

}  // namespace tokenecon
