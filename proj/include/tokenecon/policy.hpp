#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "tokenecon/model.hpp"

namespace tokenecon {

class PolicyLimitError : public ModelError {
public:
    using ModelError::ModelError;
};

// Deterministic map from token count k in {0..k_max} to an action id.
struct Policy {
    std::size_t cls = 0;
    std::vector<std::size_t> action_at;

    int k_max() const { return static_cast<int>(action_at.size()) - 1; }
    std::size_t operator()(int k) const { return action_at[static_cast<std::size_t>(k)]; }
    bool operator==(const Policy&) const = default;
    auto operator<=>(const Policy& o) const { return action_at <=> o.action_at; }
};

inline std::vector<std::size_t> affordable_actions(int k, const std::vector<int>& class_tolls) {
    std::vector<std::size_t> out;
    for (std::size_t a = 0; a < class_tolls.size(); ++a)
        if (class_tolls[a] <= k) out.push_back(a);
    if (out.empty())
        throw AssumptionError("affordability violated: no affordable action at k=" + std::to_string(k));
    return out;
}

inline bool is_affordable(const Policy& u, const std::vector<int>& tolls) {
    for (int k = 0; k <= u.k_max(); ++k)
        if (tolls[u(k)] > k) return false;
    return true;
}

// Cheaper actions at lower token counts: k' > k implies toll(u(k')) >= toll(u(k)).
inline bool is_monotone(const Policy& u, const std::vector<int>& tolls) {
    for (int k = 1; k <= u.k_max(); ++k)
        if (tolls[u(k)] < tolls[u(k - 1)]) return false;
    return true;
}

inline std::size_t distinct_actions(const Policy& u) {
    auto v = u.action_at;
    std::sort(v.begin(), v.end());
    return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

// every action occupies one contiguous interval of token counts
inline bool is_contiguous(const Policy& u) {
    std::vector<std::size_t> seen;
    for (int k = 0; k <= u.k_max(); ++k) {
        if (k > 0 && u(k) == u(k - 1)) continue;
        if (std::find(seen.begin(), seen.end(), u(k)) != seen.end()) return false;
        seen.push_back(u(k));
    }
    return true;
}

struct PolicyFamily {
    std::size_t cls = 0;
    std::vector<Policy> policies;
    std::size_t max_distinct_actions = 2;
    bool contiguity_approximation = false;  // cap >= 3 restricts to contiguous segments

    std::size_t size() const { return policies.size(); }
    const Policy& operator[](std::size_t i) const { return policies[i]; }

    // index of u in the family, or size() if absent
    std::size_t index_of(const Policy& u) const {
        auto it = std::find(policies.begin(), policies.end(), u);
        return static_cast<std::size_t>(it - policies.begin());
    }
};

inline constexpr std::size_t kPolicyHardLimit = 100000;

// All affordable monotone policies using at most `cap` distinct actions, each on one interval
// of token counts. Actions with equal tolls are tried in id order.
inline PolicyFamily enumerate_policies(std::size_t cls, const std::vector<int>& tolls, int k_max,
                                       std::size_t cap = 2,
                                       std::size_t hard_limit = kPolicyHardLimit) {
    if (k_max < 0) throw ModelError("k_max must be nonnegative");
    if (cap == 0) throw ModelError("max_distinct_actions must be positive");
    if (tolls.empty()) throw ModelError("class has no actions");
    affordable_actions(0, tolls);

    PolicyFamily fam;
    fam.cls = cls;
    fam.max_distinct_actions = cap;
    fam.contiguity_approximation = cap >= 3 && tolls.size() >= 3;

    std::vector<std::size_t> order(tolls.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return tolls[a] < tolls[b]; });

    std::vector<std::size_t> cur(static_cast<std::size_t>(k_max) + 1);
    std::vector<char> used(tolls.size(), 0);

    // fill segment starting at `start` with an action whose toll is >= floor_toll
    auto rec = [&](auto&& self, int start, int floor_toll, std::size_t segments) -> void {
        for (std::size_t a : order) {
            if (used[a] || tolls[a] < floor_toll || tolls[a] > start) continue;
            used[a] = 1;
            for (int end = start + 1; end <= k_max + 1; ++end) {
                cur[static_cast<std::size_t>(end - 1)] = a;
                if (end == k_max + 1) {
                    if (fam.policies.size() >= hard_limit)
                        throw PolicyLimitError("policy enumeration exceeds hard limit " +
                                               std::to_string(hard_limit) +
                                               "; reduce k_max, tolls or max_distinct_actions");
                    fam.policies.push_back({cls, cur});
                } else if (segments + 1 < cap) {
                    self(self, end, tolls[a], segments + 1);
                }
            }
            used[a] = 0;
        }
    };
    rec(rec, 0, std::numeric_limits<int>::min(), 0);
    return fam;
}

// Plays p below toll(q) tokens and q from toll(q) on. Requires toll(p) <= 0 < toll(q).
inline Policy threshold_policy(std::size_t cls, std::size_t p, std::size_t q,
                               const std::vector<int>& tolls, int k_max) {
    if (p >= tolls.size() || q >= tolls.size()) throw ModelError("action id out of range");
    if (!(tolls[p] <= 0 && tolls[q] > 0))
        throw ModelError("threshold policy needs toll(p) <= 0 < toll(q), got " +
                         std::to_string(tolls[p]) + ", " + std::to_string(tolls[q]));
    if (k_max < tolls[q]) throw ModelError("k_max below toll(q)");
    Policy u{cls, std::vector<std::size_t>(static_cast<std::size_t>(k_max) + 1, q)};
    for (int k = 0; k < tolls[q]; ++k) u.action_at[static_cast<std::size_t>(k)] = p;
    return u;
}

inline Policy constant_policy(std::size_t cls, std::size_t a, int k_max) {
    return Policy{cls, std::vector<std::size_t>(static_cast<std::size_t>(k_max) + 1, a)};
}

}  // namespace tokenecon
