#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tokenecon/model.hpp"
#include "tokenecon/policy.hpp"

namespace tokenecon {

class NonUniqueStationary : public AssumptionError {
public:
    NonUniqueStationary(const std::string& what, std::vector<std::vector<int>> classes)
        : AssumptionError(what), closed_classes(std::move(classes)) {}
    std::vector<std::vector<int>> closed_classes;
};

inline int action_kernel(int k, int toll, int k_max) {
    if (k < 0 || k > k_max) throw std::out_of_range("token count out of range");
    if (toll > k)
        throw std::logic_error("unaffordable action: toll " + std::to_string(toll) + " at k=" +
                               std::to_string(k));
    return std::min(k - toll, k_max);
}

inline int noise_kernel(int k, int k_max) {
    if (k < 0 || k > k_max) throw std::out_of_range("token count out of range");
    return std::min(k + 1, k_max);
}

// Embedded jump chain of the wallet under one policy: from k, jump to next_action[k] with
// probability p_action and to next_noise[k] otherwise. Jumps occur at rate Rd + Rno.
struct WalletChain {
    int k_max = 0;
    std::vector<int> next_action;
    std::vector<int> next_noise;
    double p_action = 1.0;
    double rate = 1.0;

    std::size_t states() const { return next_action.size(); }

    Eigen::MatrixXd matrix() const {
        const auto n = static_cast<Eigen::Index>(states());
        Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
        for (Eigen::Index k = 0; k < n; ++k) {
            P(k, next_action[static_cast<std::size_t>(k)]) += p_action;
            P(k, next_noise[static_cast<std::size_t>(k)]) += 1.0 - p_action;
        }
        return P;
    }

    // y = P^T x
    std::vector<double> push(const std::vector<double>& x) const {
        std::vector<double> y(x.size(), 0.0);
        for (std::size_t k = 0; k < x.size(); ++k) {
            y[static_cast<std::size_t>(next_action[k])] += p_action * x[k];
            y[static_cast<std::size_t>(next_noise[k])] += (1.0 - p_action) * x[k];
        }
        return y;
    }
};

inline WalletChain build_chain(const Policy& u, const std::vector<int>& class_tolls, const Rates& rates) {
    if (!(rates.action > 0.0) || rates.noise < 0.0) throw ModelError("invalid rates");
    WalletChain ch;
    ch.k_max = u.k_max();
    ch.rate = rates.jump();
    ch.p_action = rates.action / rates.jump();
    ch.next_action.resize(u.action_at.size());
    ch.next_noise.resize(u.action_at.size());
    for (int k = 0; k <= ch.k_max; ++k) {
        ch.next_action[static_cast<std::size_t>(k)] = action_kernel(k, class_tolls[u(k)], ch.k_max);
        ch.next_noise[static_cast<std::size_t>(k)] = noise_kernel(k, ch.k_max);
    }
    return ch;
}

// Closed communicating classes of the support graph over all states (Tarjan).
inline std::vector<std::vector<int>> closed_classes(const WalletChain& ch) {
    const int n = static_cast<int>(ch.states());
    const bool noise_on = ch.p_action < 1.0;
    const bool action_on = ch.p_action > 0.0;
    auto succ = [&](int k, std::vector<int>& out) {
        out.clear();
        if (action_on) out.push_back(ch.next_action[static_cast<std::size_t>(k)]);
        if (noise_on) out.push_back(ch.next_noise[static_cast<std::size_t>(k)]);
    };
    std::vector<int> index(n, -1), low(n, 0), comp(n, -1), stack;
    std::vector<char> on_stack(n, 0);
    int counter = 0, ncomp = 0;
    std::vector<int> buf;
    // iterative Tarjan: frames of (node, next successor slot)
    for (int root = 0; root < n; ++root) {
        if (index[root] >= 0) continue;
        std::vector<std::pair<int, int>> frames{{root, 0}};
        index[root] = low[root] = counter++;
        stack.push_back(root);
        on_stack[root] = 1;
        while (!frames.empty()) {
            auto& [v, slot] = frames.back();
            succ(v, buf);
            if (slot < static_cast<int>(buf.size())) {
                int w = buf[static_cast<std::size_t>(slot++)];
                if (index[w] < 0) {
                    index[w] = low[w] = counter++;
                    stack.push_back(w);
                    on_stack[w] = 1;
                    frames.push_back({w, 0});
                } else if (on_stack[w]) {
                    low[v] = std::min(low[v], index[w]);
                }
                continue;
            }
            if (low[v] == index[v]) {
                int w;
                do {
                    w = stack.back();
                    stack.pop_back();
                    on_stack[w] = 0;
                    comp[w] = ncomp;
                } while (w != v);
                ++ncomp;
            }
            int done = v;
            frames.pop_back();
            if (!frames.empty()) {
                int parent = frames.back().first;
                low[parent] = std::min(low[parent], low[done]);
            }
        }
    }
    std::vector<char> closed(ncomp, 1);
    for (int k = 0; k < n; ++k) {
        succ(k, buf);
        for (int w : buf)
            if (comp[w] != comp[k]) closed[comp[k]] = 0;
    }
    std::vector<std::vector<int>> out;
    std::vector<int> slot(ncomp, -1);
    for (int k = 0; k < n; ++k) {
        if (!closed[comp[k]]) continue;
        if (slot[comp[k]] < 0) {
            slot[comp[k]] = static_cast<int>(out.size());
            out.emplace_back();
        }
        out[static_cast<std::size_t>(slot[comp[k]])].push_back(k);
    }
    return out;
}

inline bool has_unique_recurrent_class(const WalletChain& ch) { return closed_classes(ch).size() == 1; }

namespace detail {

inline std::string describe_classes(const std::vector<std::vector<int>>& cls) {
    std::string s;
    bool parity = cls.size() == 2;
    for (const auto& c : cls) {
        s += " {";
        for (std::size_t i = 0; i < c.size() && i < 6; ++i) s += (i ? "," : "") + std::to_string(c[i]);
        if (c.size() > 6) s += ",...";
        s += "}";
        for (std::size_t i = 1; i < c.size(); ++i)
            if ((c[i] - c[0]) % 2 != 0) parity = false;
    }
    if (parity && cls[0].size() > 1 && (cls[0][0] - cls[1][0]) % 2 != 0)
        s += " (parity splitting: even and odd token counts never mix)";
    return s;
}

}  // namespace detail

// Unique stationary distribution of the jump chain. Dense GTH elimination on the single
// closed class (transient states carry no mass). GTH never subtracts, so tiny tail
// probabilities keep full relative accuracy where an LU solve would return rounding noise.
inline std::vector<double> stationary_distribution(const WalletChain& ch) {
    auto cls = closed_classes(ch);
    if (cls.size() != 1)
        throw NonUniqueStationary(std::to_string(cls.size()) +
                                      " closed recurrent classes, stationary distribution not unique:" +
                                      detail::describe_classes(cls) +
                                      "; a positive noise rate restores uniqueness",
                                  cls);
    const auto& C = cls.front();
    const auto n = static_cast<Eigen::Index>(C.size());
    std::vector<int> pos(ch.states(), -1);
    for (Eigen::Index i = 0; i < n; ++i) pos[static_cast<std::size_t>(C[static_cast<std::size_t>(i)])] = static_cast<int>(i);
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(C[static_cast<std::size_t>(i)]);
        if (ch.p_action > 0.0) P(i, pos[static_cast<std::size_t>(ch.next_action[k])]) += ch.p_action;
        if (ch.p_action < 1.0) P(i, pos[static_cast<std::size_t>(ch.next_noise[k])]) += 1.0 - ch.p_action;
    }
    std::vector<double> out_sum(static_cast<std::size_t>(n), 1.0);
    for (Eigen::Index k = n - 1; k > 0; --k) {
        const double s = P.row(k).head(k).sum();
        out_sum[static_cast<std::size_t>(k)] = s;
        for (Eigen::Index i = 0; i < k; ++i) {
            const double f = P(i, k) / s;
            if (f != 0.0) P.row(i).head(k) += f * P.row(k).head(k);
        }
    }
    std::vector<double> pi(static_cast<std::size_t>(n), 0.0);
    pi[0] = 1.0;
    double total = 1.0;
    for (Eigen::Index k = 1; k < n; ++k) {
        double v = 0.0;
        for (Eigen::Index i = 0; i < k; ++i) v += pi[static_cast<std::size_t>(i)] * P(i, k);
        v /= out_sum[static_cast<std::size_t>(k)];
        pi[static_cast<std::size_t>(k)] = v;
        total += v;
    }
    std::vector<double> out(ch.states(), 0.0);
    for (Eigen::Index i = 0; i < n; ++i)
        out[static_cast<std::size_t>(C[static_cast<std::size_t>(i)])] = pi[static_cast<std::size_t>(i)] / total;
    return out;
}

inline double stationary_residual(const WalletChain& ch, const std::vector<double>& eta) {
    auto y = ch.push(eta);
    double r = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) r = std::max(r, std::abs(y[k] - eta[k]));
    return r;
}

// Geometric tail bound on eta(k_max) for the two-action threshold chain.
inline double tail_decay_rate(double noise_ratio) {
    if (!(noise_ratio >= 0.0 && noise_ratio < 0.25)) throw ModelError("noise ratio must lie in [0, 1/4)");
    return 0.5 - std::sqrt(0.25 - noise_ratio);
}

inline double tail_mass_bound(int toll_q, int k_max, double noise_ratio) {
    if (toll_q <= 0) throw ModelError("tail bound needs a positive toll");
    const double g = tail_decay_rate(noise_ratio);
    const int chunks = (k_max - toll_q + 1) / toll_q - 1;
    return std::pow(g, chunks);
}

// fraction of action events spent on each action under stationarity
inline std::vector<double> action_frequencies(const Policy& u, const std::vector<double>& eta,
                                              std::size_t n_actions) {
    std::vector<double> g(n_actions, 0.0);
    for (std::size_t k = 0; k < eta.size(); ++k) g[u.action_at[k]] += eta[k];
    return g;
}

}  // namespace tokenecon
