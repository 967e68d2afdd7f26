#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace tokenecon {

// Euclidean projection of v onto {x >= 0, sum x = mass}.
inline std::vector<double> project_simplex(const std::vector<double>& v, double mass) {
    std::vector<double> s(v);
    std::sort(s.begin(), s.end(), std::greater<>());
    double cum = 0.0, theta = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        cum += s[i];
        double t = (cum - mass) / static_cast<double>(i + 1);
        if (i + 1 == s.size() || s[i + 1] <= t) {
            theta = t;
            break;
        }
    }
    std::vector<double> x(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) x[i] = std::max(0.0, v[i] - theta);
    return x;
}

inline long round_half_away(double v) { return std::lround(v); }

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

inline double l1_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
    return d;
}

}  // namespace tokenecon
