#pragma once

// Test-only reference computations, kept independent of the library code paths.

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "avr/rng.hpp"

namespace oracle {

/// p-value of Pearson's chi-square test against equal expected counts.
inline double chi_square_uniform_p(const std::vector<std::uint64_t>& counts) {
    const double n = std::accumulate(counts.begin(), counts.end(), 0.0);
    const double expected = n / static_cast<double>(counts.size());
    double stat = 0;
    for (auto c : counts) stat += (c - expected) * (c - expected) / expected;
    boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

/// Always draws zero.
class ZeroRng final : public avr::Rng {
public:
    std::uint64_t next_u64() override { return 0; }
};

/// Plug-in mutual information (nats) between two discrete label sequences by
/// joint-count enumeration.
inline double joint_count_mi(const std::vector<int>& a, const std::vector<int>& b) {
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> pa, pb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        joint[{a[i], b[i]}] += 1;
        pa[a[i]] += 1;
        pb[b[i]] += 1;
    }
    const double n = static_cast<double>(a.size());
    double mi = 0;
    for (const auto& [key, c] : joint) mi += c / n * std::log(c * n / (pa[key.first] * pb[key.second]));
    return mi;
}

inline double entropy_of(const std::vector<int>& a) {
    std::map<int, double> p;
    for (int v : a) p[v] += 1;
    double h = 0;
    for (const auto& [k, c] : p) h -= c / a.size() * std::log(c / a.size());
    return h;
}

}  // namespace oracle
