#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "bseg/core/error.hpp"

namespace bseg::metrics {

struct WilcoxonResult {
    std::size_t n = 0;        ///< pairs left after discarding zero differences
    double w_plus = 0.0;      ///< rank sum of positive differences (a > b)
    double w_minus = 0.0;
    double w = 0.0;           ///< min(W+, W-)
    double p = 1.0;           ///< two-sided
    bool exact = false;

    /// W+ - W-; flips sign when the samples are swapped.
    double signed_statistic() const noexcept { return w_plus - w_minus; }
};

enum class PValueMethod { automatic, exact, normal };

namespace detail {

struct SignedRanks {
    std::vector<double> ranks;  // rank of |d|, average over ties
    std::vector<bool> positive;
    std::vector<std::size_t> tie_sizes;
};

inline SignedRanks signed_ranks(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ArgumentError("wilcoxon: samples must have equal length");
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i] - b[i];
        if (!std::isfinite(x)) throw ArgumentError("wilcoxon: non-finite sample value");
        if (x != 0.0) d.push_back(x);
    }
    if (d.empty()) throw DegenerateSampleError("wilcoxon: all paired differences are zero");
    if (d.size() < 5)
        throw DegenerateSampleError("wilcoxon: need at least 5 non-zero differences, got " + std::to_string(d.size()));
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
    SignedRanks r;
    r.ranks.resize(d.size());
    r.positive.resize(d.size());
    for (std::size_t k = 0; k < order.size();) {
        std::size_t e = k;
        while (e + 1 < order.size() && std::abs(d[order[e + 1]]) == std::abs(d[order[k]])) ++e;
        const double avg = (static_cast<double>(k + 1) + static_cast<double>(e + 1)) / 2.0;
        for (std::size_t t = k; t <= e; ++t) r.ranks[order[t]] = avg;
        if (e > k) r.tie_sizes.push_back(e - k + 1);
        k = e + 1;
    }
    for (std::size_t i = 0; i < d.size(); ++i) r.positive[i] = d[i] > 0.0;
    return r;
}

inline double exact_p(const std::vector<double>& ranks, double w) {
    const std::size_t n = ranks.size();
    if (n > 24) throw CapacityError("wilcoxon: exact enumeration limited to n <= 24");
    const double total = std::accumulate(ranks.begin(), ranks.end(), 0.0);
    const double tol = 1e-9 * (1.0 + total);
    std::uint64_t hits = 0;
    const std::uint64_t patterns = std::uint64_t{1} << n;
    for (std::uint64_t mask = 0; mask < patterns; ++mask) {
        double plus = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask >> i & 1u) plus += ranks[i];
        if (std::min(plus, total - plus) <= w + tol) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(patterns);
}

inline double normal_p(std::size_t n, const std::vector<std::size_t>& ties, double w) {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
    for (std::size_t t : ties) {
        const double tt = static_cast<double>(t);
        var -= (tt * tt * tt - tt) / 48.0;
    }
    if (!(var > 0.0)) return 1.0;
    const double z = std::min(0.0, (w - mean + 0.5) / std::sqrt(var));
    return std::min(1.0, std::erfc(-z / std::sqrt(2.0)));
}

}  // namespace detail

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences are discarded; ties in
/// |difference| get average ranks. Exact enumeration for n <= 12, otherwise a normal approximation
/// with tie-corrected variance and continuity correction.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                           PValueMethod method = PValueMethod::automatic) {
    const auto sr = detail::signed_ranks(a, b);
    WilcoxonResult r;
    r.n = sr.ranks.size();
    for (std::size_t i = 0; i < r.n; ++i) (sr.positive[i] ? r.w_plus : r.w_minus) += sr.ranks[i];
    r.w = std::min(r.w_plus, r.w_minus);
    if (method == PValueMethod::automatic) method = r.n <= 12 ? PValueMethod::exact : PValueMethod::normal;
    r.exact = method == PValueMethod::exact;
    r.p = r.exact ? detail::exact_p(sr.ranks, r.w) : detail::normal_p(r.n, sr.tie_sizes, r.w);
    return r;
}

/// p' = min(1, m p) for each p.
inline std::vector<double> bonferroni(std::span<const double> p_values, std::size_t m) {
    if (m < p_values.size()) throw ArgumentError("bonferroni: m must be >= the number of p-values");
    std::vector<double> out(p_values.begin(), p_values.end());
    for (auto& p : out) p = std::min(1.0, static_cast<double>(m) * p);
    return out;
}

}  // namespace bseg::metrics
