#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "pam/errors.hpp"

namespace pam {

/// A point scored by lambda - g / theta, with g >= 0 the distance penalty.
/// Ties in the score are broken by the lexicographic order of (lambda, key),
/// the larger pair ranking first. Key must be totally ordered by operator<.
template <class Key>
struct RankedPoint {
    double lambda = 0;
    double g = 0;
    Key key{};
};

template <class Key>
inline double score(const RankedPoint<Key>& p, double theta) {
    return p.lambda - p.g / theta;
}

/// True if a ranks strictly before b at theta.
template <class Key>
inline bool ranks_before(const RankedPoint<Key>& a, const RankedPoint<Key>& b, double theta) {
    const double sa = score(a, theta), sb = score(b, theta);
    if (sa != sb) return sa > sb;
    if (a.lambda != b.lambda) return a.lambda > b.lambda;
    return b.key < a.key;
}

/// Indices of the k best points at theta, best first.
template <class Key>
std::vector<std::size_t> top_k_order(std::span<const RankedPoint<Key>> pts, double theta, std::size_t k) {
    require(!pts.empty(), ErrorKind::DegenerateInput, "no points to rank");
    require(k >= 1 && k <= pts.size(), ErrorKind::InvalidParameter, "k must be in [1, number of points]");
    require(theta > 0, ErrorKind::InvalidParameter, "theta must be positive");
    if (k == 1) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < pts.size(); ++i)
            if (ranks_before(pts[i], pts[best], theta)) best = i;
        return {best};
    }
    std::vector<std::size_t> idx(pts.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) { return ranks_before(pts[a], pts[b], theta); });
    idx.resize(k);
    return idx;
}

/// Rank-1 path on [theta_lo, theta_hi]: leaders[j] leads on [thetas[j], thetas[j+1]).
struct LeaderPath {
    std::vector<double> thetas;
    std::vector<std::size_t> leaders;

    std::size_t jumps() const { return leaders.size() - 1; }
    std::size_t leader_at(double theta) const {
        const auto it = std::upper_bound(thetas.begin(), thetas.end(), theta);
        return leaders[static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - thetas.begin() - 1, 0))];
    }
};

namespace detail {

/// First theta > from at which some point overtakes `cur`, and the new leader.
template <class Key>
std::pair<double, std::size_t> next_overtake(std::span<const RankedPoint<Key>> pts, std::size_t cur, double from) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t who = cur;
    const auto& c = pts[cur];
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto& p = pts[i];
        if (p.lambda <= c.lambda) continue;
        // Scores cross where lambda_p - g_p / theta = lambda_c - g_c / theta.
        const double cross = (p.g - c.g) / (p.lambda - c.lambda);
        if (!(cross > from)) continue;
        if (cross < best || (cross == best && (p.lambda > pts[who].lambda ||
                                               (p.lambda == pts[who].lambda && pts[who].key < p.key)))) {
            best = cross;
            who = i;
        }
    }
    return {best, who};
}

} // namespace detail

/// Exact breakpoints of the rank-1 maximizer: every jump is the earliest
/// crossing of the current leader by a point of larger lambda.
template <class Key>
LeaderPath leader_path(std::span<const RankedPoint<Key>> pts, double theta_lo, double theta_hi) {
    require(theta_lo > 0 && theta_lo < theta_hi, ErrorKind::InvalidParameter, "need 0 < theta_lo < theta_hi");
    LeaderPath path;
    std::size_t cur = top_k_order(pts, theta_lo, 1).front();
    path.thetas.push_back(theta_lo);
    path.leaders.push_back(cur);
    double theta = theta_lo;
    for (;;) {
        const auto [cross, who] = detail::next_overtake(pts, cur, theta);
        if (!(cross <= theta_hi)) break;
        theta = cross;
        cur = who;
        path.thetas.push_back(theta);
        path.leaders.push_back(cur);
    }
    return path;
}

/// First jump time strictly after `anchor` (infinity if none) and the new leader.
template <class Key>
std::pair<double, std::size_t> first_jump_after(std::span<const RankedPoint<Key>> pts, double anchor) {
    const std::size_t cur = top_k_order(pts, anchor, 1).front();
    return detail::next_overtake(pts, cur, anchor);
}

/// Number of points ranking before (lambda, g) at theta in the sense of the
/// score, with equal scores decided by the larger lambda alone.
template <class Key>
std::size_t count_overtakers(std::span<const RankedPoint<Key>> pts, double theta, double lambda, double g) {
    const double s = lambda - g / theta;
    std::size_t n = 0;
    for (const auto& p : pts) {
        const double sp = score(p, theta);
        if (sp > s || (sp == s && p.lambda > lambda)) ++n;
    }
    return n;
}

} // namespace pam
