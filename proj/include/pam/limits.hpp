#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "pam/cost_order.hpp"
#include "pam/errors.hpp"
#include "pam/localization.hpp"
#include "pam/parallel.hpp"
#include "pam/potential.hpp"
#include "pam/rng.hpp"
#include "pam/spectral.hpp"
#include "pam/stats.hpp"

namespace pam {

using Point = std::array<double, 3>;

inline double l1(const Point& z, int dim) {
    double s = 0;
    for (int i = 0; i < dim; ++i) s += std::abs(z[i]);
    return s;
}

struct PppPoint {
    double lambda = 0;
    Point z{};
};

/// Region of R x R^d the sample covers.
///   Box:  lambda > lambda_min, |z|_inf <= z_max
///   Cone: lambda > lambda_min + |z|_1 / theta_max
enum class Truncation { Box, Cone };

struct PointSample {
    int dim = 1;
    Truncation kind = Truncation::Box;
    double lambda_min = 0;
    double z_max = 0;
    double theta_max = 0;
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    unsigned extensions = 0;
    std::vector<PppPoint> points;

    double intensity_mass() const {
        if (kind == Truncation::Box) return std::exp(-lambda_min) * std::pow(2 * z_max, dim);
        return std::exp(-lambda_min) * std::pow(2 * theta_max, dim);
    }
    bool covers(const PppPoint& p) const {
        if (kind == Truncation::Box) {
            if (!(p.lambda > lambda_min)) return false;
            for (int i = 0; i < dim; ++i)
                if (std::abs(p.z[i]) > z_max) return false;
            return true;
        }
        return p.lambda > lambda_min + l1(p.z, dim) / theta_max;
    }
};

namespace detail {

inline std::size_t poisson_count(Philox& rng, double mean) {
    require(mean < 1e9, ErrorKind::Resource, "point process truncation holds too many points");
    std::poisson_distribution<long long> P(mean);
    return static_cast<std::size_t>(P(rng));
}

inline double laplace(Philox& rng, double scale) {
    const double e = rng.exponential();
    return rng() & 1u ? e * scale : -e * scale;
}

inline void draw_region(PointSample& s, Philox& rng, std::vector<PppPoint>& out) {
    const std::size_t n = poisson_count(rng, s.intensity_mass());
    out.reserve(out.size() + n);
    for (std::size_t i = 0; i < n; ++i) {
        PppPoint p;
        if (s.kind == Truncation::Box) {
            for (int k = 0; k < s.dim; ++k) p.z[k] = s.z_max * (2 * rng.uniform() - 1);
            p.lambda = s.lambda_min + rng.exponential();
        } else {
            // Spatial marginal of the cone is a product of Laplace(theta_max) laws.
            for (int k = 0; k < s.dim; ++k) p.z[k] = laplace(rng, s.theta_max);
            p.lambda = s.lambda_min + l1(p.z, s.dim) / s.theta_max + rng.exponential();
        }
        out.push_back(p);
    }
}

} // namespace detail

/// Poisson process with intensity e^{-lambda} d lambda dz on the box region.
inline PointSample sample_ppp(int dim, double lambda_min, double z_max, std::uint64_t seed, std::uint64_t stream = 0) {
    check_dim(dim);
    require(z_max > 0, ErrorKind::InvalidParameter, "z_max must be positive");
    PointSample s;
    s.dim = dim;
    s.kind = Truncation::Box;
    s.lambda_min = lambda_min;
    s.z_max = z_max;
    s.seed = seed;
    s.stream = stream;
    Philox rng(seed, derive_stream(stream_tag("ppp-box"), stream));
    detail::draw_region(s, rng, s.points);
    return s;
}

/// Poisson process restricted to {lambda > c + |z| / theta_max}: exactly the points
/// whose score at theta_max exceeds c.
inline PointSample sample_ppp_cone(int dim, double c, double theta_max, std::uint64_t seed, std::uint64_t stream = 0) {
    check_dim(dim);
    require(theta_max > 0, ErrorKind::InvalidParameter, "theta_max must be positive");
    PointSample s;
    s.dim = dim;
    s.kind = Truncation::Cone;
    s.lambda_min = c;
    s.theta_max = theta_max;
    s.seed = seed;
    s.stream = stream;
    Philox rng(seed, derive_stream(stream_tag("ppp-cone"), stream));
    detail::draw_region(s, rng, s.points);
    return s;
}

/// Grows a cone sample to a larger region. The new points are a Poisson process on
/// the added region, drawn by sampling the enlarged cone and discarding the old one.
inline void extend_cone(PointSample& s, double c, double theta_max) {
    require(s.kind == Truncation::Cone, ErrorKind::InvalidParameter, "only cone samples can be extended");
    require(c <= s.lambda_min && theta_max >= s.theta_max, ErrorKind::InvalidParameter, "extension must enlarge the cone");
    if (c == s.lambda_min && theta_max == s.theta_max) return;
    PointSample big = s;
    big.lambda_min = c;
    big.theta_max = theta_max;
    Philox rng(s.seed, derive_stream(derive_stream(stream_tag("ppp-cone-ext"), s.stream), ++s.extensions));
    std::vector<PppPoint> fresh;
    detail::draw_region(big, rng, fresh);
    for (const auto& p : fresh)
        if (!s.covers(p)) s.points.push_back(p);
    s.lambda_min = c;
    s.theta_max = theta_max;
}

inline double psi_theta(double lambda, const Point& z, int dim, double theta) {
    require(theta > 0, ErrorKind::InvalidParameter, "theta must be positive");
    return lambda - l1(z, dim) / theta;
}

inline std::vector<RankedPoint<Point>> ranked(const PointSample& s) {
    std::vector<RankedPoint<Point>> r;
    r.reserve(s.points.size());
    for (const auto& p : s.points) r.push_back({p.lambda, l1(p.z, s.dim), p.z});
    return r;
}

struct RankedPpp {
    double psi = 0;
    double lambda = 0;
    Point z{};
    std::size_t index = 0;
};

/// Top k points by psi_theta, ties by the larger (lambda, z).
inline std::vector<RankedPpp> argmax_order(const PointSample& s, double theta, std::size_t k) {
    require(!s.points.empty(), ErrorKind::DegenerateInput, "empty point sample");
    const auto pts = ranked(s);
    std::vector<RankedPpp> out;
    for (auto i : top_k_order<Point>(pts, theta, k)) out.push_back({score(pts[i], theta), pts[i].lambda, pts[i].key, i});
    return out;
}

/// Expected number of unsampled points that could lead somewhere in [theta_lo, theta_hi],
/// given a sampled leader score psi_lo at theta_lo. Zero means certified exactly.
inline double truncation_miss_bound(const PointSample& s, double psi_lo, double theta_lo, double theta_hi) {
    (void)theta_lo;
    if (!(psi_lo > s.lambda_min)) return std::numeric_limits<double>::infinity();
    if (s.kind == Truncation::Cone) return theta_hi <= s.theta_max ? 0.0 : std::numeric_limits<double>::infinity();
    const double inside = std::pow(-std::expm1(-s.z_max / theta_hi), s.dim);
    return std::exp(-psi_lo) * std::pow(2 * theta_hi, s.dim) * (1 - inside);
}

struct MaximizerTrajectory {
    int dim = 1;
    std::vector<double> breakpoints;            // theta_lo, then every rank-1 jump
    std::vector<std::size_t> leaders;           // point index leading from each breakpoint
    std::vector<std::vector<RankedPpp>> ranks;  // top-k at each breakpoint
    double miss_bound = 0;

    std::vector<double> jump_times() const { return {breakpoints.begin() + 1, breakpoints.end()}; }
};

inline MaximizerTrajectory trajectory(const PointSample& s, double theta_lo, double theta_hi, std::size_t k = 1,
                                      double miss_tol = 1e-9) {
    require(theta_lo > 0 && theta_lo < theta_hi, ErrorKind::InvalidParameter, "need 0 < theta_lo < theta_hi");
    require(!s.points.empty(), ErrorKind::DegenerateInput, "empty point sample");
    const auto pts = ranked(s);
    const auto lead = top_k_order<Point>(pts, theta_lo, 1).front();
    const double psi_lo = score(pts[lead], theta_lo);
    MaximizerTrajectory tr;
    tr.dim = s.dim;
    tr.miss_bound = truncation_miss_bound(s, psi_lo, theta_lo, theta_hi);
    require(tr.miss_bound <= miss_tol, ErrorKind::InsufficientTruncation,
            "sample truncation cannot certify the maximizer on [" + std::to_string(theta_lo) + ", " +
                std::to_string(theta_hi) + "] (expected missed competitors " + std::to_string(tr.miss_bound) + ")");
    const auto path = leader_path<Point>(pts, theta_lo, theta_hi);
    tr.breakpoints = path.thetas;
    tr.leaders = path.leaders;
    for (double th : path.thetas) tr.ranks.push_back(argmax_order(s, th, std::min(k, pts.size())));
    return tr;
}

/// Number of points ranking before (lambda, z) at theta.
inline std::size_t jump_candidates(const PointSample& s, double theta, double lambda, const Point& z) {
    return count_overtakers<Point>(ranked(s), theta, lambda, l1(z, s.dim));
}

// --- aging variable ----------------------------------------------------------------------

/// One exact draw of the theta-maximizer (Psibar_theta, Zbar_theta). The cone
/// {psi_theta > c} holds every competitor once the leader scores above c.
inline RankedPpp maximizer_draw(int dim, double theta, std::uint64_t seed, std::uint64_t index, double c0 = -3.0,
                                double c_floor = -60.0) {
    PointSample s = sample_ppp_cone(dim, c0, theta, seed, derive_stream(stream_tag("maximizer"), index));
    for (;;) {
        if (!s.points.empty()) {
            const auto top = argmax_order(s, theta, 1).front();
            if (top.psi > s.lambda_min) return top;
        }
        require(s.lambda_min - 2 >= c_floor, ErrorKind::InsufficientTruncation, "cone level reached its floor");
        extend_cone(s, s.lambda_min - 2, theta);
    }
}

struct ThetaControl {
    double c0 = -2.0;          // initial cone level
    double theta0 = 4.0;       // initial cone opening
    double theta_cap = 1e4;    // Theta beyond theta_cap - 1 is censored
    double c_floor = -30.0;
};

struct ThetaSamples {
    int dim = 1;
    std::uint64_t seed = 0;
    double cap = 0;               // samples are exact below cap, censored above
    std::vector<double> values;   // +infinity for censored draws
    std::size_t censored = 0;
    std::size_t points_drawn = 0;

    /// Empirical P(Theta > s) and its binomial standard error; exact in law for s <= cap.
    MeanEstimate tail(double s) const {
        require(s <= cap, ErrorKind::InvalidParameter, "tail requested beyond the censoring cap");
        std::size_t k = 0;
        for (double v : values) k += v > s;
        const double p = static_cast<double>(k) / static_cast<double>(values.size());
        return {p, binomial_stderr(p, values.size()), values.size()};
    }
};

/// One draw of Theta = inf{theta > 0 : Zbar_{1+theta} != Zbar_1}.
inline double theta_draw(int dim, std::uint64_t seed, std::uint64_t index, const ThetaControl& ctl,
                         std::size_t* points = nullptr) {
    PointSample s = sample_ppp_cone(dim, ctl.c0, std::min(ctl.theta0, ctl.theta_cap), seed, derive_stream(stream_tag("theta"), index));
    for (;;) {
        const auto pts = ranked(s);
        bool lead_ok = false;
        std::size_t lead = 0;
        if (!pts.empty()) {
            lead = top_k_order<Point>(pts, 1.0, 1).front();
            lead_ok = score(pts[lead], 1.0) > s.lambda_min;
        }
        if (!lead_ok) {
            require(s.lambda_min - 2 >= ctl.c_floor, ErrorKind::InsufficientTruncation, "cone level reached its floor");
            extend_cone(s, s.lambda_min - 2, s.theta_max);
            continue;
        }
        const auto [cross, who] = detail::next_overtake<Point>(pts, lead, 1.0);
        (void)who;
        if (cross <= s.theta_max) {
            if (points) *points = s.points.size();
            return cross - 1.0;
        }
        if (s.theta_max >= ctl.theta_cap) {
            if (points) *points = s.points.size();
            return std::numeric_limits<double>::infinity();
        }
        extend_cone(s, s.lambda_min, std::min(2 * s.theta_max, ctl.theta_cap));
    }
}

inline ThetaSamples theta_sampler(int dim, std::size_t n, std::uint64_t seed, const ThetaControl& ctl = {},
                                  unsigned workers = 1) {
    check_dim(dim);
    require(n >= 1, ErrorKind::InvalidParameter, "need at least one sample");
    require(ctl.theta_cap > 1 && ctl.theta0 > 1, ErrorKind::InvalidParameter, "cone opening must exceed 1");
    ThetaSamples out;
    out.dim = dim;
    out.seed = seed;
    out.cap = ctl.theta_cap - 1;
    const std::size_t chunk = 1024;
    const std::size_t chunks = (n + chunk - 1) / chunk;
    auto parts = parallel_map(chunks, workers, [&](std::size_t c) {
        std::pair<std::vector<double>, std::size_t> r;
        for (std::size_t i = c * chunk; i < std::min(n, (c + 1) * chunk); ++i) {
            std::size_t pts = 0;
            r.first.push_back(theta_draw(dim, seed, i, ctl, &pts));
            r.second += pts;
        }
        return r;
    });
    for (auto& [v, p] : parts) {
        out.values.insert(out.values.end(), v.begin(), v.end());
        out.points_drawn += p;
    }
    for (double v : out.values) out.censored += std::isinf(v);
    return out;
}

/// G_u(r) = 1 - u^{-d} + sum_{k=1}^{d-1} r^k / k! (u^{-k} - u^{-d}).
inline double aging_G(double u, double r, int dim) {
    double g = 1 - std::pow(u, -dim);
    double term = 1;
    for (int k = 1; k < dim; ++k) {
        term *= r / k;
        g += term * (std::pow(u, -k) - std::pow(u, -dim));
    }
    return g;
}

/// mu(D_u(lambda, z)) = (2u)^d e^{-lambda} G_u(|z|).
inline double mu_D_u(double lambda, double r, double u, int dim) {
    return std::pow(2 * u, dim) * std::exp(-lambda) * aging_G(u, r, dim);
}

struct OracleValue {
    double value = 0;
    double error = 0;
};

/// P(Theta > s) = int_0^inf r^{d-1} / ((d-1)! (e^r + u^d G_u(r))) dr with u = 1 + s, which is
/// E exp(-mu(D_u(Xi_1))) integrated against the law of the theta = 1 maximizer.
inline OracleValue aging_tail_oracle(double s, int dim, double tol = 1e-12) {
    check_dim(dim);
    require(s >= 0 && std::isfinite(s), ErrorKind::InvalidParameter, "s must be finite and non-negative");
    const double u = 1 + s;
    const double ud = std::pow(u, dim);
    double fact = 1;
    for (int k = 2; k < dim; ++k) fact *= k;
    auto f = [&](double r) {
        const double den = std::exp(r) + ud * aging_G(u, r, dim);
        return std::pow(r, dim - 1) / (fact * den);
    };
    using boost::math::quadrature::gauss_kronrod;
    const double split = dim * std::log(u) + 2.0 * dim;
    const double inf = std::numeric_limits<double>::infinity();
    double e1 = 0, e2 = 0;
    const double v1 = gauss_kronrod<double, 61>::integrate(f, 0.0, split, 20, 1e-14, &e1);
    const double v2 = gauss_kronrod<double, 61>::integrate(f, split, inf, 20, 1e-14, &e2);
    // A second rule of different order bounds the error independently of the estimator.
    const double w = gauss_kronrod<double, 31>::integrate(f, 0.0, split, 20, 1e-14) +
                     gauss_kronrod<double, 31>::integrate(f, split, inf, 20, 1e-14);
    OracleValue o{v1 + v2, std::max(std::abs(v1 + v2 - w), e1 + e2)};
    require(o.error <= tol * std::max(1.0, o.value), ErrorKind::Accuracy,
            "quadrature error " + std::to_string(o.error) + " above tolerance");
    return o;
}

/// Gumbel law of Psibar_theta: scale 1, location d ln(2 theta).
inline double limit_cdf_gumbel(double x, double theta, int dim) {
    require(theta > 0, ErrorKind::InvalidParameter, "theta must be positive");
    return std::exp(-std::exp(-(x - dim * std::log(2 * theta))));
}

/// Laplace law of each coordinate of Zbar_theta: location 0, scale theta.
inline double limit_cdf_laplace(double x, double theta) {
    require(theta > 0, ErrorKind::InvalidParameter, "theta must be positive");
    return x < 0 ? 0.5 * std::exp(x / theta) : 1 - 0.5 * std::exp(-x / theta);
}

// --- finite-t point cloud -----------------------------------------------------------------

struct RescaledPoint {
    double y = 0;  // (lambda^C - a_t) / d_t
    Point z{};     // z / t
    Site site{};
};

/// {((lambda^C(z) - a_t) / d_t, z / t)} over the capitals.
inline std::vector<RescaledPoint> rescale_capitals(std::span<const Capital> caps, int dim, double t, double rho, double a_t) {
    require(t > std::exp(std::numbers::e), ErrorKind::InvalidParameter, "t must exceed e^e");
    const double d_t = rho / (dim * std::log(t));
    std::vector<RescaledPoint> out;
    for (const auto& c : caps) {
        RescaledPoint p;
        p.y = (c.lambda_C - a_t) / d_t;
        for (int i = 0; i < dim; ++i) p.z[i] = c.z[i] / t;
        p.site = c.z;
        out.push_back(p);
    }
    return out;
}

/// hat_a_t - chi.
inline double a_t_approx(double t, int dim, double rho, double chi) { return hat_a(t, dim, rho) - chi; }

/// r_s = s rho / (d ln s ln3 s).
inline double r_scale(double s, int dim, double rho) { return s * rho / (dim * std::log(s) * ln3(s)); }

/// Solution s of r_s = t on the branch where r is increasing.
inline double r_scale_inverse(double t, int dim, double rho) {
    // r decreases from +inf just above e^e to a minimum, then increases.
    double lo = std::exp(std::numbers::e) * 1.0001, hi = lo;
    double best = r_scale(lo, dim, rho);
    for (double s = lo; s < 1e300; s *= 1.05) {
        const double r = r_scale(s, dim, rho);
        if (r > best) break;
        best = r;
        lo = s;
    }
    require(t > best, ErrorKind::InvalidParameter, "t is below the minimum of r_s; a_t is undefined there");
    hi = lo * 2;
    while (r_scale(hi, dim, rho) < t) hi *= 2;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (r_scale(mid, dim, rho) < t ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Radius hat N_t = N_{L*_t} of the boxes defining a_t.
inline long a_t_box_radius(double t, int dim, double rho) {
    const double s = r_scale_inverse(t, dim, rho);
    const double Lstar = std::floor(s * ln2_plus(s));
    return static_cast<long>(std::floor(0.5 * std::sqrt(rho * Lstar / dim)));
}

/// ((ln t)(ln2 t)(ln3 t) / t)^{d/2}.
inline double a_t_level(double t, int dim) {
    return std::pow(std::log(t) * ln2(t) * ln3(t) / t, 0.5 * dim);
}

struct QuantileEstimate {
    double value = 0;
    double lower = 0;  // approximate 95% order-statistic interval
    double upper = 0;
    double level = 0;
    long box_radius = 0;
    std::size_t replicas = 0;
};

/// a_t by Monte Carlo: the upper-p_t quantile of lambda^1 over i.i.d. boxes of radius hat N_t.
inline QuantileEstimate a_t_mc_quantile(double t, int dim, double rho, std::size_t replicas, std::uint64_t seed,
                                        unsigned workers = 1, std::size_t min_exceedances = 20) {
    QuantileEstimate q;
    q.level = a_t_level(t, dim);
    q.box_radius = a_t_box_radius(t, dim, rho);
    q.replicas = replicas;
    const double expected = q.level * static_cast<double>(replicas);
    require(expected >= static_cast<double>(min_exceedances), ErrorKind::StatisticalPower,
            std::to_string(replicas) + " replicas give " + std::to_string(expected) + " expected exceedances at level " +
                std::to_string(q.level) + "; need " + std::to_string(min_exceedances));
    const Box b = ball(dim, {}, static_cast<int>(q.box_radius));
    const LatticeDomain dom = LatticeDomain::from_box(b);
    auto lam = parallel_map(replicas, workers, [&](std::size_t i) {
        const auto f = sample_field(dim, b, rho, derive_stream(derive_stream(seed, stream_tag("a_t-box")), i));
        return principal_eig(dom, f.values()).lambda;
    });
    std::sort(lam.begin(), lam.end());
    const double n = static_cast<double>(replicas);
    const double k = n * (1 - q.level);
    const double half = 1.96 * std::sqrt(n * q.level * (1 - q.level));
    auto at = [&](double pos) {
        const auto i = static_cast<std::size_t>(std::clamp(std::floor(pos), 0.0, n - 1));
        return lam[i];
    };
    q.value = at(k);
    q.lower = at(k - half);
    q.upper = at(k + half);
    return q;
}

} // namespace pam
