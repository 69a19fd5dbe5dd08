#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pam/errors.hpp"
#include "pam/lattice.hpp"
#include "pam/parallel.hpp"
#include "pam/potential.hpp"
#include "pam/rng.hpp"
#include "pam/spectral.hpp"

namespace pam {

struct ChiOptions {
    double tol = 1e-13;               // on successive eigenvalues
    double stationarity_tol = 1e-9;   // sup |V - rho ln phi^2|
    long max_iter = 20000;
    double damping = 0.5;             // weight of the previous V
    std::size_t dense_limit = 400;    // sites; larger boxes use Lanczos
    std::optional<std::vector<double>> initial;  // defaults to the uniform profile
};

struct ChiSolution {
    double rho = 0;
    int dim = 1;
    int R = 0;
    double chi_R = 0;
    LatticeDomain domain;
    std::vector<double> V;
    std::vector<double> v;    // l1-normalised principal eigenfunction
    std::vector<double> phi;  // l2-normalised principal eigenfunction
    double residual = 0;      // stationarity sup |V - rho ln phi^2|
    long iterations = 0;
    long recenterings = 0;
    bool objective_monotone = true;
    double worst_decrease = 0;
};

namespace detail {

/// Principal pair with the far tail recomputed from the eigenvalue equation,
/// so that tiny entries keep relative accuracy.
inline EigenPair chi_eigenpair(const LatticeDomain& dom, const std::vector<double>& V, std::size_t dense_limit) {
    EigenPair p;
    if (dom.size() <= dense_limit) {
        const auto ds = dense_oracle(dom, V);
        p.lambda = ds.values[0];
        p.phi.resize(dom.size());
        double sign = ds.vectors.col(0).sum() < 0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < dom.size(); ++i) p.phi[i] = sign * ds.vectors(static_cast<Eigen::Index>(i), 0);
    } else {
        SpectralOptions o;
        o.tol = 1e-12;
        p = principal_eig(dom, V, o);
    }
    const double deg = dom.degree();
    std::vector<std::size_t> tail;
    for (std::size_t i = 0; i < dom.size(); ++i)
        if (p.lambda + deg - V[i] >= 2 * deg) tail.push_back(i);
    std::sort(tail.begin(), tail.end(), [&](std::size_t a, std::size_t b) { return std::abs(p.phi[a]) > std::abs(p.phi[b]); });
    for (int sweep = 0; sweep < 500 && !tail.empty(); ++sweep) {
        double change = 0;
        for (auto i : tail) {
            double s = 0;
            for (int j = 0; j < dom.degree(); ++j) {
                const long n = dom.neighbor(i, j);
                if (n >= 0) s += p.phi[static_cast<std::size_t>(n)];
            }
            const double nv = s / (p.lambda + deg - V[i]);
            if (nv != p.phi[i]) change = std::max(change, std::abs(nv - p.phi[i]) / std::max(std::abs(nv), 1e-300));
            p.phi[i] = nv;
        }
        if (change < 1e-15) break;
    }
    double nrm = 0;
    for (double x : p.phi) nrm += x * x;
    nrm = std::sqrt(nrm);
    for (auto& x : p.phi) x /= nrm;
    require(std::all_of(p.phi.begin(), p.phi.end(), [](double x) { return x > 0; }), ErrorKind::Accuracy,
            "principal eigenfunction lost positivity");
    return p;
}

inline void normalise_curly_L(std::vector<double>& V, double rho) {
    const double m = *std::max_element(V.begin(), V.end());
    double s = 0;
    for (double x : V) s += std::exp((x - m) / rho);
    const double shift = m + rho * std::log(s);
    for (auto& x : V) x -= shift;
}

/// Translates V so that its maximum sits at the origin; vacated sites take min V.
inline bool recenter(const LatticeDomain& dom, std::vector<double>& V) {
    const auto am = static_cast<std::size_t>(std::max_element(V.begin(), V.end()) - V.begin());
    const auto origin = static_cast<std::size_t>(dom.index_of(Site{}));
    if (V[origin] >= V[am]) return false;
    const Site a = dom.site(am);
    const double lo = *std::min_element(V.begin(), V.end());
    std::vector<double> out(V.size(), lo);
    for (std::size_t i = 0; i < dom.size(); ++i) {
        const long j = dom.index_of(dom.site(i) + a);
        if (j >= 0) out[i] = V[static_cast<std::size_t>(j)];
    }
    V = std::move(out);
    return true;
}

inline void check_chi_monotone(const std::vector<int>& R_list, const std::vector<double>& chi, double tol) {
    for (std::size_t i = 1; i < chi.size(); ++i)
        require(chi[i - 1] - chi[i] >= -tol, ErrorKind::InternalConsistency,
                "chi increased from R = " + std::to_string(R_list[i - 1]) + " to R = " + std::to_string(R_list[i]) +
                    " by " + std::to_string(chi[i] - chi[i - 1]));
}

inline double stationarity(const std::vector<double>& V, const std::vector<double>& phi, double rho) {
    double r = 0;
    for (std::size_t i = 0; i < V.size(); ++i) r = std::max(r, std::abs(V[i] - rho * std::log(phi[i] * phi[i])));
    return r;
}

} // namespace detail

/// chi_R = -sup { lambda^1_{B_R}(V) : L_{B_R}(V) <= 1 } by the damped fixed point
/// V <- mix(V, rho ln phi^2), renormalised to L = 1 after each step.
inline ChiSolution solve_chi(double rho, int R, int dim = 1, const ChiOptions& opts = {}) {
    check_dim(dim);
    require(rho > 0 && std::isfinite(rho), ErrorKind::InvalidParameter, "rho must be positive");
    require(R >= 0, ErrorKind::InvalidParameter, "R must be non-negative");
    require(opts.damping >= 0 && opts.damping < 1, ErrorKind::InvalidParameter, "damping must lie in [0, 1)");
    ChiSolution s;
    s.rho = rho;
    s.dim = dim;
    s.R = R;
    s.domain = LatticeDomain::from_box(ball(dim, {}, R));
    const std::size_t n = s.domain.size();
    if (opts.initial) {
        require(opts.initial->size() == n, ErrorKind::InvalidParameter, "initial profile has the wrong size");
        s.V = *opts.initial;
    } else {
        s.V.assign(n, -rho * std::log(static_cast<double>(n)));
    }
    detail::normalise_curly_L(s.V, rho);
    if (detail::recenter(s.domain, s.V)) {
        ++s.recenterings;
        detail::normalise_curly_L(s.V, rho);
    }
    double prev = -std::numeric_limits<double>::infinity();
    std::vector<double> trace;
    for (long it = 0;; ++it) {
        const EigenPair p = detail::chi_eigenpair(s.domain, s.V, opts.dense_limit);
        s.iterations = it;
        s.chi_R = -p.lambda;
        s.phi = p.phi;
        s.residual = detail::stationarity(s.V, p.phi, rho);
        trace.push_back(p.lambda);
        if (p.lambda < prev - 1e-12) {
            s.objective_monotone = false;
            s.worst_decrease = std::max(s.worst_decrease, prev - p.lambda);
        }
        if (std::abs(p.lambda - prev) < opts.tol && s.residual < opts.stationarity_tol) break;
        if (n == 1) break;
        if (it >= opts.max_iter) {
            std::ostringstream os;
            os << "chi fixed point did not settle after " << it << " iterations; last eigenvalues";
            for (std::size_t k = trace.size() >= 6 ? trace.size() - 6 : 0; k < trace.size(); ++k) os << ' ' << trace[k];
            throw ConvergenceError(os.str(), s.residual);
        }
        prev = p.lambda;
        for (std::size_t i = 0; i < n; ++i)
            s.V[i] = opts.damping * s.V[i] + (1 - opts.damping) * rho * std::log(p.phi[i] * p.phi[i]);
        detail::normalise_curly_L(s.V, rho);
        if (detail::recenter(s.domain, s.V)) {
            ++s.recenterings;
            detail::normalise_curly_L(s.V, rho);
        }
    }
    const double l1 = std::accumulate(s.phi.begin(), s.phi.end(), 0.0);
    s.v.resize(n);
    for (std::size_t i = 0; i < n; ++i) s.v[i] = s.phi[i] / l1;
    return s;
}

struct ChiScan {
    std::vector<ChiSolution> solutions;
    std::vector<double> differences;  // chi_{R_i} - chi_{R_{i+1}}
    double plateau = 0;               // chi at the largest R
    double extrapolated = 0;          // geometric extrapolation of the tail when it applies
};

inline ChiScan chi_monotonicity_scan(double rho, const std::vector<int>& R_list, int dim = 1,
                                     const ChiOptions& opts = {}, unsigned workers = 1, double mono_tol = 1e-9) {
    require(!R_list.empty(), ErrorKind::InvalidParameter, "empty radius list");
    for (std::size_t i = 1; i < R_list.size(); ++i)
        require(R_list[i] > R_list[i - 1], ErrorKind::InvalidParameter, "radius list must be increasing");
    ChiScan scan;
    scan.solutions = parallel_map(R_list.size(), workers, [&](std::size_t i) { return solve_chi(rho, R_list[i], dim, opts); });
    std::vector<double> chi;
    for (const auto& s : scan.solutions) chi.push_back(s.chi_R);
    detail::check_chi_monotone(R_list, chi, mono_tol);
    for (std::size_t i = 1; i < chi.size(); ++i) scan.differences.push_back(chi[i - 1] - chi[i]);
    scan.plateau = scan.solutions.back().chi_R;
    scan.extrapolated = scan.plateau;
    const auto& d = scan.differences;
    if (d.size() >= 2) {
        const double a = d[d.size() - 2], b = d.back();
        if (a > 0 && b > 0 && b < a) scan.extrapolated = scan.plateau - b * b / (a - b);
    }
    return scan;
}

struct ChiProfile {
    double chi_R = 0;
    std::vector<double> V;
    std::size_t hits = 0;
};

struct ChiMultistart {
    std::vector<ChiProfile> profiles;  // distinct profiles, best chi first
    bool unique = true;
};

/// Solves from the uniform start and from random perturbations of it, and groups
/// the results by sup distance of the centred profiles.
inline ChiMultistart chi_multistart(double rho, int R, int dim, std::size_t starts, std::uint64_t seed,
                                    double amplitude = 1.0, double same_tol = 1e-6, const ChiOptions& opts = {}) {
    ChiMultistart out;
    const LatticeDomain dom = LatticeDomain::from_box(ball(dim, {}, R));
    for (std::size_t k = 0; k <= starts; ++k) {
        ChiOptions o = opts;
        if (k > 0) {
            Philox rng(seed, derive_stream(stream_tag("chi-multistart"), k));
            std::vector<double> V0(dom.size(), -rho * std::log(static_cast<double>(dom.size())));
            for (auto& x : V0) x += amplitude * (2 * rng.uniform() - 1);
            o.initial = std::move(V0);
        }
        const auto s = solve_chi(rho, R, dim, o);
        bool merged = false;
        for (auto& p : out.profiles) {
            double dist = 0;
            for (std::size_t i = 0; i < s.V.size(); ++i) dist = std::max(dist, std::abs(std::exp(s.V[i] / rho) - std::exp(p.V[i] / rho)));
            if (dist < same_tol) {
                ++p.hits;
                merged = true;
                break;
            }
        }
        if (!merged) out.profiles.push_back({s.chi_R, s.V, 1});
    }
    std::sort(out.profiles.begin(), out.profiles.end(), [](const ChiProfile& a, const ChiProfile& b) { return a.chi_R < b.chi_R; });
    out.unique = out.profiles.size() == 1;
    return out;
}

/// sup_{|x|_inf <= mu} |xi(center + x) - hat_a - V(x)|.
inline double profile_distance(const PotentialField& field, const Site& center, const ChiSolution& sol, int mu,
                               double hat_a_value) {
    require(mu >= 0 && mu <= sol.R, ErrorKind::InvalidParameter, "mu must lie in [0, R] of the profile");
    require(field.dim() == sol.dim, ErrorKind::InvalidParameter, "dimension mismatch");
    const Box b = ball(field.dim(), center, mu);
    require(field.window().contains(b), ErrorKind::Window, "B_mu(center) leaves the field window");
    double r = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        const Site x = b.site(i);
        const auto j = static_cast<std::size_t>(sol.domain.index_of(x - center));
        r = std::max(r, std::abs(field(x) - hat_a_value - sol.V[j]));
    }
    return r;
}

} // namespace pam
