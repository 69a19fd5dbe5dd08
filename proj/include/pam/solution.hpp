#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "pam/errors.hpp"
#include "pam/lattice.hpp"
#include "pam/potential.hpp"
#include "pam/spectral.hpp"

namespace pam {

/// u(., t) on a solve window for the initial condition u(., 0) = 1_0.
struct SolutionField {
    LatticeDomain domain;
    std::vector<double> values;
    double t = 0;
    std::string method;  // "spectral", "ode" or "feynman-kac"
    double total_mass = 0;
    std::vector<double> mc_stderr;  // per site, Monte Carlo only
    double total_mass_stderr = 0;   // Monte Carlo only
    double error_estimate = 0;      // ode: accumulated local error; spectral: truncation plus round-off bound (relative to U)
    std::size_t clipped = 0;        // spectral: round-off negatives set to zero
    double boundary_loss = 0;       // ode: integrated Dirichlet outflow of the free heat flow part
    std::size_t escaped = 0;        // feynman-kac: paths that left the window

    double at(const Site& x) const {
        const long i = domain.index_of(x);
        return i < 0 ? 0.0 : values[static_cast<std::size_t>(i)];
    }
};

inline std::size_t origin_index(const LatticeDomain& domain) {
    const long i = domain.index_of(Site{});
    require(i >= 0, ErrorKind::InvalidParameter, "solve domain must contain the origin");
    return static_cast<std::size_t>(i);
}

inline SolutionField initial_solution(const LatticeDomain& domain, std::string method) {
    SolutionField s;
    s.domain = domain;
    s.values.assign(domain.size(), 0.0);
    s.values[origin_index(domain)] = 1.0;
    s.method = std::move(method);
    s.total_mass = 1.0;
    return s;
}

struct SpectralSolveOptions {
    std::size_t dense_cap = kDefaultDenseCap;
    std::size_t top_k = 0;          // 0: dense reconstruction; otherwise truncate to K eigenpairs
    double remainder_tol = 1e-10;   // bound on the relative truncation error of U
    double roundoff_tol = 1e-8;     // largest admissible relative round-off bound
    double clip_tol = 1e-14;        // negatives above -clip_tol * U, or above the round-off bound, are clipped
    SpectralOptions eig{};
};

/// Eigenpairs of H on a domain, reusable for reconstructions at many times.
struct SpectralBasis {
    LatticeDomain domain;
    double hnorm = 0;  // max|V| + 2d
    std::vector<double> lambdas;
    std::vector<std::vector<double>> phis;
    std::optional<double> next_lambda;  // first discarded eigenvalue of a top-k truncation
};

inline SpectralBasis spectral_basis(const LatticeDomain& domain, std::span<const double> V,
                                    const SpectralSolveOptions& opts = {}) {
    require(V.size() == domain.size(), ErrorKind::InvalidParameter, "potential size does not match domain");
    origin_index(domain);
    SpectralBasis b;
    b.domain = domain;
    for (double v : V) b.hnorm = std::max(b.hnorm, std::abs(v));
    b.hnorm += 2.0 * domain.degree();
    const std::size_t n = domain.size();
    if (opts.top_k == 0) {
        require(n <= opts.dense_cap, ErrorKind::Resource,
                "domain of " + std::to_string(n) + " sites exceeds the dense cap; configure a top-k truncation");
        const auto spec = dense_oracle(domain, V, opts.dense_cap);
        b.lambdas = spec.values;
        for (std::size_t k = 0; k < n; ++k) {
            const auto col = spec.vectors.col(static_cast<Eigen::Index>(k));
            b.phis.emplace_back(col.data(), col.data() + n);
        }
    } else {
        const std::size_t K = std::min(opts.top_k, n);
        auto pairs = top_k_eigs(domain, V, std::min(K + 1, n), opts.eig);
        for (std::size_t k = 0; k < K; ++k) {
            b.lambdas.push_back(pairs[k].lambda);
            b.phis.push_back(std::move(pairs[k].phi));
        }
        if (K < n) b.next_lambda = pairs[K].lambda;
    }
    return b;
}

/// u(x,t) = sum_k e^{t lambda_k} phi_k(x) phi_k(0).
inline SolutionField solve_spectral(const SpectralBasis& b, double t, const SpectralSolveOptions& opts = {}) {
    require(t >= 0 && std::isfinite(t), ErrorKind::InvalidParameter, "time must be finite and non-negative");
    const LatticeDomain& domain = b.domain;
    const std::size_t o = origin_index(domain);
    SolutionField s = initial_solution(domain, "spectral");
    s.t = t;
    if (t == 0) return s;

    const std::size_t n = domain.size();
    const double top = b.lambdas.front();
    if (b.next_lambda) {
        // |sum_{k>K} a_k phi_k(x)| summed over x is at most sqrt(n) e^{t lambda_{K+1}} by Cauchy-Schwarz.
        s.error_estimate = std::sqrt(static_cast<double>(n)) * std::exp(t * (*b.next_lambda - top));
    }
    require(t * top < 700, ErrorKind::Accuracy, "e^{t lambda_1} overflows double precision");
    std::vector<double> u(n, 0.0);
    for (std::size_t k = 0; k < b.lambdas.size(); ++k) {
        const double w = std::exp(t * (b.lambdas[k] - top)) * b.phis[k][o];
        if (w == 0) continue;
        for (std::size_t x = 0; x < n; ++x) u[x] += w * b.phis[k][x];
    }
    double mass = 0;
    for (double v : u) mass += v;
    require(mass > 0, ErrorKind::Accuracy, "spectral reconstruction lost all mass to round-off");
    if (s.error_estimate > 0) {
        s.error_estimate /= mass;
        require(s.error_estimate <= opts.remainder_tol, ErrorKind::Accuracy,
                "top-k truncation remainder " + std::to_string(s.error_estimate) + " exceeds tolerance");
    }
    // Backward error of the eigendecomposition, propagated through exp(tH), in units of e^{t lambda_1}.
    const double roundoff = 10 * std::numeric_limits<double>::epsilon() * static_cast<double>(n) * std::max(1.0, t * b.hnorm);
    require(roundoff / mass <= opts.roundoff_tol, ErrorKind::Accuracy,
            "spectral reconstruction is round-off dominated (relative bound " + std::to_string(roundoff / mass) +
                "); the origin barely overlaps the leading eigenfunctions");
    s.error_estimate += roundoff / mass;
    const double floor = -std::max(opts.clip_tol * mass, roundoff);
    for (double& v : u) {
        if (v >= 0) continue;
        require(v >= floor, ErrorKind::Accuracy,
                "negative value " + std::to_string(v / mass) + " (relative) exceeds round-off level");
        v = 0;
        ++s.clipped;
    }
    const double scale = std::exp(t * top);
    s.total_mass = 0;
    for (std::size_t x = 0; x < n; ++x) {
        s.values[x] = u[x] * scale;
        s.total_mass += s.values[x];
    }
    return s;
}

inline SolutionField solve_spectral(const LatticeDomain& domain, std::span<const double> V, double t,
                                    const SpectralSolveOptions& opts = {}) {
    require(V.size() == domain.size(), ErrorKind::InvalidParameter, "potential size does not match domain");
    require(t >= 0 && std::isfinite(t), ErrorKind::InvalidParameter, "time must be finite and non-negative");
    if (t == 0) {
        SolutionField s = initial_solution(domain, "spectral");
        return s;
    }
    return solve_spectral(spectral_basis(domain, V, opts), t, opts);
}

inline SolutionField solve_spectral(const LatticeDomain& domain, const PotentialField& field, double t,
                                    const SpectralSolveOptions& opts = {}) {
    const auto V = field.restrict_to(domain);
    return solve_spectral(domain, V, t, opts);
}

struct OdeOptions {
    double stability_factor = 2.5;  // dt <= c / (4d + max|V|); RK4 is stable on [-2.78, 0]
    double rtol = 1e-11;            // local error per step, relative to the sup norm
    double dt_min = 1e-12;          // step underflow threshold relative to max(1, t)
    long max_steps = 100'000'000;
};

namespace detail {

inline void rk4_step(const LatticeDomain& dom, std::span<const double> V, const std::vector<double>& y, double dt,
                     std::vector<double>& out, std::vector<double> (&k)[4], std::vector<double>& tmp) {
    const std::size_t n = y.size();
    apply_hamiltonian(dom, V, y, k[0]);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * dt * k[0][i];
    apply_hamiltonian(dom, V, tmp, k[1]);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * dt * k[1][i];
    apply_hamiltonian(dom, V, tmp, k[2]);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + dt * k[2][i];
    apply_hamiltonian(dom, V, tmp, k[3]);
    for (std::size_t i = 0; i < n; ++i) out[i] = y[i] + dt / 6 * (k[0][i] + 2 * k[1][i] + 2 * k[2][i] + k[3][i]);
}

inline double sup_norm(const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

} // namespace detail

/// Evolves `start` for a further time t by classical RK4 with step doubling for
/// error control and local extrapolation, capped at the stability limit.
inline SolutionField solve_ode_from(const SolutionField& start, std::span<const double> V, double t,
                                    const OdeOptions& opts = {}) {
    const LatticeDomain& domain = start.domain;
    require(V.size() == domain.size() && start.values.size() == domain.size(), ErrorKind::InvalidParameter,
            "potential size does not match domain");
    require(t >= 0 && std::isfinite(t), ErrorKind::InvalidParameter, "time must be finite and non-negative");
    SolutionField s = start;
    s.method = "ode";
    s.t = start.t + t;
    if (t == 0) return s;
    const std::size_t n = domain.size();
    double vmax = 0;
    for (double v : V) vmax = std::max(vmax, std::abs(v));
    const double dt_stab = opts.stability_factor / (2.0 * domain.degree() + vmax);
    const double dt_floor = opts.dt_min * std::max(1.0, t);

    std::vector<int> exterior(n, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (int j = 0; j < domain.degree(); ++j) exterior[i] += domain.neighbor(i, j) < 0;
    auto outflow = [&](const std::vector<double>& y) {
        double f = 0;
        for (std::size_t i = 0; i < n; ++i) f += exterior[i] * y[i];
        return f;
    };

    std::vector<double> y = s.values, full(n), half(n), two(n), tmp(n);
    std::vector<double> k[4] = {std::vector<double>(n), std::vector<double>(n), std::vector<double>(n),
                                std::vector<double>(n)};
    double now = 0, dt = dt_stab;
    long steps = 0;
    while (now < t) {
        double h = std::min(dt, t - now);
        detail::rk4_step(domain, V, y, h, full, k, tmp);
        detail::rk4_step(domain, V, y, h / 2, half, k, tmp);
        detail::rk4_step(domain, V, half, h / 2, two, k, tmp);
        double diff = 0;
        for (std::size_t i = 0; i < n; ++i) diff = std::max(diff, std::abs(two[i] - full[i]));
        const double err = diff / 15 / std::max(detail::sup_norm(two), std::numeric_limits<double>::min());
        if (err <= opts.rtol) {
            s.boundary_loss += h / 6 * (outflow(y) + 4 * outflow(half) + outflow(two));
            // Local extrapolation: the combination is fifth order, err bounds the fourth-order part.
            for (std::size_t i = 0; i < n; ++i) y[i] = two[i] + (two[i] - full[i]) / 15;
            now = (h == t - now) ? t : now + h;
            s.error_estimate += err;
        }
        const double grow = err == 0 ? 2.0 : std::clamp(0.9 * std::pow(opts.rtol / err, 0.2), 0.2, 2.0);
        dt = std::min(dt_stab, h * grow);
        if (dt < dt_floor)
            fail(ErrorKind::Stiffness, "step size underflow at t = " + std::to_string(now) + " (dt = " + std::to_string(dt) + ")");
        if (++steps > opts.max_steps) fail(ErrorKind::Stiffness, "step budget exhausted at t = " + std::to_string(now));
    }
    s.total_mass = 0;
    for (std::size_t i = 0; i < n; ++i) {
        s.values[i] = std::max(y[i], 0.0);
        s.total_mass += s.values[i];
    }
    return s;
}

/// u(., t) from u(., 0) = 1_0.
inline SolutionField solve_ode(const LatticeDomain& domain, std::span<const double> V, double t,
                               const OdeOptions& opts = {}) {
    return solve_ode_from(initial_solution(domain, "ode"), V, t, opts);
}

inline SolutionField solve_ode(const LatticeDomain& domain, const PotentialField& field, double t,
                               const OdeOptions& opts = {}) {
    const auto V = field.restrict_to(domain);
    return solve_ode(domain, V, t, opts);
}

inline constexpr std::size_t kDefaultExpmCap = 50;

/// exp(tH) by Pade scaling and squaring on the dense matrix. Test oracle only.
inline Eigen::MatrixXd dense_expm(const LatticeDomain& domain, std::span<const double> V, double t,
                                  std::size_t cap = kDefaultExpmCap) {
    require(domain.size() <= cap, ErrorKind::Resource,
            "matrix exponential of " + std::to_string(domain.size()) + " sites exceeds cap " + std::to_string(cap));
    const Eigen::MatrixXd tH = t * assemble_dense(domain, V);
    return tH.exp();
}

/// sup |a - b| / sup |b| over a common domain.
inline double relative_sup_error(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), ErrorKind::InvalidParameter, "size mismatch");
    double diff = 0, ref = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        ref = std::max(ref, std::abs(b[i]));
    }
    return ref == 0 ? diff : diff / ref;
}

/// Fraction of the mass outside the l1 ball B_R(center), for each R.
inline std::vector<double> concentration_profile(const SolutionField& s, const Site& center, const std::vector<int>& radii) {
    require(s.domain.contains(center), ErrorKind::Window, "center " + to_string(center, s.domain.dim()) + " outside window");
    double mass = 0;
    for (double v : s.values) mass += v;
    require(mass > 0, ErrorKind::DegenerateInput, "zero total mass");
    std::vector<double> out;
    out.reserve(radii.size());
    for (int R : radii) {
        double outside = 0;
        for (std::size_t i = 0; i < s.values.size(); ++i)
            if (l1_norm(s.domain.site(i) - center, s.domain.dim()) > R) outside += s.values[i];
        out.push_back(outside / mass);
    }
    return out;
}

/// sum_x |u_a(x)/U_a - u_b(x)/U_b|.
inline double tv_profile_distance(const SolutionField& a, const SolutionField& b) {
    require(a.domain.sites() == b.domain.sites(), ErrorKind::Window, "solutions live on different windows");
    double ma = 0, mb = 0;
    for (double v : a.values) ma += v;
    for (double v : b.values) mb += v;
    require(ma > 0 && mb > 0, ErrorKind::DegenerateInput, "zero total mass");
    double d = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) d += std::abs(a.values[i] / ma - b.values[i] / mb);
    return d;
}

} // namespace pam
