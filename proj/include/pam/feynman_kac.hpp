#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "pam/errors.hpp"
#include "pam/lattice.hpp"
#include "pam/parallel.hpp"
#include "pam/potential.hpp"
#include "pam/rng.hpp"
#include "pam/solution.hpp"
#include "pam/stats.hpp"

namespace pam {

enum class WalkBoundary { Dirichlet, Free };

struct FkOptions {
    WalkBoundary boundary = WalkBoundary::Dirichlet;
    /// Dirichlet: the killing domain. Free: the output window. Defaults to the field window.
    std::optional<Box> window;
    /// Free walks that leave the field window see this potential there; unset means
    /// such paths are an error.
    std::optional<double> outside_value;
    unsigned workers = 1;
    std::size_t chunk = 4096;
};

namespace detail {

struct FkPartial {
    std::vector<double> s1, s2;
    double t1 = 0, t2 = 0;
    std::size_t escaped = 0;
    std::size_t unresolved = 0;
};

inline Philox path_rng(std::uint64_t seed, std::uint64_t purpose, std::uint64_t path) {
    return Philox(seed, derive_stream(purpose, path));
}

} // namespace detail

/// Monte Carlo estimate of u(x,t) = E_0[exp(int_0^t xi(X_s) ds); X_t = x] for the
/// rate-2d simple random walk. The integral is exact: xi is constant between jumps.
inline SolutionField fk_estimate(const PotentialField& field, double t, std::size_t n_paths, std::uint64_t seed,
                                 const FkOptions& opts = {}) {
    require(n_paths >= 1, ErrorKind::InvalidParameter, "n_paths must be at least 1");
    require(t >= 0 && std::isfinite(t), ErrorKind::InvalidParameter, "time must be finite and non-negative");
    const int d = field.dim();
    Box window = opts.window.value_or(field.window());
    window.dim = d;
    require(window.contains(Site{}), ErrorKind::Window, "window must contain the origin");
    if (opts.boundary == WalkBoundary::Dirichlet)
        require(field.window().contains(window), ErrorKind::Window, "Dirichlet window must lie inside the field window");
    const LatticeDomain domain = LatticeDomain::from_box(window);
    const std::size_t n = domain.size();
    const double rate = 2.0 * d;
    const std::uint64_t purpose = stream_tag("feynman-kac");

    auto potential = [&](const Site& x, bool& unknown) {
        if (field.contains(x)) return field(x);
        if (opts.outside_value) return *opts.outside_value;
        unknown = true;
        return 0.0;
    };

    const std::size_t chunks = (n_paths + opts.chunk - 1) / opts.chunk;
    auto run_chunk = [&](std::size_t c) {
        detail::FkPartial p;
        p.s1.assign(n, 0.0);
        p.s2.assign(n, 0.0);
        const std::size_t lo = c * opts.chunk, hi = std::min(n_paths, lo + opts.chunk);
        for (std::size_t path = lo; path < hi; ++path) {
            Philox rng = detail::path_rng(seed, purpose, path);
            Site x{};
            double clock = 0, logw = 0;
            bool killed = false, left = false, unknown = false;
            for (;;) {
                const double hold = rng.exponential(rate);
                const double stay = std::min(hold, t - clock);
                logw += potential(x, unknown) * stay;
                clock += hold;
                if (clock >= t) break;
                const auto dir = static_cast<int>(rng() % static_cast<std::uint64_t>(2 * d));
                x[dir / 2] += (dir % 2 == 0) ? 1 : -1;
                if (!window.contains(x)) {
                    left = true;
                    if (opts.boundary == WalkBoundary::Dirichlet) {
                        killed = true;
                        break;
                    }
                }
            }
            if (unknown) {
                ++p.unresolved;
                continue;
            }
            if (left) ++p.escaped;
            if (killed) continue;
            const double w = std::exp(logw);
            p.t1 += w;
            p.t2 += w * w;
            const long i = domain.index_of(x);
            if (i >= 0) {
                p.s1[static_cast<std::size_t>(i)] += w;
                p.s2[static_cast<std::size_t>(i)] += w * w;
            }
        }
        return p;
    };
    const auto parts = parallel_map(chunks, opts.workers, run_chunk);

    detail::FkPartial tot;
    tot.s1.assign(n, 0.0);
    tot.s2.assign(n, 0.0);
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < n; ++i) {
            tot.s1[i] += p.s1[i];
            tot.s2[i] += p.s2[i];
        }
        tot.t1 += p.t1;
        tot.t2 += p.t2;
        tot.escaped += p.escaped;
        tot.unresolved += p.unresolved;
    }
    require(tot.unresolved == 0, ErrorKind::Window,
            std::to_string(tot.unresolved) + " free paths left the field window and no outside potential was given");

    const double N = static_cast<double>(n_paths);
    auto se = [N](double s1, double s2) {
        if (N < 2) return 0.0;
        return std::sqrt(std::max(0.0, s2 - s1 * s1 / N) / (N * (N - 1)));
    };
    SolutionField s;
    s.domain = domain;
    s.t = t;
    s.method = "feynman-kac";
    s.values.resize(n);
    s.mc_stderr.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        s.values[i] = tot.s1[i] / N;
        s.mc_stderr[i] = se(tot.s1[i], tot.s2[i]);
    }
    s.total_mass = tot.t1 / N;
    s.total_mass_stderr = se(tot.t1, tot.t2);
    s.escaped = tot.escaped;
    return s;
}

/// prod_{i<l} 2d / (2d + gamma - xi(pi_i)): the exact value of
/// E[exp(int_0^{T_l} (xi(X_s) - gamma) ds) | jump chain = pi].
inline double path_weight(std::span<const Site> path, double gamma, const PotentialField& field) {
    const int d = field.dim();
    const double rate = 2.0 * d;
    double w = 1.0;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        require(l1_norm(path[i + 1] - path[i], d) == 1, ErrorKind::InvalidParameter,
                "path step " + std::to_string(i) + " is not a nearest-neighbour step");
        const double xi = field(path[i]);
        require(gamma > xi - rate, ErrorKind::DivergentIntegral,
                "gamma must exceed xi - 2d at " + to_string(path[i], d));
        w *= rate / (rate + gamma - xi);
    }
    return w;
}

/// Monte Carlo estimate of E_z[exp(int_0^tau (V(X_s) - gamma) ds)], tau the exit time of the domain.
inline MeanEstimate exit_functional_mc(const LatticeDomain& domain, std::span<const double> V, const Site& start,
                                       double gamma, std::size_t n_paths, std::uint64_t seed, unsigned workers = 1,
                                       std::size_t chunk = 4096) {
    const long s0 = domain.index_of(start);
    require(s0 >= 0, ErrorKind::Window, "start site outside domain");
    require(n_paths >= 2, ErrorKind::InvalidParameter, "need at least two paths");
    const double rate = domain.degree();
    const std::uint64_t purpose = stream_tag("exit-functional");
    const std::size_t chunks = (n_paths + chunk - 1) / chunk;
    auto run = [&](std::size_t c) {
        std::pair<double, double> acc{0, 0};
        for (std::size_t path = c * chunk; path < std::min(n_paths, (c + 1) * chunk); ++path) {
            Philox rng = detail::path_rng(seed, purpose, path);
            long i = s0;
            double logw = 0;
            while (i >= 0) {
                logw += (V[static_cast<std::size_t>(i)] - gamma) * rng.exponential(rate);
                i = domain.neighbor(static_cast<std::size_t>(i), static_cast<int>(rng() % static_cast<std::uint64_t>(domain.degree())));
            }
            const double w = std::exp(logw);
            acc.first += w;
            acc.second += w * w;
        }
        return acc;
    };
    double s1 = 0, s2 = 0;
    for (const auto& [a, b] : parallel_map(chunks, workers, run)) {
        s1 += a;
        s2 += b;
    }
    const double N = static_cast<double>(n_paths);
    return {s1 / N, std::sqrt(std::max(0.0, s2 - s1 * s1 / N) / (N * (N - 1))), n_paths};
}

/// Monte Carlo estimate of E_x[exp(int_0^{tau_y} (V(X_s) - lambda) ds); tau_y < tau_exit],
/// which equals phi(x)/phi(y) for the principal pair when lambda is its eigenvalue.
inline MeanEstimate eigenfunction_ratio_mc(const LatticeDomain& domain, std::span<const double> V, const Site& x,
                                           const Site& y, double lambda, std::size_t n_paths, std::uint64_t seed,
                                           unsigned workers = 1, std::size_t chunk = 4096) {
    const long sx = domain.index_of(x), sy = domain.index_of(y);
    require(sx >= 0 && sy >= 0, ErrorKind::Window, "sites outside domain");
    require(n_paths >= 2, ErrorKind::InvalidParameter, "need at least two paths");
    const double rate = domain.degree();
    const std::uint64_t purpose = stream_tag("eigenfunction-ratio");
    const std::size_t chunks = (n_paths + chunk - 1) / chunk;
    auto run = [&](std::size_t c) {
        std::pair<double, double> acc{0, 0};
        for (std::size_t path = c * chunk; path < std::min(n_paths, (c + 1) * chunk); ++path) {
            Philox rng = detail::path_rng(seed, purpose, path);
            long i = sx;
            double logw = 0;
            while (i >= 0 && i != sy) {
                logw += (V[static_cast<std::size_t>(i)] - lambda) * rng.exponential(rate);
                i = domain.neighbor(static_cast<std::size_t>(i), static_cast<int>(rng() % static_cast<std::uint64_t>(domain.degree())));
            }
            if (i < 0) continue;
            const double w = std::exp(logw);
            acc.first += w;
            acc.second += w * w;
        }
        return acc;
    };
    double s1 = 0, s2 = 0;
    for (const auto& [a, b] : parallel_map(chunks, workers, run)) {
        s1 += a;
        s2 += b;
    }
    const double N = static_cast<double>(n_paths);
    return {s1 / N, std::sqrt(std::max(0.0, s2 - s1 * s1 / N) / (N * (N - 1))), n_paths};
}

} // namespace pam
