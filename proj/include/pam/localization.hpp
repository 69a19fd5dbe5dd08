#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pam/cost_order.hpp"
#include "pam/errors.hpp"
#include "pam/lattice.hpp"
#include "pam/parallel.hpp"
#include "pam/potential.hpp"
#include "pam/spectral.hpp"
#include "pam/stats.hpp"

namespace pam {

inline void check_kappa(double kappa, int dim) {
    require(kappa > 0 && kappa < 1.0 / dim, ErrorKind::InvalidParameter,
            "kappa must lie in (0, 1/d) = (0, " + std::to_string(1.0 / dim) + "), got " + std::to_string(kappa));
}

/// floor(exp(kappa xi / rho)); 0 whenever xi < 0.
inline long capital_radius(double xi, double kappa, double rho, int dim) {
    check_kappa(kappa, dim);
    const double r = std::floor(std::exp(kappa * xi / rho));
    require(r < 1e9, ErrorKind::Resource, "capital radius overflows");
    return static_cast<long>(r);
}

struct Capital {
    Site z{};
    long varrho = 0;
    double xi = 0;
    double lambda_C = 0;  // principal eigenvalue on B_varrho(z)
    std::optional<EigenPair> eigpair;
};

enum class MarginPolicy {
    Error,    // an undecidable site raises a window error
    Exclude,  // undecidable sites are skipped and listed
};

struct CapitalOptions {
    MarginPolicy margin = MarginPolicy::Error;
    bool keep_eigenpairs = false;
    unsigned workers = 1;
    SpectralOptions eig{};
};

struct CapitalSet {
    Box search_window;
    double kappa = 0;
    std::vector<Capital> capitals;  // in row-major window order
    std::vector<Site> excluded;     // capital candidates whose ball leaves the field window
};

/// Domain and potential of B_r(z) within the field window.
inline std::pair<LatticeDomain, std::vector<double>> local_box(const PotentialField& field, const Site& z, long r) {
    const LatticeDomain dom = LatticeDomain::from_box(ball(field.dim(), z, static_cast<int>(r)));
    return {dom, field.restrict_to(dom)};
}

/// All z in the search window with xi(z) >= xi(y) for every y in B_{varrho_z}(z).
/// A site whose ball leaves the field window is undecidable only if it beats
/// every visible site of the ball; sites beaten inside the window are simply not capitals.
inline CapitalSet find_capitals(const PotentialField& field, Box search_window, double kappa,
                                const CapitalOptions& opts = {}) {
    const int d = field.dim();
    check_kappa(kappa, d);
    search_window.dim = d;
    require(field.window().contains(search_window), ErrorKind::Window, "search window exceeds the field window");
    CapitalSet out;
    out.search_window = search_window;
    out.kappa = kappa;
    const Box& fw = field.window();
    for (std::size_t i = 0; i < search_window.size(); ++i) {
        const Site z = search_window.site(i);
        const double xz = field(z);
        const long r = capital_radius(xz, kappa, field.rho(), d);
        const Box b = ball(d, z, static_cast<int>(r));
        bool dominated = false;
        // Nearest neighbours first: most sites fail there.
        for (int j = 0; j < 2 * d && !dominated && r >= 1; ++j) {
            Site y = z;
            y[j / 2] += j % 2 ? -1 : 1;
            if (fw.contains(y) && field(y) > xz) dominated = true;
        }
        for (std::size_t k = 0; k < b.size() && !dominated; ++k) {
            const Site y = b.site(k);
            if (fw.contains(y) && field(y) > xz) dominated = true;
        }
        if (dominated) continue;
        if (!fw.contains(b)) {
            if (opts.margin == MarginPolicy::Error)
                fail(ErrorKind::Window, "capital candidate " + to_string(z, d) + " with radius " + std::to_string(r) +
                                            " needs sites outside the field window");
            out.excluded.push_back(z);
            continue;
        }
        Capital c;
        c.z = z;
        c.varrho = r;
        c.xi = xz;
        out.capitals.push_back(c);
    }
    auto solve = [&](std::size_t i) {
        const auto& c = out.capitals[i];
        auto [dom, V] = local_box(field, c.z, c.varrho);
        return principal_eig(dom, V, opts.eig);
    };
    auto pairs = parallel_map(out.capitals.size(), opts.workers, solve);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        out.capitals[i].lambda_C = pairs[i].lambda;
        if (opts.keep_eigenpairs) out.capitals[i].eigpair = std::move(pairs[i]);
    }
    return out;
}

/// Penalty numerator (ln3+|z| - c)^+ |z| of the cost functional.
inline double cost_penalty(const Site& z, int dim, double c) {
    const double r = l1_norm(z, dim);
    return std::max(0.0, ln3_plus(r) - c) * r;
}

/// Psi_{t,c}(z) = lambda^C(z) - (ln3+|z| - c)^+ |z| / t.
inline double psi(const Capital& cap, int dim, double t, double c = 0.0) {
    require(t > 0, ErrorKind::InvalidParameter, "t must be positive");
    return cap.lambda_C - cost_penalty(cap.z, dim, c) / t;
}

struct OrderEntry {
    std::size_t rank = 0;
    double psi = 0;
    Site z{};
    double lambda_C = 0;
    std::size_t capital_index = 0;
};

struct OrderStats {
    double t = 0;
    std::vector<OrderEntry> entries;
    Box search_window;
};

inline std::vector<RankedPoint<Site>> ranked_capitals(std::span<const Capital> caps, int dim, double c) {
    std::vector<RankedPoint<Site>> pts;
    pts.reserve(caps.size());
    for (const auto& cap : caps) pts.push_back({cap.lambda_C, cost_penalty(cap.z, dim, c), cap.z});
    return pts;
}

inline OrderStats order_stats(std::span<const Capital> caps, int dim, double t, std::size_t k, double c = 0.0) {
    require(!caps.empty(), ErrorKind::DegenerateInput, "empty capital list");
    require(t > 0, ErrorKind::InvalidParameter, "t must be positive");
    const auto pts = ranked_capitals(caps, dim, c);
    const auto idx = top_k_order<Site>(pts, t, k);
    OrderStats os;
    os.t = t;
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto& cap = caps[idx[r]];
        os.entries.push_back({r + 1, score(pts[idx[r]], t), cap.z, cap.lambda_C, idx[r]});
    }
    return os;
}

inline OrderStats order_stats(const CapitalSet& set, int dim, double t, std::size_t k, double c = 0.0) {
    OrderStats os = order_stats(std::span<const Capital>(set.capitals), dim, t, k, c);
    os.search_window = set.search_window;
    return os;
}

/// Radius of the box the localization centre stays in up to time t: floor(t ln2+ t).
inline long macro_box_radius(double t) { return static_cast<long>(std::floor(t * ln2_plus(t))); }

struct ZTrajectory {
    std::vector<OrderStats> stats;  // one per grid time
    std::vector<double> jump_times; // exact rank-1 jumps within [t_first, t_last]
    std::vector<Site> leaders;      // rank-1 capital after each exact breakpoint, starting at t_first
};

/// Order statistics along a time grid from one fixed capital set; rank-1 jumps
/// are computed exactly between the first and last grid time.
inline ZTrajectory z_trajectory(const CapitalSet& set, int dim, std::span<const double> t_grid, std::size_t k,
                                double c = 0.0) {
    require(!t_grid.empty(), ErrorKind::InvalidParameter, "empty time grid");
    for (std::size_t i = 1; i < t_grid.size(); ++i)
        require(t_grid[i] > t_grid[i - 1], ErrorKind::InvalidParameter, "time grid must be increasing");
    require(t_grid.front() > 0, ErrorKind::InvalidParameter, "times must be positive");
    const long L = macro_box_radius(t_grid.back());
    require(set.search_window.radius >= L && set.search_window.contains(Site{}), ErrorKind::Window,
            "search window radius " + std::to_string(set.search_window.radius) + " is below L_t = " +
                std::to_string(L) + " for t = " + std::to_string(t_grid.back()));
    ZTrajectory tr;
    for (double t : t_grid) tr.stats.push_back(order_stats(set, dim, t, std::min(k, set.capitals.size()), c));
    const auto pts = ranked_capitals(set.capitals, dim, c);
    if (t_grid.size() >= 2) {
        const auto path = leader_path<Site>(pts, t_grid.front(), t_grid.back());
        tr.jump_times.assign(path.thetas.begin() + 1, path.thetas.end());
        for (auto i : path.leaders) tr.leaders.push_back(set.capitals[i].z);
    } else {
        tr.leaders.push_back(tr.stats.front().entries.front().z);
    }
    return tr;
}

inline ZTrajectory z_trajectory(const PotentialField& field, std::span<const double> t_grid, double kappa,
                                std::size_t k, double c = 0.0, const CapitalOptions& opts = {}) {
    require(!t_grid.empty(), ErrorKind::InvalidParameter, "empty time grid");
    const long L = macro_box_radius(t_grid.back());
    require(L <= field.window().radius, ErrorKind::Window,
            "field window too small for t = " + std::to_string(t_grid.back()) + " (needs radius " + std::to_string(L) + ")");
    const auto set = find_capitals(field, ball(field.dim(), {}, static_cast<int>(L)), kappa, opts);
    require(!set.capitals.empty(), ErrorKind::DegenerateInput, "no capitals in the search window");
    return z_trajectory(set, field.dim(), t_grid, k, c);
}

// --- islands -----------------------------------------------------------------------------

/// min(ceil((ln L)^beta), floor((ln L) v 1)), at least 1.
inline long island_radius(double L, double beta) {
    const double l = std::log(L);
    const double a = std::ceil(std::pow(std::max(l, 0.0), beta));
    const double b = std::floor(std::max(l, 1.0));
    return std::max(1L, static_cast<long>(std::min(a, b)));
}

struct Island {
    std::vector<Site> sites;  // sorted
    Site z_C{};
    double lambda1 = 0;
    bool relevant = false;
};

struct IslandParams {
    double L = 0;
    double A = 10;
    double beta_R = 0;
    double kappa = 0;  // only used to validate beta_R > kappa
    double chi = 0;
    double delta = 0.5;
};

struct IslandSet {
    long R_L = 0;
    double hat_a_L = 0;
    std::vector<Site> exceedances;
    std::vector<Island> islands;  // ordered by their smallest site
};

inline IslandSet islands(const PotentialField& field, const IslandParams& p, const SpectralOptions& eig = {}) {
    const int d = field.dim();
    require(p.A > 0, ErrorKind::InvalidParameter, "A must be positive");
    require(p.L >= 2, ErrorKind::InvalidParameter, "L must be at least 2");
    require(p.beta_R > p.kappa && p.beta_R < 1.0 / d, ErrorKind::InvalidParameter,
            "beta_R must lie in (kappa, 1/d)");
    const int L = static_cast<int>(std::floor(p.L));
    const Box BL = ball(d, {}, L);
    require(field.window().contains(BL), ErrorKind::Window, "field window does not contain B_L");
    IslandSet out;
    out.R_L = island_radius(p.L, p.beta_R);
    out.hat_a_L = hat_a(p.L, d, field.rho());
    const double level = out.hat_a_L - 2 * p.A;
    std::vector<char> inD(BL.size(), 0);
    for (std::size_t i = 0; i < BL.size(); ++i) {
        const Site z = BL.site(i);
        if (!(field(z) > level)) continue;
        out.exceedances.push_back(z);
        Box b = ball(d, z, static_cast<int>(out.R_L));
        for (std::size_t k = 0; k < b.size(); ++k) {
            const Site y = b.site(k);
            if (BL.contains(y)) inD[BL.index(y)] = 1;
        }
    }
    std::vector<Site> sites;
    for (std::size_t i = 0; i < BL.size(); ++i)
        if (inD[i]) sites.push_back(BL.site(i));
    if (sites.empty()) return out;
    const auto D = LatticeDomain::from_sites(d, sites);
    for (const auto& comp : D.components()) {
        Island isl;
        const auto sub = D.subdomain(comp);
        const auto V = field.restrict_to(sub);
        isl.sites = sub.sites();
        std::size_t best = 0;
        for (std::size_t i = 1; i < V.size(); ++i)
            if (V[i] > V[best] || (V[i] == V[best] && isl.sites[i] < isl.sites[best])) best = i;
        isl.z_C = isl.sites[best];
        isl.lambda1 = principal_eig(sub, V, eig).lambda;
        isl.relevant = isl.lambda1 > out.hat_a_L - p.chi - p.delta;
        out.islands.push_back(std::move(isl));
    }
    return out;
}

/// sum_x e^{V(x)/rho}; -infinity entries contribute nothing.
inline double curly_L(std::span<const double> V, double rho) {
    double s = 0;
    for (double v : V) s += std::exp(v / rho);
    return s;
}

/// Least-squares fit of ln phi(x) against |x - center| over sites with phi > 1e-14.
inline LineFit eigfun_decay_fit(const LatticeDomain& domain, const EigenPair& p, const Site& center) {
    std::vector<double> r, y;
    for (std::size_t i = 0; i < domain.size(); ++i) {
        if (!(p.phi[i] > 1e-14)) continue;
        r.push_back(l1_norm(domain.site(i) - center, domain.dim()));
        y.push_back(std::log(p.phi[i]));
    }
    require(r.size() >= 3, ErrorKind::InsufficientData, "fewer than 3 sites with a usable eigenfunction value");
    return fit_line(r, y);
}

} // namespace pam
