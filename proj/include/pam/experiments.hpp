#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pam/config.hpp"
#include "pam/errors.hpp"
#include "pam/feynman_kac.hpp"
#include "pam/io.hpp"
#include "pam/limits.hpp"
#include "pam/localization.hpp"
#include "pam/parallel.hpp"
#include "pam/potential.hpp"
#include "pam/rng.hpp"
#include "pam/solution.hpp"
#include "pam/stats.hpp"
#include "pam/variational.hpp"

namespace pam {

/// Seed of replica (or instance) i: derive_stream(derive_stream(seed, stream_tag(experiment)), i).
inline std::uint64_t replica_seed(const ExperimentConfig& c, std::uint64_t i) {
    return derive_stream(derive_stream(c.seed, stream_tag(c.experiment)), i);
}

/// Seed of the point-process part of a run.
inline std::uint64_t ppp_seed(const ExperimentConfig& c) { return derive_stream(c.seed, stream_tag("ppp")); }

struct RunResult {
    std::filesystem::path directory;
    nlohmann::json manifest;
    bool complete = false;
};

/// Rows of (function, dim, theta, x, value, error) for the closed-form limit laws and the aging tail.
inline std::size_t write_oracle_values(const std::filesystem::path& path, int dim, const std::vector<double>& thetas,
                                       const std::vector<double>& s_extra) {
    CsvWriter w(path, {"function", "dim", "theta", "x", "value", "error"});
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (double th : thetas) {
        const double loc = dim * std::log(2 * th);
        for (int j = 0; j <= 320; ++j) {
            const double x = loc - 4 + 0.05 * j;
            w.row("gumbel_cdf", dim, th, x, limit_cdf_gumbel(x, th, dim), 0.0);
        }
        for (int j = 0; j <= 320; ++j) {
            const double x = th * (-8 + 0.05 * j);
            w.row("laplace_cdf", dim, th, x, limit_cdf_laplace(x, th), 0.0);
        }
    }
    std::vector<double> s = s_extra;
    for (int j = 0; j <= 120; ++j) s.push_back(std::pow(10.0, -2 + j / 20.0));
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    double dd = 1, fact = 1;
    for (int k = 1; k <= dim; ++k) {
        dd *= dim;
        fact *= k;
    }
    for (double x : s) {
        const auto o = aging_tail_oracle(x, dim);
        w.row("theta_tail_oracle", dim, nan, x, o.value, o.error);
    }
    for (double x : s) {
        if (x <= 1) continue;
        w.row("theta_tail_asymptote", dim, nan, x, std::pow(std::log(x), dim) * dd / (fact * std::pow(x, dim)), 0.0);
    }
    return w.rows();
}

namespace detail {

template <class R>
struct Attempt {
    std::optional<R> value;
    ErrorKind kind = ErrorKind::InternalConsistency;
    std::string what;
};

template <class Fn>
auto attempt_all(std::size_t n, unsigned workers, Fn&& fn) {
    using R = decltype(fn(std::size_t{}));
    return parallel_map(n, workers, [&](std::size_t i) {
        Attempt<R> a;
        try {
            a.value.emplace(fn(i));
        } catch (const Error& e) {
            a.kind = e.kind();
            a.what = e.what();
        } catch (const std::exception& e) {
            a.what = e.what();
        }
        return a;
    });
}

class Run {
public:
    explicit Run(const ExperimentConfig& c) : cfg(c), dir(c.output_dir), start_(std::chrono::steady_clock::now()) {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        require(!ec, ErrorKind::Resource, "cannot create output directory " + dir.string() + ": " + ec.message());
        manifest["experiment"] = c.experiment;
        manifest["config"] = config_to_json(c);
        manifest["build"] = build_info();
        manifest["seed"] = c.seed;
        manifest["outputs"] = nlohmann::json::array();
        manifest["summary"] = nlohmann::json::object();
        manifest["complete"] = false;
    }

    CsvWriter& csv(const std::string& name, std::vector<std::string> header) {
        writers_.emplace_back(name, std::make_unique<CsvWriter>(dir / name, std::move(header)));
        return *writers_.back().second;
    }

    void note_file(const std::string& name, std::size_t rows) { extra_.emplace_back(name, rows); }

    void lineage(const std::string& text) { manifest["seed_lineage"] = text; }

    nlohmann::json& summary() { return manifest["summary"]; }

    void stage(const std::string& name) {
        const auto now = std::chrono::steady_clock::now();
        manifest["timings"][name] = std::chrono::duration<double>(now - last_).count();
        last_ = now;
    }

    /// Records the failure, writes the manifest and throws with experiment context.
    [[noreturn]] void fail_with(ErrorKind kind, const std::string& where, const std::string& what) {
        manifest["error"] = {{"kind", to_string(kind)}, {"where", where}, {"message", what}};
        finish(false);
        fail(kind, "experiment " + cfg.experiment + ", " + where + ": " + what);
    }

    template <class R>
    const R& value_or_fail(const Attempt<R>& a, const std::string& where) {
        if (!a.value) fail_with(a.kind, where, a.what);
        return *a.value;
    }

    RunResult finish(bool complete) {
        for (auto& [name, w] : writers_) {
            w->flush();
            manifest["outputs"].push_back({{"file", name}, {"rows", w->rows()}});
        }
        for (auto& [name, rows] : extra_) manifest["outputs"].push_back({{"file", name}, {"rows", rows}});
        writers_.clear();
        extra_.clear();
        manifest["complete"] = complete;
        manifest["timings"]["total_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        write_json(dir / "run_manifest.json", manifest);
        return {dir, manifest, complete};
    }

    const ExperimentConfig& cfg;
    std::filesystem::path dir;
    nlohmann::json manifest;

private:
    std::vector<std::pair<std::string, std::unique_ptr<CsvWriter>>> writers_;
    std::vector<std::pair<std::string, std::size_t>> extra_;
    std::chrono::steady_clock::time_point start_;
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

inline MarginPolicy margin_policy(const ExperimentConfig& c) {
    return c.window_policy == "error" ? MarginPolicy::Error : MarginPolicy::Exclude;
}

inline std::string where_replica(std::size_t i) { return "replica " + std::to_string(i); }

/// u(., t) on a domain: dense spectral when it is small and accurate enough, otherwise the ODE.
inline SolutionField solve_auto(const LatticeDomain& dom, std::span<const double> V, double t) {
    if (dom.size() <= kDefaultDenseCap) {
        try {
            return solve_spectral(dom, V, t);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Accuracy) throw;
        }
    }
    return solve_ode(dom, V, t);
}

inline double chi_for_islands(const ExperimentConfig& c) {
    const int R = c.R.empty() ? 6 : static_cast<int>(c.R.back());
    return solve_chi(c.rho, R, c.dim).chi_R;
}

// --- mass-concentration -------------------------------------------------------------------

struct ConcentrationRecord {
    double t = 0;
    OrderEntry leader;
    Site argmax{};
    double mass = 0;
    std::string method;
    double boundary_loss = 0;
    double island_mass = 0;
    bool island_relevant = false;
    bool in_island = false;
    std::size_t excluded = 0;
    std::vector<double> fractions;
};

inline RunResult run_mass_concentration(Run& run) {
    const auto& c = run.cfg;
    const int d = c.dim;
    run.lineage("field seed of replica i = derive_stream(derive_stream(seed, stream_tag(experiment)), i); "
                "the field is sample_field(dim, ball(window_radius), rho, field seed)");
    const double chi = chi_for_islands(c);
    run.summary()["chi_for_islands"] = chi;
    run.stage("chi");
    const long W = field_window_radius(c);
    std::vector<int> radii;
    for (int r = 0; r <= c.radius_max; ++r) radii.push_back(r);

    auto results = attempt_all(c.replicas, static_cast<unsigned>(c.workers), [&](std::size_t i) {
        const auto field = sample_field(d, ball(d, {}, static_cast<int>(W)), c.rho, replica_seed(c, i));
        std::vector<ConcentrationRecord> out;
        for (double t : c.t) {
            ConcentrationRecord r;
            r.t = t;
            const long L = macro_box_radius(t);
            CapitalOptions co;
            co.margin = margin_policy(c);
            const auto set = find_capitals(field, ball(d, {}, static_cast<int>(L)), c.kappa, co);
            require(!set.capitals.empty(), ErrorKind::DegenerateInput, "no capitals in the search window");
            r.excluded = set.excluded.size();
            r.leader = order_stats(set, d, t, 1).entries.front();
            const LatticeDomain dom = LatticeDomain::from_box(ball(d, {}, static_cast<int>(L)));
            const auto V = field.restrict_to(dom);
            const auto u = solve_auto(dom, V, t);
            r.method = u.method;
            r.boundary_loss = u.boundary_loss;
            r.mass = u.total_mass;
            r.argmax = dom.site(static_cast<std::size_t>(std::max_element(u.values.begin(), u.values.end()) - u.values.begin()));
            r.fractions = concentration_profile(u, r.leader.z, radii);
            IslandParams ip;
            ip.L = static_cast<double>(L);
            ip.A = c.A;
            ip.beta_R = c.beta;
            ip.kappa = c.kappa;
            ip.chi = chi;
            ip.delta = c.delta;
            const auto isl = islands(field, ip);
            for (const auto& is : isl.islands) {
                if (!std::binary_search(is.sites.begin(), is.sites.end(), r.leader.z)) continue;
                r.in_island = true;
                r.island_relevant = is.relevant;
                for (const auto& x : is.sites) r.island_mass += u.at(x);
                r.island_mass /= u.total_mass;
            }
            out.push_back(std::move(r));
        }
        return out;
    });
    run.stage("replicas");

    auto& prof = run.csv("concentration.csv", {"replica", "seed", "t", "R", "fraction_outside"});
    auto& cent = run.csv("centers.csv", concat(concat(concat({"replica", "seed", "t"}, coord_columns(d, "z")),
                                                      {"lambda_C", "psi"}),
                                               concat(coord_columns(d, "argmax"),
                                                      {"total_mass", "method", "boundary_loss", "in_island",
                                                       "island_relevant", "island_mass", "excluded"})));
    std::size_t monotone = 0, below_half = 0, profiles = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& recs = run.value_or_fail(results[i], where_replica(i));
        const auto seed = replica_seed(c, i);
        for (const auto& r : recs) {
            for (std::size_t k = 0; k < radii.size(); ++k) prof.row(i, seed, r.t, radii[k], r.fractions[k]);
            cent.row_fields(concat(concat(concat({CsvWriter::field(i), CsvWriter::field(seed), CsvWriter::field(r.t)},
                                                 coord_fields(r.leader.z, d)),
                                          {CsvWriter::field(r.leader.lambda_C), CsvWriter::field(r.leader.psi)}),
                                   concat(coord_fields(r.argmax, d),
                                          {CsvWriter::field(r.mass), r.method, CsvWriter::field(r.boundary_loss),
                                           CsvWriter::field(r.in_island), CsvWriter::field(r.island_relevant),
                                           CsvWriter::field(r.island_mass), CsvWriter::field(r.excluded)})));
            ++profiles;
            monotone += std::is_sorted(r.fractions.rbegin(), r.fractions.rend());
            below_half += std::any_of(r.fractions.begin(), r.fractions.end(), [](double f) { return f < 0.5; });
        }
    }
    run.summary()["profiles"] = profiles;
    run.summary()["monotone_profiles"] = monotone;
    run.summary()["profiles_below_half"] = below_half;
    return run.finish(true);
}

// --- aging of Z ---------------------------------------------------------------------------

struct AgingZRecord {
    double t = 0;
    std::vector<bool> same_at, same_throughout;
    double first_jump_theta = 0;
    std::size_t jumps = 0;
    std::size_t excluded = 0;
};

inline std::vector<AgingZRecord> aging_z_replica(const ExperimentConfig& c, const PotentialField& field) {
    const int d = c.dim;
    std::vector<AgingZRecord> out;
    for (double t : c.t) {
        AgingZRecord r;
        r.t = t;
        std::vector<double> grid = {t};
        for (double s : c.s) grid.push_back(t * (1 + s));
        CapitalOptions co;
        co.margin = margin_policy(c);
        const long L = macro_box_radius(grid.back());
        const auto set = find_capitals(field, ball(d, {}, static_cast<int>(L)), c.kappa, co);
        require(!set.capitals.empty(), ErrorKind::DegenerateInput, "no capitals in the search window");
        r.excluded = set.excluded.size();
        const auto tr = z_trajectory(set, d, grid, 1);
        const Site z0 = tr.stats.front().entries.front().z;
        const double first = tr.jump_times.empty() ? std::numeric_limits<double>::infinity() : tr.jump_times.front();
        r.first_jump_theta = first / t - 1;
        r.jumps = tr.jump_times.size();
        for (std::size_t j = 0; j < c.s.size(); ++j) {
            r.same_at.push_back(tr.stats[j + 1].entries.front().z == z0);
            r.same_throughout.push_back(first > grid[j + 1]);
        }
        out.push_back(std::move(r));
    }
    return out;
}

inline RunResult run_aging_z(Run& run) {
    const auto& c = run.cfg;
    const int d = c.dim;
    run.lineage("field seed of replica i = derive_stream(derive_stream(seed, stream_tag(experiment)), i); "
                "point-process draws use theta_draw(dim, derive_stream(seed, stream_tag(\"ppp\")), index)");
    const long W = field_window_radius(c);
    auto results = attempt_all(c.replicas, static_cast<unsigned>(c.workers), [&](std::size_t i) {
        const auto field = sample_field(d, ball(d, {}, static_cast<int>(W)), c.rho, replica_seed(c, i));
        return aging_z_replica(c, field);
    });
    run.stage("replicas");
    auto& rows = run.csv("aging_z.csv", {"replica", "seed", "t", "s", "same_at", "same_throughout"});
    auto& jumps = run.csv("aging_z_jumps.csv", {"replica", "seed", "t", "first_jump_theta", "jumps", "excluded"});
    std::vector<std::vector<double>> at(c.t.size() * c.s.size()), thr(c.t.size() * c.s.size());
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& recs = run.value_or_fail(results[i], where_replica(i));
        const auto seed = replica_seed(c, i);
        for (std::size_t a = 0; a < recs.size(); ++a) {
            const auto& r = recs[a];
            jumps.row(i, seed, r.t, r.first_jump_theta, r.jumps, r.excluded);
            for (std::size_t j = 0; j < c.s.size(); ++j) {
                rows.row(i, seed, r.t, c.s[j], r.same_at[j], r.same_throughout[j]);
                at[a * c.s.size() + j].push_back(r.same_at[j]);
                thr[a * c.s.size() + j].push_back(r.same_throughout[j]);
            }
        }
    }
    ThetaSamples th;
    try {
        th = theta_sampler(d, c.samples, ppp_seed(c), {}, static_cast<unsigned>(c.workers));
    } catch (const Error& e) {
        run.fail_with(e.kind(), "point-process comparison", e.what());
    }
    run.stage("ppp");
    auto& sum = run.csv("aging_z_summary.csv", {"t", "s", "replicas", "p_same_at", "stderr_at", "p_same_throughout",
                                                "stderr_throughout", "ppp_mc", "ppp_stderr", "oracle"});
    for (std::size_t a = 0; a < c.t.size(); ++a)
        for (std::size_t j = 0; j < c.s.size(); ++j) {
            const auto m1 = mean_stderr(at[a * c.s.size() + j]);
            const auto m2 = mean_stderr(thr[a * c.s.size() + j]);
            const auto p = th.tail(c.s[j]);
            sum.row(c.t[a], c.s[j], c.replicas, m1.mean, m1.stderr_, m2.mean, m2.stderr_, p.mean, p.stderr_,
                    aging_tail_oracle(c.s[j], d).value);
        }
    run.summary()["ppp_censored"] = th.censored;
    return run.finish(true);
}

// --- aging of the solution ----------------------------------------------------------------

struct AgingSolutionRecord {
    double t = 0;
    double jump_theta = 0;
    bool censored = false;
    double resolution = 0;
    std::string method;
    double z_jump_theta = 0;
    double tv_end = 0;
};

/// (1/t) inf{s : TV(u(t+s)/U, u(t)/U) > epsilon} on theta in [0, s_max].
inline AgingSolutionRecord aging_solution_track(const LatticeDomain& dom, std::span<const double> V, double t,
                                                double s_max, double eps, std::size_t grid) {
    AgingSolutionRecord r;
    r.t = t;
    const double h = s_max / static_cast<double>(grid);
    std::optional<SpectralBasis> basis;
    if (dom.size() <= kDefaultDenseCap) {
        try {
            basis = spectral_basis(dom, V);
            solve_spectral(*basis, t);
            solve_spectral(*basis, t * (1 + s_max));
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Accuracy) throw;
            basis.reset();
        }
    }
    r.censored = true;
    r.jump_theta = std::numeric_limits<double>::infinity();
    if (basis) {
        r.method = "spectral";
        const auto u0 = solve_spectral(*basis, t);
        auto tv = [&](double th) { return tv_profile_distance(u0, solve_spectral(*basis, t * (1 + th))); };
        double prev = 0;
        for (std::size_t j = 1; j <= grid; ++j) {
            const double th = h * static_cast<double>(j);
            const double v = tv(th);
            r.tv_end = v;
            if (v > eps) {
                double lo = prev, hi = th;
                for (int k = 0; k < 60 && hi - lo > 1e-12 * std::max(1.0, hi); ++k) {
                    const double mid = 0.5 * (lo + hi);
                    (tv(mid) > eps ? hi : lo) = mid;
                }
                r.jump_theta = hi;
                r.resolution = hi - lo;
                r.censored = false;
                break;
            }
            prev = th;
        }
    } else {
        r.method = "ode";
        r.resolution = h;
        const auto u0 = solve_ode(dom, V, t);
        SolutionField cur = u0;
        for (std::size_t j = 1; j <= grid; ++j) {
            cur = solve_ode_from(cur, V, t * h);
            const double v = tv_profile_distance(u0, cur);
            r.tv_end = v;
            if (v > eps) {
                r.jump_theta = h * static_cast<double>(j);
                r.censored = false;
                break;
            }
        }
    }
    return r;
}

inline RunResult run_aging_solution(Run& run) {
    const auto& c = run.cfg;
    const int d = c.dim;
    run.lineage("field seed of replica i = derive_stream(derive_stream(seed, stream_tag(experiment)), i)");
    const long W = field_window_radius(c);
    const double s_max = c.s.back();
    auto results = attempt_all(c.replicas, static_cast<unsigned>(c.workers), [&](std::size_t i) {
        const auto field = sample_field(d, ball(d, {}, static_cast<int>(W)), c.rho, replica_seed(c, i));
        std::vector<AgingSolutionRecord> out;
        for (double t : c.t) {
            const long L = macro_box_radius(t * (1 + s_max));
            const LatticeDomain dom = LatticeDomain::from_box(ball(d, {}, static_cast<int>(L)));
            const auto V = field.restrict_to(dom);
            auto r = aging_solution_track(dom, V, t, s_max, c.epsilon, c.grid);
            CapitalOptions co;
            co.margin = margin_policy(c);
            const auto set = find_capitals(field, ball(d, {}, static_cast<int>(L)), c.kappa, co);
            require(!set.capitals.empty(), ErrorKind::DegenerateInput, "no capitals in the search window");
            const std::vector<double> grid = {t, t * (1 + s_max)};
            const auto tr = z_trajectory(set, d, grid, 1);
            r.z_jump_theta = tr.jump_times.empty() ? std::numeric_limits<double>::infinity() : tr.jump_times.front() / t - 1;
            out.push_back(std::move(r));
        }
        return out;
    });
    run.stage("replicas");
    auto& rows = run.csv("aging_solution.csv", {"replica", "seed", "t", "epsilon", "jump_theta", "censored", "resolution",
                                                "method", "z_jump_theta", "tv_end"});
    std::vector<std::vector<double>> jt(c.t.size()), zt(c.t.size());
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& recs = run.value_or_fail(results[i], where_replica(i));
        const auto seed = replica_seed(c, i);
        for (std::size_t a = 0; a < recs.size(); ++a) {
            const auto& r = recs[a];
            rows.row(i, seed, r.t, c.epsilon, r.jump_theta, r.censored, r.resolution, r.method, r.z_jump_theta, r.tv_end);
            jt[a].push_back(r.jump_theta);
            zt[a].push_back(r.z_jump_theta);
        }
    }
    auto& sum = run.csv("aging_solution_summary.csv",
                        {"t", "s", "replicas", "p_tv_jump_after_s", "stderr", "p_z_jump_after_s", "stderr_z", "oracle"});
    for (std::size_t a = 0; a < c.t.size(); ++a)
        for (double s : c.s) {
            std::vector<double> x, y;
            for (double v : jt[a]) x.push_back(v > s);
            for (double v : zt[a]) y.push_back(v > s);
            const auto m1 = mean_stderr(x), m2 = mean_stderr(y);
            sum.row(c.t[a], s, c.replicas, m1.mean, m1.stderr_, m2.mean, m2.stderr_, aging_tail_oracle(s, d).value);
        }
    return run.finish(true);
}

// --- limit laws ---------------------------------------------------------------------------

inline RunResult run_limit_laws(Run& run) {
    const auto& c = run.cfg;
    const int d = c.dim;
    const std::uint64_t seed = ppp_seed(c);
    run.lineage("sample index of parameter theta_k uses maximizer_draw(dim, theta_k, derive_stream(ppp seed, k), index) "
                "with ppp seed = derive_stream(seed, stream_tag(\"ppp\"))");
    auto& samples = run.csv("limit_samples.csv", concat({"theta", "index", "psi"}, coord_columns(d, "z")));
    auto& ks = run.csv("ks.csv", {"theta", "n", "statistic", "value", "threshold"});
    const std::size_t n = c.samples;
    const double crit = 1.95 / std::sqrt(static_cast<double>(n));
    for (std::size_t k = 0; k < c.theta.size(); ++k) {
        const double th = c.theta[k];
        const std::uint64_t sk = derive_stream(seed, k);
        const std::size_t chunk = 4096, chunks = (n + chunk - 1) / chunk;
        auto parts = attempt_all(chunks, static_cast<unsigned>(c.workers), [&](std::size_t b) {
            std::vector<RankedPpp> v;
            for (std::size_t i = b * chunk; i < std::min(n, (b + 1) * chunk); ++i) v.push_back(maximizer_draw(d, th, sk, i));
            return v;
        });
        std::vector<double> psi;
        std::vector<std::vector<double>> z(static_cast<std::size_t>(d));
        for (std::size_t b = 0; b < parts.size(); ++b) {
            const auto& v = run.value_or_fail(parts[b], "theta " + format_double_short(th));
            for (const auto& p : v) {
                std::vector<std::string> f = {CsvWriter::field(th), CsvWriter::field(psi.size()), CsvWriter::field(p.psi)};
                for (int j = 0; j < d; ++j) {
                    f.push_back(CsvWriter::field(p.z[j]));
                    z[static_cast<std::size_t>(j)].push_back(p.z[j]);
                }
                samples.row_fields(f);
                psi.push_back(p.psi);
            }
        }
        ks.row(th, n, "ks_psi", ks_statistic(psi, [&](double x) { return limit_cdf_gumbel(x, th, d); }), crit);
        for (int j = 0; j < d; ++j) {
            const auto& zj = z[static_cast<std::size_t>(j)];
            ks.row(th, n, "ks_z" + std::to_string(j), ks_statistic(zj, [&](double x) { return limit_cdf_laplace(x, th); }), crit);
        }
        for (int j = 0; j < d; ++j)
            ks.row(th, n, "corr_psi_z" + std::to_string(j), correlation(psi, z[static_cast<std::size_t>(j)]),
                   4 / std::sqrt(static_cast<double>(n)));
        auto ecdf = [&](const std::string& name, std::vector<double> x) {
            std::sort(x.begin(), x.end());
            CsvWriter w(run.dir / name, {"x", "ecdf"});
            for (std::size_t i = 0; i < x.size(); ++i)
                w.row(x[i], static_cast<double>(i + 1) / static_cast<double>(x.size()));
            run.note_file(name, w.rows());
        };
        const std::string tag = "_theta" + format_double_short(th) + ".csv";
        ecdf("cdf_psi" + tag, psi);
        for (int j = 0; j < d; ++j) ecdf("cdf_z" + std::to_string(j) + tag, z[static_cast<std::size_t>(j)]);
        run.stage("theta " + format_double_short(th));
    }
    run.note_file("oracle_values.csv", write_oracle_values(run.dir / "oracle_values.csv", d, c.theta, c.s));
    return run.finish(true);
}

// --- Theta tail ---------------------------------------------------------------------------

inline RunResult run_theta_tail(Run& run) {
    const auto& c = run.cfg;
    const int d = c.dim;
    const std::uint64_t seed = ppp_seed(c);
    run.lineage("sample index i is theta_draw(dim, derive_stream(seed, stream_tag(\"ppp\")), i)");
    ThetaSamples th;
    try {
        th = theta_sampler(d, c.samples, seed, {}, static_cast<unsigned>(c.workers));
    } catch (const Error& e) {
        run.fail_with(e.kind(), "theta sampler", e.what());
    }
    run.stage("samples");
    auto& raw = run.csv("theta_samples.csv", {"seed", "index", "theta"});
    for (std::size_t i = 0; i < th.values.size(); ++i) raw.row(seed, i, th.values[i]);
    auto& tab = run.csv("theta_tail.csv", {"s", "n", "mc", "stderr", "quadrature", "quadrature_error", "asymptote", "censored"});
    double dd = 1, fact = 1;
    for (int k = 1; k <= d; ++k) {
        dd *= d;
        fact *= k;
    }
    for (double s : c.s) {
        const auto m = th.tail(s);
        const auto o = aging_tail_oracle(s, d);
        const double asym = s > 1 ? std::pow(std::log(s), d) * dd / (fact * std::pow(s, d)) : std::numeric_limits<double>::quiet_NaN();
        tab.row(s, th.values.size(), m.mean, m.stderr_, o.value, o.error, asym, th.censored);
    }
    run.summary()["censored"] = th.censored;
    run.summary()["censoring_cap"] = th.cap;
    run.summary()["points_drawn"] = th.points_drawn;
    run.note_file("oracle_values.csv", write_oracle_values(run.dir / "oracle_values.csv", d, c.theta, c.s));
    return run.finish(true);
}

// --- chi scan -----------------------------------------------------------------------------

inline RunResult run_chi_scan(Run& run) {
    const auto& c = run.cfg;
    const int d = c.dim;
    run.lineage("deterministic: no random input");
    auto results = attempt_all(c.R.size(), static_cast<unsigned>(c.workers),
                               [&](std::size_t k) { return solve_chi(c.rho, static_cast<int>(c.R[k]), d); });
    run.stage("solves");
    auto& tab = run.csv("chi.csv", {"rho", "R", "chi_R", "iterations", "residual"});
    std::vector<int> Rs;
    std::vector<double> chis;
    for (std::size_t k = 0; k < results.size(); ++k) {
        const auto& s = run.value_or_fail(results[k], "R = " + std::to_string(c.R[k]));
        tab.row(c.rho, c.R[k], s.chi_R, s.iterations, s.residual);
        const std::string name = "chi_profile_R" + std::to_string(c.R[k]) + ".csv";
        CsvWriter w(run.dir / name, concat(coord_columns(d), {"V", "v", "phi"}));
        for (std::size_t i = 0; i < s.domain.size(); ++i) {
            auto f = coord_fields(s.domain.site(i), d);
            f.push_back(CsvWriter::field(s.V[i]));
            f.push_back(CsvWriter::field(s.v[i]));
            f.push_back(CsvWriter::field(s.phi[i]));
            w.row_fields(f);
        }
        run.note_file(name, w.rows());
        Rs.push_back(static_cast<int>(c.R[k]));
        chis.push_back(s.chi_R);
    }
    try {
        detail::check_chi_monotone(Rs, chis, 1e-9);
    } catch (const Error& e) {
        run.fail_with(e.kind(), "monotonicity check", e.what());
    }
    return run.finish(true);
}

// --- solver cross-validation --------------------------------------------------------------

struct XvalRecord {
    double t = 0;
    std::size_t sites = 0;
    double rel_u = 0, rel_U = 0, rel_u_expm = 0, fk_U_z = 0, fk_max_z = 0;
};

inline std::vector<XvalRecord> xval_instance(const ExperimentConfig& c, std::uint64_t seed) {
    const int d = c.dim;
    int rmax = 0;
    while (std::pow(2.0 * (rmax + 1) + 1, d) <= static_cast<double>(c.max_sites)) ++rmax;
    Philox rng(seed, stream_tag("instance"));
    const int r = static_cast<int>(std::floor(rng.uniform() * (rmax + 1)));
    const auto field = sample_field(d, ball(d, {}, std::min(r, rmax)), c.rho, seed);
    const LatticeDomain dom = LatticeDomain::from_box(field.window());
    const auto& V = field.values();
    std::vector<XvalRecord> out;
    for (std::size_t k = 0; k < c.t.size(); ++k) {
        const double t = c.t[k];
        XvalRecord x;
        x.t = t;
        x.sites = dom.size();
        const auto sp = solve_spectral(dom, V, t);
        const auto od = solve_ode(dom, V, t);
        x.rel_u = relative_sup_error(sp.values, od.values);
        x.rel_U = std::abs(sp.total_mass - od.total_mass) / od.total_mass;
        x.rel_u_expm = std::numeric_limits<double>::quiet_NaN();
        if (dom.size() <= kDefaultExpmCap) {
            const Eigen::MatrixXd E = dense_expm(dom, V, t);
            const auto col = E.col(static_cast<Eigen::Index>(origin_index(dom)));
            const std::vector<double> ex(col.data(), col.data() + col.size());
            x.rel_u_expm = relative_sup_error(sp.values, ex);
        }
        FkOptions fo;
        fo.window = field.window();
        const auto fk = fk_estimate(field, t, c.paths, derive_stream(seed, k), fo);
        x.fk_U_z = fk.total_mass_stderr > 0 ? std::abs(fk.total_mass - od.total_mass) / fk.total_mass_stderr : 0.0;
        for (std::size_t i = 0; i < dom.size(); ++i)
            if (fk.mc_stderr[i] > 0) x.fk_max_z = std::max(x.fk_max_z, std::abs(fk.values[i] - od.values[i]) / fk.mc_stderr[i]);
        out.push_back(x);
    }
    return out;
}

inline RunResult run_solver_xval(Run& run) {
    const auto& c = run.cfg;
    run.lineage("instance i: seed = derive_stream(derive_stream(seed, stream_tag(experiment)), i); window radius drawn "
                "from Philox(seed, stream_tag(\"instance\")); Feynman-Kac seed for time k = derive_stream(seed, k)");
    auto results = attempt_all(c.replicas, static_cast<unsigned>(c.workers),
                               [&](std::size_t i) { return xval_instance(c, replica_seed(c, i)); });
    run.stage("instances");
    auto& tab = run.csv("solver_xval.csv", {"instance", "seed", "sites", "t", "rel_u", "rel_U", "rel_u_expm", "fk_paths",
                                            "fk_U_z", "fk_max_z"});
    double max_u = 0, max_U = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& recs = run.value_or_fail(results[i], "instance " + std::to_string(i));
        for (const auto& x : recs) {
            tab.row(i, replica_seed(c, i), x.sites, x.t, x.rel_u, x.rel_U, x.rel_u_expm, c.paths, x.fk_U_z, x.fk_max_z);
            max_u = std::max(max_u, x.rel_u);
            max_U = std::max(max_U, x.rel_U);
        }
    }
    run.summary()["max_rel_u"] = max_u;
    run.summary()["max_rel_U"] = max_U;
    run.summary()["max_discrepancy"] = std::max(max_u, max_U);
    return run.finish(true);
}

} // namespace detail

/// Runs a validated experiment, writing CSV outputs and `run_manifest.json` into the output
/// directory. A failure marks the manifest incomplete and rethrows with experiment context.
inline RunResult run(const ExperimentConfig& cfg) {
    const auto errors = config_errors(cfg);
    if (!errors.empty()) {
        std::string msg = "invalid config:";
        for (const auto& e : errors) msg += "\n  " + e;
        fail(ErrorKind::InvalidParameter, msg);
    }
    detail::Run r(cfg);
    try {
        if (cfg.experiment == "mass-concentration") return detail::run_mass_concentration(r);
        if (cfg.experiment == "aging-Z") return detail::run_aging_z(r);
        if (cfg.experiment == "aging-solution") return detail::run_aging_solution(r);
        if (cfg.experiment == "limit-laws") return detail::run_limit_laws(r);
        if (cfg.experiment == "theta-tail") return detail::run_theta_tail(r);
        if (cfg.experiment == "chi-scan") return detail::run_chi_scan(r);
        return detail::run_solver_xval(r);
    } catch (const Error& e) {
        if (r.manifest.contains("error")) throw;
        r.fail_with(e.kind(), "run", e.what());
    }
}

} // namespace pam
