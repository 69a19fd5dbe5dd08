// pamlab: command-line front end for the simulation modules.

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>

#include "pam/experiments.hpp"

using namespace pam;
using json = nlohmann::json;

namespace {

struct Common {
    std::uint64_t seed = 1;
    std::string out;
    unsigned workers = 1;
    std::string format = "csv";
};

/// Rows of JSON scalars printed as CSV or as a JSON array of objects.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<json>> rows;

    void add(std::vector<json> r) { rows.push_back(std::move(r)); }
};

std::string csv_field(const json& v) {
    if (v.is_number_float()) return format_double(v.get<double>());
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
    return v.dump();
}

void emit(const Table& t, const Common& c, const json& meta = json::object()) {
    std::ofstream file;
    std::ostream* os = &std::cout;
    if (!c.out.empty()) {
        file.open(c.out, std::ios::binary);
        require(static_cast<bool>(file), ErrorKind::Resource, "cannot open " + c.out + " for writing");
        os = &file;
    }
    if (c.format == "json") {
        json j = meta;
        j["rows"] = json::array();
        for (const auto& r : t.rows) {
            json o = json::object();
            for (std::size_t i = 0; i < t.header.size(); ++i) o[t.header[i]] = r[i];
            j["rows"].push_back(o);
        }
        *os << j.dump(2) << '\n';
    } else {
        CsvWriter w(*os, t.header);
        for (const auto& r : t.rows) {
            std::vector<std::string> f;
            for (const auto& v : r) f.push_back(csv_field(v));
            w.row_fields(f);
        }
        if (!meta.empty() && !c.out.empty()) write_json(c.out + ".json", meta);
    }
}

std::vector<json> coords(const Site& x, int dim) {
    std::vector<json> v;
    for (int i = 0; i < dim; ++i) v.emplace_back(x[i]);
    return v;
}

std::vector<json> join(std::vector<json> a, const std::vector<json>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

/// Either a saved field or a freshly sampled one.
struct FieldSource {
    std::string path;
    int dim = 1;
    int radius = 20;
    double rho = 1.0;

    void add(CLI::App* app) {
        app->add_option("--field", path, "saved field container (from sample-field --save)");
        app->add_option("--dim", dim, "lattice dimension")->check(CLI::Range(1, 3));
        app->add_option("--radius", radius, "sup-norm radius of the sampled window")->check(CLI::NonNegativeNumber);
        app->add_option("--rho", rho, "tail parameter");
    }

    PotentialField get(std::uint64_t seed) const {
        if (!path.empty()) return load_field(path);
        return sample_field(dim, ball(dim, {}, radius), rho, seed);
    }
};

json window_json(const Box& b) {
    json c = json::array();
    for (int i = 0; i < b.dim; ++i) c.push_back(b.center[i]);
    return {{"dim", b.dim}, {"center", c}, {"radius", b.radius}};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"pamlab: parabolic Anderson model laboratory"};
    app.require_subcommand(1);
    app.fallthrough();
    Common c;
    app.add_option("--seed", c.seed, "master seed");
    app.add_option("--out", c.out, "output file (stdout when omitted) or, for run, the output directory");
    app.add_option("--workers", c.workers, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--format", c.format, "output format")->check(CLI::IsMember({"csv", "json"}));

    // sample-field
    auto* sf = app.add_subcommand("sample-field", "sample an i.i.d. doubly-exponential field");
    FieldSource sf_src;
    sf_src.add(sf);
    std::string sf_save;
    sf->add_option("--save", sf_save, "also write the binary container and its .json sidecar");

    // eig
    auto* eig = app.add_subcommand("eig", "principal or top-k Dirichlet eigenpairs");
    FieldSource eig_src;
    eig_src.add(eig);
    std::size_t eig_k = 1;
    bool eig_vectors = false;
    eig->add_option("--k", eig_k, "number of eigenpairs")->check(CLI::PositiveNumber);
    eig->add_flag("--vectors", eig_vectors, "print the principal eigenvector instead of eigenvalues");

    // solve
    auto* solve = app.add_subcommand("solve", "solve the PAM from u(., 0) = 1_0");
    FieldSource solve_src;
    solve_src.add(solve);
    double solve_t = 1.0;
    std::string solve_method = "spectral";
    std::size_t solve_paths = 100000;
    solve->add_option("--t", solve_t, "time")->required();
    solve->add_option("--method", solve_method, "solver")->check(CLI::IsMember({"spectral", "ode", "feynman-kac"}));
    solve->add_option("--paths", solve_paths, "Feynman-Kac paths");

    // capitals
    auto* caps = app.add_subcommand("capitals", "capitals and their local eigenvalues");
    FieldSource caps_src;
    caps_src.add(caps);
    double caps_kappa = 0.2;
    int caps_search = -1;
    std::string caps_policy = "exclude";
    caps->add_option("--kappa", caps_kappa, "capital radius exponent");
    caps->add_option("--search-radius", caps_search, "search window radius (default: field radius)");
    caps->add_option("--window-policy", caps_policy)->check(CLI::IsMember({"exclude", "error"}));

    // islands
    auto* isl = app.add_subcommand("islands", "high-exceedance islands of B_L");
    FieldSource isl_src;
    isl_src.add(isl);
    IslandParams ip;
    ip.beta_R = 0.3;
    ip.kappa = 0.2;
    std::optional<double> isl_chi;
    isl->add_option("--L", ip.L, "macro-box radius")->required();
    isl->add_option("--A", ip.A, "exceedance depth");
    isl->add_option("--beta", ip.beta_R, "island radius exponent");
    isl->add_option("--kappa", ip.kappa, "capital exponent (validates beta > kappa)");
    isl->add_option("--chi", isl_chi, "chi value used in the relevance level (default: chi_6)");
    isl->add_option("--delta", ip.delta, "relevance margin");

    // ztraj
    auto* zt = app.add_subcommand("ztraj", "order statistics of the localization process along a time grid");
    FieldSource zt_src;
    zt_src.add(zt);
    std::vector<double> zt_times;
    double zt_kappa = 0.2;
    std::size_t zt_k = 1;
    bool zt_jumps = false;
    zt->add_option("--t", zt_times, "increasing times")->required()->delimiter(',');
    zt->add_option("--kappa", zt_kappa);
    zt->add_option("--k", zt_k, "ranks per time")->check(CLI::PositiveNumber);
    zt->add_flag("--jumps", zt_jumps, "print the exact rank-1 jump times instead");

    // ppp
    auto* ppp = app.add_subcommand("ppp", "Poisson point process with intensity e^{-lambda} d lambda x dz");
    int ppp_dim = 1;
    double ppp_lmin = 0, ppp_zmax = 10;
    std::optional<double> ppp_cone_theta;
    std::vector<double> ppp_traj;
    ppp->add_option("--dim", ppp_dim)->check(CLI::Range(1, 3));
    ppp->add_option("--lambda-min", ppp_lmin, "box truncation level, or cone level with --cone");
    ppp->add_option("--z-max", ppp_zmax, "box spatial half-width");
    ppp->add_option("--cone", ppp_cone_theta, "sample the cone {psi_theta > lambda-min} for this theta");
    ppp->add_option("--trajectory", ppp_traj, "theta_lo,theta_hi: print the maximizer breakpoints")->delimiter(',')->expected(2);

    // theta
    auto* th = app.add_subcommand("theta", "aging variable: Monte Carlo tail against the quadrature oracle");
    int th_dim = 1;
    std::size_t th_n = 100000;
    std::vector<double> th_s = {0.5, 1, 2, 5, 10};
    bool th_oracle = false, th_samples = false;
    th->add_option("--dim", th_dim)->check(CLI::Range(1, 3));
    th->add_option("--n", th_n, "samples")->check(CLI::PositiveNumber);
    th->add_option("--s", th_s, "horizons")->delimiter(',');
    th->add_flag("--oracle", th_oracle, "print the oracle values table only");
    th->add_flag("--samples", th_samples, "print the raw samples");

    // chi
    auto* chi = app.add_subcommand("chi", "variational constant chi_R by the fixed-point solver");
    double chi_rho = 1.0;
    int chi_dim = 1;
    std::vector<int> chi_R = {0, 1, 2, 3, 4, 5, 6};
    bool chi_profile = false;
    chi->add_option("--rho", chi_rho);
    chi->add_option("--dim", chi_dim)->check(CLI::Range(1, 3));
    chi->add_option("--R", chi_R, "radii")->delimiter(',');
    chi->add_flag("--profile", chi_profile, "print the optimal profile for the last radius");

    // run
    auto* runc = app.add_subcommand("run", "run an experiment from a config file");
    std::string run_path;
    bool run_check = false;
    runc->add_option("config", run_path, "key-value or JSON config")->required();
    runc->add_flag("--check", run_check, "validate and print the normalized config without running");

    // schema
    auto* schema = app.add_subcommand("schema", "print the config keys with units and defaults");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    const bool seed_given = app.count("--seed") > 0;
    try {
        if (*sf) {
            const auto f = sf_src.get(c.seed);
            if (!sf_save.empty()) save_field(f, sf_save);
            Table t{concat(coord_columns(f.dim()), {"xi"}), {}};
            for (std::size_t i = 0; i < f.size(); ++i) t.add(join(coords(f.window().site(i), f.dim()), {f.values()[i]}));
            emit(t, c, field_metadata(f));
        } else if (*eig) {
            const auto f = eig_src.get(c.seed);
            const auto dom = LatticeDomain::from_box(f.window());
            if (eig_vectors) {
                const auto p = principal_eig(dom, f.values());
                Table t{concat(coord_columns(f.dim()), {"phi"}), {}};
                for (std::size_t i = 0; i < dom.size(); ++i) t.add(join(coords(dom.site(i), f.dim()), {p.phi[i]}));
                emit(t, c, {{"lambda", p.lambda}, {"residual", p.residual}});
            } else {
                const auto pairs = top_k_eigs(dom, f.values(), std::min(eig_k, dom.size()));
                Table t{{"k", "lambda", "residual"}, {}};
                for (std::size_t k = 0; k < pairs.size(); ++k) t.add({k + 1, pairs[k].lambda, pairs[k].residual});
                emit(t, c);
            }
        } else if (*solve) {
            const auto f = solve_src.get(c.seed);
            const auto dom = LatticeDomain::from_box(f.window());
            const auto start = std::chrono::steady_clock::now();
            SolutionField u;
            if (solve_method == "spectral") {
                u = solve_spectral(dom, f, solve_t);
            } else if (solve_method == "ode") {
                u = solve_ode(dom, f, solve_t);
            } else {
                FkOptions fo;
                fo.workers = c.workers;
                u = fk_estimate(f, solve_t, solve_paths, derive_stream(c.seed, stream_tag("fk")), fo);
            }
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            const bool mc = !u.mc_stderr.empty();
            Table t{concat(coord_columns(f.dim()), mc ? std::vector<std::string>{"value", "stderr"} : std::vector<std::string>{"value"}), {}};
            for (std::size_t i = 0; i < dom.size(); ++i) {
                auto r = join(coords(dom.site(i), f.dim()), {u.values[i]});
                if (mc) r.emplace_back(u.mc_stderr[i]);
                t.add(r);
            }
            json meta = {{"method", u.method},       {"t", u.t},
                         {"seed", c.seed},           {"window", window_json(f.window())},
                         {"timings", {{"solve_seconds", secs}}},
                         {"total_mass", u.total_mass}, {"error_estimate", u.error_estimate},
                         {"boundary_loss", u.boundary_loss}, {"build", build_info()}};
            if (mc) {
                meta["stderr"] = u.total_mass_stderr;
                meta["paths"] = solve_paths;
                meta["escaped"] = u.escaped;
            }
            emit(t, c, meta);
        } else if (*caps) {
            const auto f = caps_src.get(c.seed);
            CapitalOptions co;
            co.margin = caps_policy == "error" ? MarginPolicy::Error : MarginPolicy::Exclude;
            co.workers = c.workers;
            const int r = caps_search < 0 ? f.window().radius : caps_search;
            const auto set = find_capitals(f, ball(f.dim(), {}, r), caps_kappa, co);
            Table t{concat(coord_columns(f.dim(), "z"), {"varrho", "xi", "lambda_C"}), {}};
            for (const auto& cap : set.capitals)
                t.add(join(coords(cap.z, f.dim()), {cap.varrho, cap.xi, cap.lambda_C}));
            json ex = json::array();
            for (const auto& z : set.excluded) ex.push_back(to_string(z, f.dim()));
            emit(t, c, {{"kappa", caps_kappa}, {"search_window", window_json(set.search_window)}, {"excluded", ex}, {"seed", c.seed}});
        } else if (*isl) {
            const auto f = isl_src.get(c.seed);
            ip.chi = isl_chi ? *isl_chi : solve_chi(f.rho(), 6, f.dim()).chi_R;
            const auto res = islands(f, ip);
            Table t{concat(concat({"island"}, coord_columns(f.dim())), concat(coord_columns(f.dim(), "zC"), {"lambda1", "relevant"})), {}};
            for (std::size_t k = 0; k < res.islands.size(); ++k) {
                const auto& is = res.islands[k];
                for (const auto& x : is.sites)
                    t.add(join(join(std::vector<json>{k}, coords(x, f.dim())), join(coords(is.z_C, f.dim()), {is.lambda1, is.relevant})));
            }
            emit(t, c, {{"R_L", res.R_L}, {"hat_a_L", res.hat_a_L}, {"chi", ip.chi}, {"exceedances", res.exceedances.size()}});
        } else if (*zt) {
            const auto f = zt_src.get(c.seed);
            CapitalOptions co;
            co.workers = c.workers;
            co.margin = MarginPolicy::Exclude;
            const auto tr = z_trajectory(f, zt_times, zt_kappa, zt_k, 0.0, co);
            if (zt_jumps) {
                Table t{concat({"jump_time"}, coord_columns(f.dim(), "z")), {}};
                for (std::size_t j = 0; j < tr.jump_times.size(); ++j)
                    t.add(join({tr.jump_times[j]}, coords(tr.leaders[j + 1], f.dim())));
                emit(t, c);
            } else {
                Table t{concat(concat({"t", "k", "psi"}, coord_columns(f.dim(), "z")), {"lambda"}), {}};
                for (const auto& st : tr.stats)
                    for (const auto& e : st.entries)
                        t.add(join(join({st.t, e.rank, e.psi}, coords(e.z, f.dim())), {e.lambda_C}));
                emit(t, c);
            }
        } else if (*ppp) {
            const auto stream = stream_tag("cli-ppp");
            const PointSample s = ppp_cone_theta ? sample_ppp_cone(ppp_dim, ppp_lmin, *ppp_cone_theta, c.seed, stream)
                                                 : sample_ppp(ppp_dim, ppp_lmin, ppp_zmax, c.seed, stream);
            if (!ppp_traj.empty()) {
                const auto tr = trajectory(s, ppp_traj[0], ppp_traj[1]);
                std::vector<std::string> h = {"theta", "lambda"};
                for (int i = 0; i < ppp_dim; ++i) h.push_back("z" + std::to_string(i));
                Table t{h, {}};
                for (std::size_t j = 0; j < tr.breakpoints.size(); ++j) {
                    const auto& p = s.points[tr.leaders[j]];
                    std::vector<json> r = {tr.breakpoints[j], p.lambda};
                    for (int i = 0; i < ppp_dim; ++i) r.emplace_back(p.z[i]);
                    t.add(r);
                }
                emit(t, c, {{"miss_bound", tr.miss_bound}, {"points", s.points.size()}});
            } else {
                std::vector<std::string> h = {"lambda"};
                for (int i = 0; i < ppp_dim; ++i) h.push_back("z" + std::to_string(i));
                Table t{h, {}};
                for (const auto& p : s.points) {
                    std::vector<json> r = {p.lambda};
                    for (int i = 0; i < ppp_dim; ++i) r.emplace_back(p.z[i]);
                    t.add(r);
                }
                emit(t, c, {{"intensity_mass", s.intensity_mass()}, {"seed", c.seed}});
            }
        } else if (*th) {
            if (th_oracle) {
                const std::string path = c.out.empty() ? "oracle_values.csv" : c.out;
                write_oracle_values(path, th_dim, {1.0, 2.0}, th_s);
                std::cerr << "wrote " << path << '\n';
            } else {
                const auto smp = theta_sampler(th_dim, th_n, c.seed, {}, c.workers);
                if (th_samples) {
                    Table t{{"index", "theta"}, {}};
                    for (std::size_t i = 0; i < smp.values.size(); ++i) t.add({i, smp.values[i]});
                    emit(t, c);
                } else {
                    Table t{{"s", "mc", "stderr", "quadrature", "quadrature_error"}, {}};
                    for (double s : th_s) {
                        const auto m = smp.tail(s);
                        const auto o = aging_tail_oracle(s, th_dim);
                        t.add({s, m.mean, m.stderr_, o.value, o.error});
                    }
                    emit(t, c, {{"n", th_n}, {"censored", smp.censored}, {"seed", c.seed}});
                }
            }
        } else if (*chi) {
            if (chi_profile) {
                const auto sol = solve_chi(chi_rho, chi_R.back(), chi_dim);
                Table t{concat(coord_columns(chi_dim), {"V", "v", "phi"}), {}};
                for (std::size_t i = 0; i < sol.domain.size(); ++i)
                    t.add(join(coords(sol.domain.site(i), chi_dim), {sol.V[i], sol.v[i], sol.phi[i]}));
                emit(t, c, {{"chi_R", sol.chi_R}, {"residual", sol.residual}});
            } else {
                const auto scan = chi_monotonicity_scan(chi_rho, chi_R, chi_dim, {}, c.workers);
                Table t{{"rho", "R", "chi_R", "iterations", "residual"}, {}};
                for (const auto& s : scan.solutions) t.add({chi_rho, s.R, s.chi_R, s.iterations, s.residual});
                emit(t, c);
            }
        } else if (*schema) {
            std::cout << config_schema();
        } else if (*runc) {
            auto v = validate_config(run_path);
            if (!c.out.empty()) v.config.output_dir = c.out;
            if (app.count("--workers")) v.config.workers = c.workers;
            if (seed_given) v.config.seed = c.seed;
            v.errors = config_errors(v.config);
            if (!v.ok()) {
                for (const auto& e : v.errors) std::cerr << run_path << ": " << e << '\n';
                return 2;
            }
            if (run_check) {
                std::cout << (c.format == "json" ? config_to_json(v.config).dump(2) + "\n" : serialize_config(v.config));
                return 0;
            }
            const auto r = run(v.config);
            std::cout << (c.format == "json" ? r.manifest.dump(2) : r.manifest["summary"].dump()) << '\n';
        }
    } catch (const Error& e) {
        std::cerr << "pamlab: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "pamlab: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
