#include <gtest/gtest.h>

#include "pam/feynman_kac.hpp"
#include "pam/solution.hpp"

using namespace pam;

namespace {

PotentialField field_1d(int radius, std::uint64_t seed, double rho = 1.0) {
    return sample_field(1, ball(1, {}, radius), rho, seed);
}

PotentialField constant_field(int dim, int radius, double c) {
    const Box b = ball(dim, {}, radius);
    return PotentialField(b, std::vector<double>(b.size(), c), 1.0, 0, "constant");
}

std::size_t idx(const LatticeDomain& d, const Site& x) { return static_cast<std::size_t>(d.index_of(x)); }

} // namespace

TEST(SolveSpectral, InitialCondition) {
    const auto f = field_1d(5, 1);
    const auto dom = LatticeDomain::from_box(f.window());
    const auto s = solve_spectral(dom, f, 0.0);
    EXPECT_EQ(s.total_mass, 1.0);
    EXPECT_EQ(s.at({0, 0, 0}), 1.0);
    EXPECT_EQ(s.at({1, 0, 0}), 0.0);
    const auto o = solve_ode(dom, f, 0.0);
    EXPECT_EQ(o.values, s.values);
}

TEST(SolveSpectral, Singleton) {
    const auto f = field_1d(0, 3);
    const auto dom = LatticeDomain::from_box(f.window());
    const double xi = f({0, 0, 0});
    for (double t : {0.5, 1.0, 3.0}) {
        const double exact = std::exp((xi - 2) * t);
        EXPECT_NEAR(solve_spectral(dom, f, t).total_mass / exact, 1.0, 1e-13);
        EXPECT_NEAR(solve_ode(dom, f, t).total_mass / exact, 1.0, 1e-9);
    }
}

TEST(SolveSpectral, AgreesWithOde) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto f = field_1d(10, 1000 + seed);
        const auto dom = LatticeDomain::from_box(f.window());
        const double t = 0.25 + 1.75 * static_cast<double>(seed) / 49.0;
        const auto a = solve_spectral(dom, f, t);
        const auto b = solve_ode(dom, f, t);
        EXPECT_LT(relative_sup_error(b.values, a.values), 1e-6);
        EXPECT_LT(std::abs(b.total_mass - a.total_mass) / a.total_mass, 1e-6);
        double sum = 0;
        for (double v : a.values) sum += v;
        EXPECT_NEAR(sum, a.total_mass, 1e-12 * a.total_mass);
        for (double v : a.values) EXPECT_GT(v, 0.0);
    }
}

TEST(SolveSpectral, AgreesWithMatrixExponential) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto f = sample_field(2, ball(2, {}, 3), 1.0, seed);
        const auto dom = LatticeDomain::from_box(f.window());
        const auto V = f.restrict_to(dom);
        const auto s = solve_spectral(dom, V, 1.5);
        const Eigen::MatrixXd E = dense_expm(dom, V, 1.5);
        const auto o = idx(dom, {});
        for (std::size_t x = 0; x < dom.size(); ++x)
            EXPECT_NEAR(s.values[x], E(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(o)), 1e-11 * s.total_mass);
    }
}

TEST(SolveSpectral, TopKTruncation) {
    const auto g = field_1d(150, 17);
    auto vals = g.values();
    vals[150] = 5.0;
    const PotentialField f(g.window(), vals, 1.0, 17, "manufactured");
    const auto dom = LatticeDomain::from_box(f.window());
    SpectralSolveOptions opts;
    opts.top_k = 40;
    const auto a = solve_spectral(dom, f, 10.0, opts);
    const auto b = solve_spectral(dom, f, 10.0);
    EXPECT_LE(a.error_estimate, 1e-10);
    EXPECT_LT(std::abs(a.total_mass - b.total_mass) / b.total_mass, a.error_estimate + b.error_estimate);
    opts.top_k = 1;
    try {
        solve_spectral(dom, f, 0.1, opts);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Accuracy);
    }
}

TEST(SolveSpectral, RoundOffDominatedIsAccuracyError) {
    // The leading eigenfunctions of this field live far from the origin.
    const auto f = field_1d(150, 17);
    const auto dom = LatticeDomain::from_box(f.window());
    try {
        solve_spectral(dom, f, 50.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Accuracy);
    }
}

TEST(SolveSpectral, RequiresOrigin) {
    const auto dom = LatticeDomain::from_box(ball(1, {5, 0, 0}, 1));
    EXPECT_THROW(solve_spectral(dom, std::vector<double>(3, 0.0), 1.0), Error);
}

TEST(SolveOde, HeatKernelConservesMass) {
    const auto f = constant_field(2, 25, 0.0);
    const auto dom = LatticeDomain::from_box(f.window());
    const auto s = solve_ode(dom, f, 1.0);
    EXPECT_LT(s.boundary_loss, 1e-12);
    EXPECT_NEAR(s.total_mass, 1.0, 1e-12);
}

TEST(SolveOde, ReportsBoundaryLoss) {
    const auto f = constant_field(1, 3, 0.0);
    const auto dom = LatticeDomain::from_box(f.window());
    const auto s = solve_ode(dom, f, 2.0);
    EXPECT_GT(s.boundary_loss, 1e-3);
    EXPECT_NEAR(s.total_mass + s.boundary_loss, 1.0, 1e-9);
}

TEST(SolveOde, StepUnderflowIsStiffness) {
    const auto f = field_1d(3, 4);
    const auto dom = LatticeDomain::from_box(f.window());
    OdeOptions opts;
    opts.rtol = 1e-30;
    try {
        solve_ode(dom, f, 1.0, opts);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Stiffness);
    }
}

TEST(FeynmanKac, TimeZero) {
    const auto f = field_1d(3, 5);
    const auto s = fk_estimate(f, 0.0, 100, 1);
    EXPECT_EQ(s.total_mass, 1.0);
    EXPECT_EQ(s.total_mass_stderr, 0.0);
}

TEST(FeynmanKac, ConstantPotentialFreeWalk) {
    const double c = 0.7, t = 1.3;
    const auto f = constant_field(2, 2, c);
    FkOptions opts;
    opts.boundary = WalkBoundary::Free;
    opts.outside_value = c;
    const auto s = fk_estimate(f, t, 20000, 11, opts);
    // Every path carries exactly e^{ct}, so the estimator has no variance.
    EXPECT_NEAR(s.total_mass, std::exp(c * t), 3 * s.total_mass_stderr + 1e-12 * std::exp(c * t));
    EXPECT_GT(s.escaped, 0u);
}

TEST(FeynmanKac, FreeWalkWithoutOutsidePotentialFails) {
    const auto f = constant_field(1, 1, 0.0);
    FkOptions opts;
    opts.boundary = WalkBoundary::Free;
    EXPECT_THROW(fk_estimate(f, 5.0, 1000, 3, opts), Error);
}

TEST(FeynmanKac, FiveSiteDirichletMatchesExpm) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto f = field_1d(2, 50 + seed);
        const auto dom = LatticeDomain::from_box(f.window());
        const auto E = dense_expm(dom, f.restrict_to(dom), 1.0);
        const auto s = fk_estimate(f, 1.0, 1'000'000, 99 + seed);
        const auto o = static_cast<Eigen::Index>(idx(dom, {}));
        double U = 0;
        for (std::size_t x = 0; x < dom.size(); ++x) {
            const double ref = E(static_cast<Eigen::Index>(x), o);
            U += ref;
            EXPECT_NEAR(s.values[x], ref, 3 * s.mc_stderr[x]);
        }
        EXPECT_NEAR(s.total_mass, U, 3 * s.total_mass_stderr);
    }
}

TEST(FeynmanKac, DeterministicAcrossWorkers) {
    const auto f = field_1d(4, 8);
    FkOptions one, four;
    four.workers = 4;
    one.chunk = four.chunk = 1000;
    const auto a = fk_estimate(f, 1.0, 20000, 5, one);
    const auto b = fk_estimate(f, 1.0, 20000, 5, four);
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(a.total_mass, b.total_mass);
}

TEST(PathWeight, Examples) {
    const auto f = constant_field(1, 3, 0.0);
    EXPECT_EQ(path_weight(std::vector<Site>{}, 1.0, f), 1.0);
    EXPECT_EQ(path_weight(std::vector<Site>{{0, 0, 0}}, 1.0, f), 1.0);
    EXPECT_NEAR(path_weight(std::vector<Site>{{0, 0, 0}, {1, 0, 0}}, 1.0, f), 2.0 / 3.0, 1e-15);
    EXPECT_THROW(path_weight(std::vector<Site>{{0, 0, 0}, {2, 0, 0}}, 1.0, f), Error);
    try {
        path_weight(std::vector<Site>{{0, 0, 0}, {1, 0, 0}}, -2.5, f);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DivergentIntegral);
    }
}

TEST(PathWeight, MatchesMonteCarloOverHoldingTimes) {
    const auto f = sample_field(2, ball(2, {}, 6), 1.0, 123);
    Philox g(7);
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<Site> path{Site{}};
        for (int i = 0; i < 6; ++i) {
            Site x = path.back();
            const auto dir = static_cast<int>(g() % 4);
            x[dir / 2] += dir % 2 ? -1 : 1;
            path.push_back(x);
        }
        double xmax = -1e300;
        for (const auto& x : path) xmax = std::max(xmax, f(x));
        const double gamma = xmax + 1.0;
        const double exact = path_weight(path, gamma, f);
        std::vector<double> w(100000);
        Philox r(1000 + rep);
        for (auto& v : w) {
            double lw = 0;
            for (std::size_t i = 0; i + 1 < path.size(); ++i) lw += (f(path[i]) - gamma) * r.exponential(4.0);
            v = std::exp(lw);
        }
        const auto est = mean_stderr(w);
        EXPECT_NEAR(est.mean, exact, 3 * est.stderr_);
    }
}

TEST(Concentration, Examples) {
    const auto f = field_1d(10, 21);
    const auto dom = LatticeDomain::from_box(f.window());
    const auto s = solve_spectral(dom, f, 2.0);
    const auto prof = concentration_profile(s, {}, {0, 1, 2, 3, 5, 8, 20, 21});
    EXPECT_NEAR(prof[0], 1 - s.at({}) / s.total_mass, 1e-14);
    for (std::size_t i = 1; i < prof.size(); ++i) EXPECT_LE(prof[i], prof[i - 1]);
    EXPECT_EQ(prof.back(), 0.0);
    SolutionField zero = s;
    std::fill(zero.values.begin(), zero.values.end(), 0.0);
    try {
        concentration_profile(zero, {}, {1});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DegenerateInput);
    }
}

TEST(TvDistance, Examples) {
    const auto f = field_1d(6, 22);
    const auto dom = LatticeDomain::from_box(f.window());
    const auto a = solve_spectral(dom, f, 1.0);
    const auto b = solve_spectral(dom, f, 3.0);
    EXPECT_EQ(tv_profile_distance(a, a), 0.0);
    EXPECT_EQ(tv_profile_distance(a, b), tv_profile_distance(b, a));
    SolutionField p = a, q = a;
    std::fill(p.values.begin(), p.values.end(), 0.0);
    std::fill(q.values.begin(), q.values.end(), 0.0);
    p.values[0] = 2;
    q.values[3] = 5;
    EXPECT_NEAR(tv_profile_distance(p, q), 2.0, 1e-15);
}

TEST(SpectralBounds, MassSandwich) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const int dim = 1 + static_cast<int>(seed % 2);
        const auto f = sample_field(dim, ball(dim, {}, dim == 1 ? 20 : 3), 1.0, 300 + seed);
        const auto dom = LatticeDomain::from_box(f.window());
        const auto V = f.restrict_to(dom);
        const double t = 0.5 + 0.25 * static_cast<double>(seed);
        const Eigen::MatrixXd E = dense_expm(dom, V, t);
        const auto p = principal_eig(dom, V);
        const double n = static_cast<double>(dom.size());
        for (std::size_t z = 0; z < dom.size(); z += 3) {
            const auto zi = static_cast<Eigen::Index>(z);
            const double lower = std::exp(t * p.lambda) * p.phi[z] * p.phi[z];
            const double diag = E(zi, zi);
            const double survive = E.row(zi).sum();
            const double upper = std::exp(t * p.lambda) * std::pow(n, 1.5);
            EXPECT_LE(lower, diag * (1 + 1e-12));
            EXPECT_LE(diag, survive * (1 + 1e-12));
            EXPECT_LE(survive, upper);
        }
    }
}

TEST(SpectralBounds, ExitMass) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto f = sample_field(1, ball(1, {}, 4), 1.0, 400 + seed);
        const auto dom = LatticeDomain::from_box(f.window());
        const auto V = f.restrict_to(dom);
        const double lambda = principal_eig(dom, V).lambda;
        std::vector<double> V2(V);
        for (auto& v : V2) v *= 2;
        const double gamma = principal_eig(dom, V2).lambda / 2 + 0.5;
        ASSERT_GT(gamma, lambda);
        // Exact value solves (gamma - H) m = number of exterior neighbours.
        const Eigen::MatrixXd A = gamma * Eigen::MatrixXd::Identity(9, 9) - assemble_dense(dom, V);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(9);
        rhs(0) = rhs(8) = 1;
        const Eigen::VectorXd m = A.ldlt().solve(rhs);
        const auto est = exit_functional_mc(dom, V, {}, gamma, 200000, seed);
        EXPECT_NEAR(est.mean, m(4), 3 * est.stderr_);
        EXPECT_LE(est.mean, 1 + 2 * 9 / (gamma - lambda) + 3 * est.stderr_);
    }
}

TEST(SpectralBounds, EigenfunctionRatio) {
    int checked = 0;
    for (std::uint64_t seed = 0; checked < 5 && seed < 100; ++seed) {
        const auto f = sample_field(1, ball(1, {}, 3), 1.0, 500 + seed);
        const auto dom = LatticeDomain::from_box(f.window());
        const auto V = f.restrict_to(dom);
        const auto p = principal_eig(dom, V);
        const auto y = static_cast<std::size_t>(std::max_element(p.phi.begin(), p.phi.end()) - p.phi.begin());
        // Finite second moment needs lambda^1 of Delta + 2(V - lambda) off y to be negative.
        std::vector<std::size_t> rest;
        std::vector<double> V2;
        for (std::size_t i = 0; i < dom.size(); ++i)
            if (i != y) {
                rest.push_back(i);
                V2.push_back(2 * (V[i] - p.lambda));
            }
        if (dense_oracle(dom.subdomain(rest), V2).values[0] >= -0.1) continue;
        ++checked;
        for (std::size_t x = 0; x < dom.size(); x += 2) {
            const auto est = eigenfunction_ratio_mc(dom, V, dom.site(x), dom.site(y), p.lambda, 100000, seed);
            EXPECT_NEAR(est.mean, p.phi[x] / p.phi[y], 3 * est.stderr_ + 1e-12);
        }
    }
    EXPECT_EQ(checked, 5);
}
