#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "pam/variational.hpp"

using namespace pam;

namespace {

/// Projected gradient ascent on lambda^1(V) over {sum e^{V/rho} <= 1} for d = 1.
/// The gradient of the principal eigenvalue is phi^2; the projection solves
/// W_i + (nu/rho) e^{W_i/rho} = Y_i with nu chosen by bisection.
double projected_gradient_chi(double rho, int R) {
    const int n = 2 * R + 1;
    Eigen::VectorXd V = Eigen::VectorXd::Constant(n, -rho * std::log(n));
    auto principal = [&](const Eigen::VectorXd& W, Eigen::VectorXd& phi) {
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i) {
            H(i, i) = W(i) - 2.0;
            if (i + 1 < n) H(i, i + 1) = H(i + 1, i) = 1.0;
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
        phi = es.eigenvectors().col(n - 1).cwiseAbs();
        return es.eigenvalues()(n - 1);
    };
    auto project = [&](const Eigen::VectorXd& Y) {
        auto mass = [&](const Eigen::VectorXd& W) { return (W / rho).array().exp().sum(); };
        if (mass(Y) <= 1) return Y;
        auto solve = [&](double nu) {
            Eigen::VectorXd W = Y;
            for (int i = 0; i < n; ++i) {
                double w = Y(i);
                for (int k = 0; k < 200; ++k) {
                    const double e = std::exp(w / rho);
                    const double step = (w + nu / rho * e - Y(i)) / (1 + nu / (rho * rho) * e);
                    w -= step;
                    if (std::abs(step) < 1e-15 * (1 + std::abs(w))) break;
                }
                W(i) = w;
            }
            return W;
        };
        double lo = 0, hi = 1;
        while (mass(solve(hi)) > 1) hi *= 2;
        for (int k = 0; k < 200 && hi - lo > 1e-16 * hi; ++k) {
            const double mid = 0.5 * (lo + hi);
            (mass(solve(mid)) > 1 ? lo : hi) = mid;
        }
        return solve(hi);
    };
    Eigen::VectorXd phi;
    double lam = principal(V, phi);
    for (int it = 0; it < 100000; ++it) {
        const Eigen::VectorXd Vn = project(V + 0.5 * phi.cwiseProduct(phi));
        Eigen::VectorXd phin;
        const double ln = principal(Vn, phin);
        const bool done = std::abs(ln - lam) < 1e-14;
        V = Vn;
        phi = phin;
        lam = ln;
        if (done) break;
    }
    return -lam;
}

double curly(const ChiSolution& s) {
    double x = 0;
    for (double v : s.V) x += std::exp(v / s.rho);
    return x;
}

} // namespace

TEST(SolveChi, Singleton) {
    for (int d : {1, 2, 3}) {
        const auto s = solve_chi(1.0, 0, d);
        EXPECT_NEAR(s.chi_R, 2.0 * d, 1e-15);
        EXPECT_NEAR(s.V[0], 0.0, 1e-15);
        EXPECT_EQ(s.v[0], 1.0);
    }
}

TEST(SolveChi, Bounds) {
    for (int d : {1, 2})
        for (double rho : {0.3, 1.0, 3.0})
            for (int R : {1, 3}) {
                const auto s = solve_chi(rho, R, d);
                EXPECT_GE(s.chi_R, 0.0);
                EXPECT_LE(s.chi_R, 2.0 * d);
            }
}

TEST(SolveChi, ProjectedGradientOracle) {
    const double oracle = projected_gradient_chi(1.0, 2);
    const auto s = solve_chi(1.0, 2, 1);
    std::printf("chi_2(1): fixed point %.15f, projected gradient %.15f\n", s.chi_R, oracle);
    EXPECT_NEAR(s.chi_R, oracle, 1e-4);
    for (double rho : {0.5, 2.0}) EXPECT_NEAR(solve_chi(rho, 2, 1).chi_R, projected_gradient_chi(rho, 2), 1e-4);
}

TEST(SolveChi, Invariants) {
    for (int d : {1, 2})
        for (double rho : {0.5, 1.0, 2.5}) {
            const auto s = solve_chi(rho, d == 1 ? 6 : 3, d);
            EXPECT_NEAR(curly(s), 1.0, 1e-10);
            const auto am = std::max_element(s.V.begin(), s.V.end()) - s.V.begin();
            EXPECT_EQ(s.domain.site(static_cast<std::size_t>(am)), Site{});
            const auto p = principal_eig(s.domain, s.V);
            EXPECT_NEAR(p.lambda, -s.chi_R, 1e-9);
            double l1 = 0;
            for (std::size_t i = 0; i < s.v.size(); ++i) {
                EXPECT_GT(s.v[i], 0.0);
                l1 += s.v[i];
            }
            EXPECT_NEAR(l1, 1.0, 1e-14);
            EXPECT_LT(s.residual, 1e-8);
            EXPECT_TRUE(s.objective_monotone) << s.worst_decrease;
            EXPECT_EQ(s.recenterings, 0);
            double sum_phi = 0;
            for (double x : s.phi) sum_phi += x;
            for (std::size_t i = 0; i < s.v.size(); ++i) EXPECT_EQ(s.v[i], s.phi[i] / sum_phi);
        }
}

TEST(SolveChi, Stationarity) {
    const auto s = solve_chi(1.0, 10, 1);
    double r = 0;
    for (std::size_t i = 0; i < s.V.size(); ++i) r = std::max(r, std::abs(s.V[i] - std::log(s.phi[i] * s.phi[i])));
    EXPECT_LT(r, 1e-8);
    // Tail values are far below double precision of the peak yet still consistent.
    EXPECT_LT(s.phi.front(), 1e-12);
}

TEST(SolveChi, ReflectionSymmetry) {
    const auto s1 = solve_chi(0.8, 7, 1);
    for (std::size_t i = 0; i < s1.V.size(); ++i) EXPECT_NEAR(s1.V[i], s1.V[s1.V.size() - 1 - i], 1e-10);
    const auto s2 = solve_chi(1.0, 3, 2);
    for (std::size_t i = 0; i < s2.V.size(); ++i) {
        const Site x = s2.domain.site(i);
        for (const Site y : {Site{-x[0], x[1], 0}, Site{x[1], x[0], 0}, Site{x[0], -x[1], 0}}) {
            const auto j = static_cast<std::size_t>(s2.domain.index_of(y));
            EXPECT_NEAR(s2.V[i], s2.V[j], 1e-9);
        }
    }
}

TEST(SolveChi, LanczosPathAgrees) {
    ChiOptions dense, lanczos;
    lanczos.dense_limit = 10;
    const auto a = solve_chi(1.0, 12, 1, dense);
    const auto b = solve_chi(1.0, 12, 1, lanczos);
    EXPECT_NEAR(a.chi_R, b.chi_R, 1e-10);
}

TEST(SolveChi, Errors) {
    EXPECT_THROW(solve_chi(0.0, 2), Error);
    EXPECT_THROW(solve_chi(1.0, -1), Error);
    ChiOptions o;
    o.max_iter = 3;
    try {
        solve_chi(1.0, 4, 1, o);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Convergence);
        EXPECT_NE(std::string(e.what()).find("last eigenvalues"), std::string::npos);
    }
}

TEST(ChiScan, SingletonOnly) {
    const auto s = chi_monotonicity_scan(1.0, {0}, 2);
    ASSERT_EQ(s.solutions.size(), 1u);
    EXPECT_NEAR(s.solutions[0].chi_R, 4.0, 1e-15);
}

TEST(ChiScan, NestedBoxes) {
    const std::vector<int> Rs{0, 1, 2, 3, 4, 5, 6, 8};
    for (double rho : {0.5, 1.0, 2.0}) {
        const auto s = chi_monotonicity_scan(rho, Rs, 1, {}, 2);
        for (std::size_t i = 1; i < s.solutions.size(); ++i) EXPECT_LE(s.solutions[i].chi_R, s.solutions[i - 1].chi_R + 1e-12);
        std::printf("rho %.2f: chi plateau %.12f, extrapolated %.12f, differences", rho, s.plateau, s.extrapolated);
        for (double d : s.differences) std::printf(" %.2e", d);
        std::printf("\n");
        EXPECT_LE(s.extrapolated, s.plateau);
    }
    const auto d2 = chi_monotonicity_scan(1.0, {0, 1, 2, 3, 4}, 2);
    for (std::size_t i = 1; i < d2.solutions.size(); ++i) EXPECT_LE(d2.solutions[i].chi_R, d2.solutions[i - 1].chi_R + 1e-12);
}

TEST(ChiScan, Errors) {
    EXPECT_THROW(chi_monotonicity_scan(1.0, {2, 1}), Error);
    try {
        detail::check_chi_monotone({1, 2}, {1.0, 1.1}, 1e-9);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InternalConsistency);
    }
}

TEST(ChiMultistart, ReportsProfiles) {
    const auto m = chi_multistart(1.0, 3, 1, 6, 11, 1.0);
    ASSERT_FALSE(m.profiles.empty());
    std::size_t hits = 0;
    for (const auto& p : m.profiles) hits += p.hits;
    EXPECT_EQ(hits, 7u);
    EXPECT_NEAR(m.profiles.front().chi_R, solve_chi(1.0, 3, 1).chi_R, 1e-9);
    std::printf("multistart: %zu distinct profiles\n", m.profiles.size());
}

TEST(ProfileDistance, Manufactured) {
    const auto s = solve_chi(1.0, 4, 1);
    const double a = 3.7;
    const Site c{5, 0, 0};
    const Box w = ball(1, {}, 12);
    std::vector<double> v(w.size(), -50.0);
    for (std::size_t i = 0; i < s.domain.size(); ++i) v[w.index(s.domain.site(i) + c)] = a + s.V[i];
    const PotentialField f(w, v, 1.0, 0, "manual");
    EXPECT_NEAR(profile_distance(f, c, s, 4, a), 0.0, 1e-14);
    std::vector<double> v2(v);
    v2[w.index(Site{7, 0, 0})] += 0.125;
    const PotentialField f2(w, v2, 1.0, 0, "manual");
    EXPECT_NEAR(profile_distance(f2, c, s, 4, a), 0.125, 1e-13);
    EXPECT_NEAR(profile_distance(f2, c, s, 1, a), 0.0, 1e-14);
    try {
        profile_distance(f, Site{10, 0, 0}, s, 4, a);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Window);
    }
    EXPECT_THROW(profile_distance(f, c, s, 5, a), Error);
}

TEST(ProfileDistance, SampledField) {
    const auto s = solve_chi(1.0, 3, 1);
    const auto f = sample_field(1, ball(1, {}, 200), 1.0, 5);
    std::size_t best = 0;
    for (std::size_t i = 0; i < f.size(); ++i)
        if (f.values()[i] > f.values()[best]) best = i;
    const Site c = f.window().site(best);
    if (f.window().contains(ball(1, c, 3))) {
        const double r = profile_distance(f, c, s, 3, hat_a(200, 1, 1.0));
        EXPECT_TRUE(std::isfinite(r));
        std::printf("profile distance on a sampled field: %.4f\n", r);
    }
}
