#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <tuple>

#include "pam/localization.hpp"

using namespace pam;

namespace {

PotentialField field_1d(int radius, std::uint64_t seed, double rho = 1.0) {
    return sample_field(1, ball(1, {}, radius), rho, seed);
}

PotentialField manual_1d(std::vector<double> v, double rho = 1.0) {
    const int r = static_cast<int>(v.size() / 2);
    return PotentialField(ball(1, {}, r), std::move(v), rho, 0, "manual");
}

Site s1(int x) { return Site{x, 0, 0}; }

Capital make_capital(Site z, double lambda) {
    Capital c;
    c.z = z;
    c.lambda_C = lambda;
    return c;
}

struct BruteCapitals {
    std::vector<Site> capitals, excluded;
};

BruteCapitals brute_capitals(const PotentialField& f, const Box& search, double kappa) {
    BruteCapitals out;
    const Box& w = f.window();
    for (std::size_t i = 0; i < search.size(); ++i) {
        const Site z = search.site(i);
        const double x = f(z);
        const double rr = std::floor(std::exp(kappa * x / f.rho()));
        const int r = static_cast<int>(rr);
        bool beaten = false, outside = false;
        for (int a = -r; a <= r; ++a)
            for (int b = (f.dim() > 1 ? -r : 0); b <= (f.dim() > 1 ? r : 0); ++b) {
                const Site y{z[0] + a, z[1] + b, 0};
                if (!w.contains(y)) {
                    outside = true;
                    continue;
                }
                if (f(y) > x) beaten = true;
            }
        if (beaten) continue;
        (outside ? out.excluded : out.capitals).push_back(z);
    }
    return out;
}

double brute_psi(const Capital& c, int dim, double t, double cc) {
    int n = 0;
    for (int i = 0; i < dim; ++i) n += std::abs(c.z[i]);
    const double x = std::max<double>(n, std::exp(std::exp(1.0)));
    const double l3 = std::log(std::log(std::log(x)));
    return c.lambda_C - std::max(0.0, l3 - cc) * n / t;
}

/// Reference ranking by a full sort on (Psi, lambda, z), all descending.
std::vector<Site> brute_order(const std::vector<Capital>& caps, int dim, double t, double cc, std::size_t k) {
    std::vector<std::tuple<double, double, Site>> v;
    for (const auto& c : caps) v.emplace_back(brute_psi(c, dim, t, cc), c.lambda_C, c.z);
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a > b; });
    std::vector<Site> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(std::get<2>(v[i]));
    return out;
}

/// Components of the thickened exceedance set by union-find.
std::set<std::vector<Site>> brute_islands(const PotentialField& f, int L, double A, int R) {
    const double level = f.rho() * std::log(f.dim() * std::log(static_cast<double>(L))) - 2 * A;
    std::map<Site, int> idx;
    std::vector<Site> D;
    for (int x = -L; x <= L; ++x) {
        if (!(f(s1(x)) > level)) continue;
        for (int y = std::max(-L, x - R); y <= std::min(L, x + R); ++y)
            if (!idx.count(s1(y))) {
                idx[s1(y)] = static_cast<int>(D.size());
                D.push_back(s1(y));
            }
    }
    std::vector<int> parent(D.size());
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int a) { return parent[a] == a ? a : parent[a] = find(parent[a]); };
    for (const auto& [s, i] : idx) {
        const auto it = idx.find(s1(s[0] + 1));
        if (it != idx.end()) parent[find(i)] = find(it->second);
    }
    std::map<int, std::vector<Site>> groups;
    for (std::size_t i = 0; i < D.size(); ++i) groups[find(static_cast<int>(i))].push_back(D[i]);
    std::set<std::vector<Site>> out;
    for (auto& [_, g] : groups) {
        std::sort(g.begin(), g.end());
        out.insert(g);
    }
    return out;
}

} // namespace

TEST(CapitalRadius, Examples) {
    EXPECT_EQ(capital_radius(0.0, 0.5, 1.0, 1), 1);
    const double rho = 1.3, kappa = 0.4;
    EXPECT_EQ(capital_radius(rho * std::log(2.0) / kappa + 1e-12, kappa, rho, 1), 2);
    EXPECT_EQ(capital_radius(-0.3, 0.5, 1.0, 1), 0);
    EXPECT_EQ(capital_radius(-1e-9, 0.25, 1.0, 2), 0);
}

TEST(CapitalRadius, KappaRange) {
    EXPECT_THROW(capital_radius(1.0, 0.0, 1.0, 1), Error);
    EXPECT_THROW(capital_radius(1.0, 1.0, 1.0, 1), Error);
    EXPECT_THROW(capital_radius(1.0, 0.5, 1.0, 2), Error);
    EXPECT_NO_THROW(capital_radius(1.0, 0.49, 1.0, 2));
}

TEST(FindCapitals, StrictGlobalMaximum) {
    std::vector<double> v(41, 0.1);
    v[20 + 3] = 2.0;
    const auto f = manual_1d(v);
    const auto set = find_capitals(f, ball(1, {}, 10), 0.5);
    const bool found = std::any_of(set.capitals.begin(), set.capitals.end(),
                                   [](const Capital& c) { return c.z == s1(3); });
    EXPECT_TRUE(found);
}

TEST(FindCapitals, MonotoneDecreasing) {
    // Low plateau left of the search window, then strictly decreasing from x = -15.
    std::vector<double> v(41);
    for (int i = 0; i < 41; ++i) {
        const int x = i - 20;
        v[i] = x < -15 ? 0.0 : 1.0 - 0.05 * (x + 15);
    }
    const auto f = manual_1d(v);
    const auto set = find_capitals(f, ball(1, {}, 15), 0.5);
    std::vector<Site> with_radius;
    for (const auto& c : set.capitals)
        if (c.varrho >= 1) with_radius.push_back(c.z);
    ASSERT_EQ(with_radius.size(), 1u);
    EXPECT_EQ(with_radius[0], s1(-15));
    EXPECT_TRUE(set.excluded.empty());
    for (const auto& c : set.capitals) EXPECT_TRUE(c.z == s1(-15) || f(c.z) < 0);
}

TEST(FindCapitals, MarginError) {
    std::vector<double> v(21, -1.0);  // radius 0 everywhere else
    v[20] = 3.0;                      // right edge, radius 4
    const auto f = manual_1d(v);
    try {
        find_capitals(f, f.window(), 0.5);
        FAIL() << "expected a window error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Window);
        EXPECT_NE(std::string(e.what()).find("(10)"), std::string::npos) << e.what();
    }
    EXPECT_THROW(find_capitals(f, ball(1, {}, 11), 0.5), Error);
}

TEST(FindCapitals, BruteForceEquivalence) {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto f = field_1d(100, seed);
        const Box search = ball(1, {}, 90);
        CapitalOptions o;
        o.margin = MarginPolicy::Exclude;
        o.keep_eigenpairs = true;
        const auto set = find_capitals(f, search, 0.5, o);
        const auto ref = brute_capitals(f, search, 0.5);
        std::vector<Site> got;
        for (const auto& c : set.capitals) got.push_back(c.z);
        ASSERT_EQ(got, ref.capitals) << "seed " << seed;
        ASSERT_EQ(set.excluded, ref.excluded) << "seed " << seed;
        for (const auto& c : set.capitals) {
            const auto dom = LatticeDomain::from_box(ball(1, c.z, static_cast<int>(c.varrho)));
            const auto V = f.restrict_to(dom);
            const auto dense = dense_oracle(dom, V);
            EXPECT_NEAR(c.lambda_C, dense.values[0], 1e-9);
            EXPECT_LE(c.lambda_C, c.xi + 1e-12);
            EXPECT_GE(c.lambda_C, c.xi - 2.0 - 1e-12);
            ASSERT_TRUE(c.eigpair.has_value());
        }
    }
}

TEST(FindCapitals, BruteForce2d) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto f = sample_field(2, ball(2, {}, 20), 1.0, seed);
        CapitalOptions o;
        o.margin = MarginPolicy::Exclude;
        const auto set = find_capitals(f, ball(2, {}, 16), 0.25, o);
        const auto ref = brute_capitals(f, ball(2, {}, 16), 0.25);
        std::vector<Site> got;
        for (const auto& c : set.capitals) got.push_back(c.z);
        EXPECT_EQ(got, ref.capitals);
        EXPECT_EQ(set.excluded, ref.excluded);
    }
}

TEST(FindCapitals, WorkersAgree) {
    const auto f = field_1d(100, 17);
    CapitalOptions a, b;
    a.margin = b.margin = MarginPolicy::Exclude;
    b.workers = 4;
    const auto x = find_capitals(f, ball(1, {}, 90), 0.5, a);
    const auto y = find_capitals(f, ball(1, {}, 90), 0.5, b);
    ASSERT_EQ(x.capitals.size(), y.capitals.size());
    for (std::size_t i = 0; i < x.capitals.size(); ++i) EXPECT_EQ(x.capitals[i].lambda_C, y.capitals[i].lambda_C);
}

TEST(Psi, Examples) {
    const auto c0 = make_capital(s1(0), 1.25);
    EXPECT_EQ(psi(c0, 1, 3.0), 1.25);
    // ln3 of e^e is zero, so near capitals carry no penalty at c = 0.
    const auto c1 = make_capital(s1(15), 1.25);
    EXPECT_EQ(psi(c1, 1, 3.0), 1.25);
    const auto c2 = make_capital(s1(-1000), 2.0);
    const double l3 = std::log(std::log(std::log(1000.0)));
    EXPECT_NEAR(psi(c2, 1, 50.0), 2.0 - l3 * 1000 / 50, 1e-12);
    EXPECT_EQ(psi(c2, 1, 50.0, l3 + 0.1), 2.0);
    EXPECT_NEAR(psi(c2, 1, 50.0, -1.0), 2.0 - (l3 + 1) * 1000 / 50, 1e-12);
    // With c < 0 the penalty on |z| <= e^e is |z| (-c) / t.
    EXPECT_NEAR(psi(c1, 1, 3.0, -1.0), 1.25 - 15.0 / 3.0, 1e-15);
    EXPECT_THROW(psi(c0, 1, 0.0), Error);
}

TEST(OrderStats, SingleCapital) {
    const std::vector<Capital> caps{make_capital(s1(40), 0.3)};
    for (double t : {1.0, 10.0, 1e4}) {
        const auto os = order_stats(caps, 1, t, 1);
        ASSERT_EQ(os.entries.size(), 1u);
        EXPECT_EQ(os.entries[0].z, s1(40));
        EXPECT_EQ(os.entries[0].rank, 1u);
    }
}

TEST(OrderStats, Errors) {
    std::vector<Capital> none;
    try {
        order_stats(none, 1, 1.0, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DegenerateInput);
    }
    const std::vector<Capital> one{make_capital(s1(0), 0.0)};
    EXPECT_THROW(order_stats(one, 1, 1.0, 2), Error);
    EXPECT_THROW(order_stats(one, 1, -1.0, 1), Error);
}

TEST(OrderStats, HandCraftedTies) {
    // All have Psi = 1 at t = 10 with c = 0.
    const double l3 = std::log(std::log(std::log(100.0)));
    std::vector<Capital> caps{
        make_capital(s1(3), 1.0),
        make_capital(s1(-3), 1.0),
        make_capital(s1(100), 1.0 + l3 * 100 / 10),
        make_capital(s1(-100), 1.0 + l3 * 100 / 10),
        make_capital(s1(0), 1.0),
    };
    const auto os = order_stats(caps, 1, 10.0, 5);
    const auto ref = brute_order(caps, 1, 10.0, 0.0, 5);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(os.entries[i].z, ref[i]) << i;
    EXPECT_EQ(os.entries[0].z, s1(100));
    EXPECT_EQ(os.entries[1].z, s1(-100));
    EXPECT_EQ(os.entries[2].z, s1(3));
    EXPECT_EQ(os.entries[3].z, s1(0));
    EXPECT_EQ(os.entries[4].z, s1(-3));
}

TEST(OrderStats, BruteForceEquivalence) {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto f = field_1d(100, seed);
        CapitalOptions o;
        o.margin = MarginPolicy::Exclude;
        const auto set = find_capitals(f, ball(1, {}, 90), 0.5, o);
        const std::size_t k = std::min<std::size_t>(set.capitals.size(), 6);
        for (double t : {0.5, 3.0, 20.0, 300.0})
            for (double c : {0.0, -0.5, 0.7}) {
                const auto os = order_stats(set, 1, t, k, c);
                const auto ref = brute_order(set.capitals, 1, t, c, k);
                for (std::size_t i = 0; i < k; ++i) ASSERT_EQ(os.entries[i].z, ref[i]) << seed << " " << t;
                for (std::size_t i = 1; i < k; ++i) EXPECT_GE(os.entries[i - 1].psi, os.entries[i].psi);
                const auto one = order_stats(set, 1, t, 1, c);
                EXPECT_EQ(one.entries[0].z, ref[0]);
            }
    }
}

TEST(OrderStats, PenaltyIsDistanceOverT) {
    std::vector<Capital> caps{make_capital(s1(2), 1.0), make_capital(s1(-14), 1.5)};
    // c = -1 makes the clipped factor exactly 1 when |z| <= e^e.
    const auto os = order_stats(caps, 1, 4.0, 2, -1.0);
    EXPECT_NEAR(os.entries[0].psi, 1.0 - 2.0 / 4.0, 1e-15);
    EXPECT_NEAR(os.entries[1].psi, 1.5 - 14.0 / 4.0, 1e-15);
}

namespace {

CapitalSet two_capital_set(Site near, double l_near, Site far, double l_far) {
    CapitalSet set;
    set.search_window = ball(1, {}, 100000);
    set.capitals = {make_capital(near, l_near), make_capital(far, l_far)};
    return set;
}

} // namespace

TEST(ZTrajectory, TwoCapitalCrossing) {
    const auto set = two_capital_set(s1(15), 1.0, s1(1000), 1.5);
    const double g = 1000.0 * std::log(std::log(std::log(1000.0)));
    const double t_star = g / (1.5 - 1.0);  // 1 = 1.5 - g / t
    std::vector<double> grid;
    for (double t = 100; t <= 3000; t += 100) grid.push_back(t);
    const auto tr = z_trajectory(set, 1, grid, 2);
    ASSERT_EQ(tr.jump_times.size(), 1u);
    EXPECT_NEAR(tr.jump_times[0], t_star, 1e-10 * t_star);
    EXPECT_NEAR(tr.jump_times[0] / t_star - 1.0, 0.0, 1e-10);
    ASSERT_EQ(tr.leaders.size(), 2u);
    EXPECT_EQ(tr.leaders[0], s1(15));
    EXPECT_EQ(tr.leaders[1], s1(1000));
    for (const auto& os : tr.stats) {
        const Site expect = os.t < t_star ? s1(15) : s1(1000);
        EXPECT_EQ(os.entries[0].z, expect) << os.t;
        EXPECT_EQ(os.entries.size(), 2u);
    }
}

TEST(ZTrajectory, SingleCapitalConstant) {
    CapitalSet set;
    set.search_window = ball(1, {}, 100000);
    set.capitals = {make_capital(s1(-7), 0.4)};
    const std::vector<double> grid{5, 50, 500, 5000};
    const auto tr = z_trajectory(set, 1, grid, 1);
    EXPECT_TRUE(tr.jump_times.empty());
    for (const auto& os : tr.stats) EXPECT_EQ(os.entries[0].z, s1(-7));
}

TEST(ZTrajectory, SingleCapitalField) {
    std::vector<double> v(301, -1.0);
    v[150 + 4] = 4.0;
    const auto f = manual_1d(v);
    CapitalOptions o;
    o.margin = MarginPolicy::Exclude;
    const std::vector<double> grid{2, 5, 10, 20};
    const auto tr = z_trajectory(f, grid, 0.5, 1, 0.0, o);
    // Sites at xi = -1 have radius 0 and count as capitals with small lambda.
    EXPECT_TRUE(tr.jump_times.empty());
    for (const auto& os : tr.stats) EXPECT_EQ(os.entries[0].z, s1(4));
}

TEST(ZTrajectory, WindowTooSmall) {
    const auto set = two_capital_set(s1(15), 1.0, s1(1000), 1.5);
    CapitalSet small = set;
    small.search_window = ball(1, {}, 50);
    const std::vector<double> grid{10, 100};
    try {
        z_trajectory(small, 1, grid, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Window);
    }
    const auto f = field_1d(50, 2);
    EXPECT_THROW(z_trajectory(f, grid, 0.5, 1), Error);
    const std::vector<double> bad{10, 5};
    EXPECT_THROW(z_trajectory(set, 1, bad, 1), Error);
}

TEST(ZTrajectory, SampledMonotone) {
    std::vector<double> grid;
    for (double t = 4; t <= 40; t += 0.25) grid.push_back(t);
    CapitalOptions o;
    o.margin = MarginPolicy::Exclude;
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        const auto f = field_1d(static_cast<int>(macro_box_radius(40)) + 10, seed);
        const auto tr = z_trajectory(f, grid, 0.5, 1, 0.0, o);
        for (std::size_t i = 1; i < tr.stats.size(); ++i) {
            EXPECT_GE(l1_norm(tr.stats[i].entries[0].z, 1), l1_norm(tr.stats[i - 1].entries[0].z, 1));
            EXPECT_GE(tr.stats[i].entries[0].psi, tr.stats[i - 1].entries[0].psi - 1e-15);
        }
        for (std::size_t i = 1; i < tr.leaders.size(); ++i)
            EXPECT_GT(l1_norm(tr.leaders[i], 1), l1_norm(tr.leaders[i - 1], 1));
        // Exact breakpoints agree with the grid leaders.
        for (const auto& os : tr.stats) {
            const auto it = std::upper_bound(tr.jump_times.begin(), tr.jump_times.end(), os.t);
            EXPECT_EQ(tr.leaders[static_cast<std::size_t>(it - tr.jump_times.begin())], os.entries[0].z);
        }
    }
}

TEST(ZTrajectory, PsiContinuousAcrossJumps) {
    const auto set = two_capital_set(s1(20), 1.0, s1(800), 1.5);
    const auto pts = ranked_capitals(set.capitals, 1, 0.0);
    const std::vector<double> grid{50, 5000};
    const auto tr = z_trajectory(set, 1, grid, 1);
    ASSERT_EQ(tr.jump_times.size(), 1u);
    const double ts = tr.jump_times[0];
    const double before = order_stats(set, 1, ts * (1 - 1e-9), 1).entries[0].psi;
    const double after = order_stats(set, 1, ts * (1 + 1e-9), 1).entries[0].psi;
    EXPECT_NEAR(before, after, 1e-8);
    EXPECT_EQ(pts.size(), 2u);
}

TEST(Islands, EmptyWhenNoExceedance) {
    const auto f = field_1d(60, 3);
    IslandParams p;
    p.L = 50;
    p.A = 1e-3;
    p.beta_R = 0.75;
    p.kappa = 0.5;
    // Shift the level above every site by lowering the field.
    std::vector<double> v(f.values());
    for (auto& x : v) x -= 100;
    const PotentialField low(f.window(), v, 1.0, 0, "shifted");
    const auto is = islands(low, p);
    EXPECT_TRUE(is.exceedances.empty());
    EXPECT_TRUE(is.islands.empty());
}

TEST(Islands, SingleExceedance) {
    std::vector<double> v(121, 0.0);
    v[60 + 7] = 10.0;
    const auto f = manual_1d(v);
    IslandParams p;
    p.L = 50;
    p.A = 0.5;
    p.beta_R = 0.75;
    p.kappa = 0.5;
    const auto is = islands(f, p);
    ASSERT_EQ(is.islands.size(), 1u);
    const long R = is.R_L;
    EXPECT_EQ(R, 3);  // ceil(ln(50)^0.75) = 3
    std::vector<Site> expect;
    for (int x = 7 - static_cast<int>(R); x <= 7 + R; ++x) expect.push_back(s1(x));
    EXPECT_EQ(is.islands[0].sites, expect);
    EXPECT_EQ(is.islands[0].z_C, s1(7));
    const auto dom = LatticeDomain::from_sites(1, expect);
    EXPECT_NEAR(is.islands[0].lambda1, dense_oracle(dom, f.restrict_to(dom)).values[0], 1e-9);
}

TEST(Islands, ClippedAtBoxEdge) {
    std::vector<double> v(121, 0.0);
    v[60 + 49] = 10.0;
    const auto f = manual_1d(v);
    IslandParams p;
    p.L = 50;
    p.A = 0.5;
    p.beta_R = 0.75;
    p.kappa = 0.5;
    const auto is = islands(f, p);
    ASSERT_EQ(is.islands.size(), 1u);
    EXPECT_EQ(is.islands[0].sites.front(), s1(46));
    EXPECT_EQ(is.islands[0].sites.back(), s1(50));
}

TEST(Islands, RadiusRule) {
    EXPECT_EQ(island_radius(50, 0.75), 3);
    EXPECT_EQ(island_radius(1e6, 0.5), 4);   // ceil(13.8^0.5) = 4 < 13
    EXPECT_EQ(island_radius(1e6, 0.9), 11);  // ceil(13.8^0.9) = 11 < 13
    EXPECT_EQ(island_radius(2, 0.5), 1);
}

TEST(Islands, Errors) {
    const auto f = field_1d(60, 3);
    IslandParams p;
    p.L = 50;
    p.A = 1;
    p.kappa = 0.5;
    p.beta_R = 0.4;
    EXPECT_THROW(islands(f, p), Error);
    p.beta_R = 1.2;
    EXPECT_THROW(islands(f, p), Error);
    p.beta_R = 0.75;
    p.A = 0;
    EXPECT_THROW(islands(f, p), Error);
    p.A = 1;
    p.L = 70;
    EXPECT_THROW(islands(f, p), Error);
}

TEST(Islands, UnionFindEquivalence) {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto f = field_1d(100, seed);
        for (double A : {0.25, 0.5, 1.0}) {
            IslandParams p;
            p.L = 100;
            p.A = A;
            p.beta_R = 0.75;
            p.kappa = 0.5;
            p.chi = 1.0;
            const auto is = islands(f, p);
            const auto ref = brute_islands(f, 100, A, static_cast<int>(is.R_L));
            std::set<std::vector<Site>> got;
            for (const auto& isl : is.islands) {
                got.insert(isl.sites);
                double best = -1e300;
                Site arg{};
                for (const auto& s : isl.sites)
                    if (f(s) > best) best = f(s), arg = s;
                EXPECT_EQ(isl.z_C, arg);
                EXPECT_EQ(isl.relevant, isl.lambda1 > is.hat_a_L - 1.0 - 0.5);
            }
            ASSERT_EQ(got, ref) << "seed " << seed << " A " << A;
        }
    }
}

TEST(Islands, RelevantCentresAreCapitals) {
    // Logged comparison of relevant islands against capitals.
    std::size_t relevant = 0, matched = 0;
    double worst_gap = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto f = field_1d(300, seed);
        IslandParams p;
        p.L = 250;
        p.A = 1.0;
        p.beta_R = 0.75;
        p.kappa = 0.5;
        p.chi = 1.0;
        const auto is = islands(f, p);
        CapitalOptions o;
        o.margin = MarginPolicy::Exclude;
        const auto caps = find_capitals(f, ball(1, {}, 250), 0.5, o);
        for (const auto& isl : is.islands) {
            if (!isl.relevant) continue;
            ++relevant;
            for (const auto& c : caps.capitals)
                if (c.z == isl.z_C) {
                    ++matched;
                    worst_gap = std::max(worst_gap, std::abs(c.lambda_C - isl.lambda1));
                }
        }
    }
    std::printf("relevant islands %zu, centres that are capitals %zu, largest eigenvalue gap %.3g\n", relevant,
                matched, worst_gap);
    EXPECT_GT(relevant, 0u);
}

TEST(CurlyL, Examples) {
    const std::vector<double> zero(7, 0.0);
    EXPECT_DOUBLE_EQ(curly_L(zero, 1.0), 7.0);
    const std::vector<double> minf(4, -std::numeric_limits<double>::infinity());
    EXPECT_EQ(curly_L(minf, 2.0), 0.0);
    const std::vector<double> a{0.3, -1.2}, b{2.0, 0.1, -0.4};
    std::vector<double> ab(a);
    ab.insert(ab.end(), b.begin(), b.end());
    EXPECT_NEAR(curly_L(ab, 1.5), curly_L(a, 1.5) + curly_L(b, 1.5), 1e-15);
}

TEST(DecayFit, ExactExponential) {
    const auto dom = LatticeDomain::from_box(ball(1, {}, 20));
    EigenPair p;
    for (const auto& s : dom.sites()) p.phi.push_back(std::exp(-0.7 * std::abs(s[0] - 3)));
    const auto fit = eigfun_decay_fit(dom, p, s1(3));
    EXPECT_NEAR(fit.slope, -0.7, 1e-10);
    EXPECT_NEAR(fit.r_squared, 1.0, 1e-10);
}

TEST(DecayFit, Constant) {
    const auto dom = LatticeDomain::from_box(ball(2, {}, 3));
    EigenPair p;
    p.phi.assign(dom.size(), 0.2);
    EXPECT_NEAR(eigfun_decay_fit(dom, p, {}).slope, 0.0, 1e-14);
}

TEST(DecayFit, InsufficientData) {
    const auto dom = LatticeDomain::from_box(ball(1, {}, 3));
    EigenPair p;
    p.phi = {0, 0, 1e-20, 0.5, 1e-15, 0.2, 0};
    try {
        eigfun_decay_fit(dom, p, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InsufficientData);
    }
}

TEST(DecayFit, SampledIslandEigenfunctions) {
    std::size_t negative = 0, good = 0, total = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto f = field_1d(120, seed);
        CapitalOptions o;
        o.margin = MarginPolicy::Exclude;
        const auto caps = find_capitals(f, ball(1, {}, 100), 0.5, o);
        const auto os = order_stats(caps, 1, 10.0, 1);
        const Site z = os.entries[0].z;
        const auto dom = LatticeDomain::from_box(ball(1, z, 15));
        const auto pr = principal_eig(dom, f.restrict_to(dom));
        const auto fit = eigfun_decay_fit(dom, pr, z);
        ++total;
        negative += fit.slope < 0;
        good += fit.r_squared > 0.9;
    }
    std::printf("decay fits: %zu of %zu negative, %zu with r^2 > 0.9\n", negative, total, good);
    EXPECT_GE(2 * negative, total);
}
