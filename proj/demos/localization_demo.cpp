// Samples a one-dimensional field, finds its capitals, and follows the
// localization centre Z_t over a time grid. The solution mass is then
// compared with the ball around the leading capital.

#include <cstdio>
#include <vector>

#include "pam/experiments.hpp"

int main() {
    using namespace pam;
    const double t_max = 40.0;
    const int radius = static_cast<int>(macro_box_radius(t_max)) + 10;
    const auto field = sample_field(1, ball(1, {}, radius), 1.0, 2024);

    std::vector<double> grid;
    for (double t = 5; t <= t_max; t += 5) grid.push_back(t);
    CapitalOptions opts;
    opts.margin = MarginPolicy::Exclude;
    const auto tr = z_trajectory(field, grid, 0.2, 3, 0.0, opts);

    std::printf("%8s %8s %12s %12s\n", "t", "Z_t", "psi", "lambda_C");
    for (const auto& st : tr.stats) {
        const auto& e = st.entries.front();
        std::printf("%8.1f %8d %12.6f %12.6f\n", st.t, e.z[0], e.psi, e.lambda_C);
    }
    std::printf("rank-1 jumps in [%g, %g]:", grid.front(), grid.back());
    for (double j : tr.jump_times) std::printf(" %.6f", j);
    std::printf("\n");

    const auto dom = LatticeDomain::from_box(field.window());
    const auto u = solve_ode(dom, field, t_max);
    const Site z = tr.stats.back().entries.front().z;
    double near = 0;
    for (std::size_t i = 0; i < dom.size(); ++i)
        if (l1_norm(dom.site(i) - z, 1) <= 3) near += u.values[i];
    std::printf("t = %g: U = %.6e, mass within distance 3 of Z_t = %.6f\n", t_max, u.total_mass, near / u.total_mass);
}
