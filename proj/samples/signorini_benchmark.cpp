// Solves the 2D Laplacian Signorini benchmark at a few resolutions and prints
// the error against the closed form, the jump profile and fitted exponents.
//
//   signorini_benchmark [N ...]

#include <cstdio>
#include <cstdlib>
#include <vector>

#include "thinobs/oracle.hpp"
#include "thinobs/regularity.hpp"
#include "thinobs/solver.hpp"

using namespace thinobs;

int main(int argc, char** argv) {
    std::vector<int> resolutions;
    for (int i = 1; i < argc; ++i) resolutions.push_back(std::atoi(argv[i]));
    if (resolutions.empty()) resolutions = {65, 129};

    for (int N : resolutions) {
        const GridPtr grid = build_grid({2, N});
        const ScalarField exact = exact_signorini_field(grid);
        ThinObstacleSpec spec{BellmanFamily::laplacian(2), ScalarField(grid, 0.0), exact, {}};
        const auto [u, report] = solve_thin_obstacle(spec);

        double err = 0.0;
        for (Index x = 0; x < grid->size(); ++x) {
            if (grid->inside(x) && grid->radius(x) <= 0.5) err = std::max(err, std::abs(u[x] - exact[x]));
        }
        const SigmaField sigma = compute_sigma(u);
        const Index origin = grid->origin();
        const auto flat = flatness_fit(u, origin, default_radii(*grid));
        const auto sh = sigma_holder(sigma, origin, default_radii(*grid));

        std::printf("N=%d  howard iterations=%ld  %.2fs  |u-u_exact|_inf(B_1/2)=%.3e  gap=%.1e\n", N,
                    report.iterations, report.wall_seconds, err, report.complementarity_gap);
        std::printf("  1+alpha(u)=%.4f  alpha(sigma)=%.4f  min sigma=%.4f\n", flat.estimate.exponent,
                    sh.exponent, sigma.min());
        for (double x1 : {-0.3, -0.2, -0.1}) {
            const Index node = *grid->nearest({x1, 0.0, 0.0});
            std::printf("  sigma(%.2f)=%.5f  exact=%.5f\n", x1, *sigma.at(node), exact_signorini_sigma(x1));
        }
    }
    return 0;
}
