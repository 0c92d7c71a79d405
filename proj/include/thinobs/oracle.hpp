#pragma once

// Ground truth independent of the solver path: the classical 3/2-homogeneous
// 2D Signorini solution and exhaustive active-set enumeration for tiny linear
// instances.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "thinobs/error.hpp"
#include "thinobs/grid.hpp"
#include "thinobs/operators.hpp"
#include "thinobs/scheme.hpp"
#include "thinobs/solver.hpp"

namespace thinobs {

/// u = r^{3/2} cos(3 theta / 2) with theta in [0, pi] measured from the
/// positive x1 axis in the upper half plane, reflected evenly to x2 < 0.
/// Contact set {x2 = 0, x1 <= 0}.
inline double exact_signorini_value(double x1, double x2) {
    if (x2 == 0.0 && x1 <= 0.0) return 0.0;
    const double r = std::hypot(x1, x2);
    const double theta = std::atan2(std::abs(x2), x1);
    return std::pow(r, 1.5) * std::cos(1.5 * theta);
}

/// Jump of u_{x2} across the plane: -3 |x1|^{1/2} on the contact set.
inline double exact_signorini_sigma(double x1) { return x1 < 0.0 ? -3.0 * std::sqrt(-x1) : 0.0; }

inline ScalarField exact_signorini_field(const GridPtr& grid) {
    if (grid->dimension() != 2) throw Error(ErrorKind::unsupported_dimension, "the exact Signorini benchmark is 2D only");
    return ScalarField::sample(grid, [](const Point& x) { return exact_signorini_value(x[0], x[1]); });
}

/// Enumerates every candidate active set on the THIN nodes, solves the
/// linear system densely for each, and returns the unique feasible field.
inline ScalarField brute_force_thin_obstacle(const ThinObstacleSpec& spec) {
    if (spec.family.size() != 1) throw Error(ErrorKind::invalid_family, "brute force needs a single linear member");
    const GridPtr& gp = spec.boundary.grid_ptr();
    const Grid& g = *gp;
    const auto& thin = g.nodes(NodeClass::thin);
    if (thin.size() > 12) throw Error(ErrorKind::invalid_spec, "brute force is limited to 12 THIN nodes");

    const MemberStencil st = build_member_stencil(spec.family[0], g);
    std::vector<Index> unknowns;
    std::vector<long> row_of(g.size(), -1);
    for (Index x = 0; x < g.size(); ++x) {
        if (g.free(x)) {
            row_of[x] = static_cast<long>(unknowns.size());
            unknowns.push_back(x);
        }
    }
    const auto m = static_cast<Eigen::Index>(unknowns.size());
    auto stencil_value = [&](const ScalarField& u, Index x) {
        double acc = st.center * u[x] + st.constant;
        for (const auto& t : st.taps) acc += t.weight * u[static_cast<Index>(static_cast<long>(x) + t.delta)];
        return acc;
    };

    struct Candidate {
        std::vector<Index> active;
        ScalarField u;
    };
    std::vector<Candidate> feasible;
    const unsigned long count = 1UL << thin.size();
    for (unsigned long mask = 0; mask < count; ++mask) {
        std::vector<char> is_active(g.size(), 0);
        std::vector<Index> active;
        for (std::size_t k = 0; k < thin.size(); ++k) {
            if (mask & (1UL << k)) {
                is_active[thin[k]] = 1;
                active.push_back(thin[k]);
            }
        }
        Matrix A = Matrix::Zero(m, m);
        Vector b = Vector::Zero(m);
        for (Eigen::Index r = 0; r < m; ++r) {
            const Index x = unknowns[static_cast<std::size_t>(r)];
            if (is_active[x]) {
                A(r, r) = 1.0;
                b[r] = spec.obstacle[x];
                continue;
            }
            A(r, r) = -st.center;
            b[r] = st.constant;
            for (const auto& t : st.taps) {
                const Index y = static_cast<Index>(static_cast<long>(x) + t.delta);
                if (row_of[y] >= 0) {
                    A(r, row_of[y]) -= t.weight;
                } else {
                    b[r] += t.weight * spec.boundary[y];
                }
            }
        }
        const Vector sol = A.fullPivLu().solve(b);
        ScalarField u(gp, 0.0);
        for (Index x : g.nodes(NodeClass::boundary)) u[x] = spec.boundary[x];
        for (Eigen::Index r = 0; r < m; ++r) u[unknowns[static_cast<std::size_t>(r)]] = sol[r];

        bool ok = true;
        for (Index x : thin) {
            if (u[x] < spec.obstacle[x] - 1e-10) ok = false;
            if (is_active[x] && stencil_value(u, x) > 1e-10) ok = false;
        }
        if (ok) feasible.push_back({std::move(active), std::move(u)});
    }
    if (feasible.empty()) throw Error(ErrorKind::infeasible, "no candidate active set is feasible");
    std::sort(feasible.begin(), feasible.end(), [](const Candidate& a, const Candidate& b) { return a.active < b.active; });
    for (std::size_t k = 1; k < feasible.size(); ++k) {
        for (Index x = 0; x < g.size(); ++x) {
            if (std::abs(feasible[k].u[x] - feasible[0].u[x]) > 1e-8) {
                throw Error(ErrorKind::ambiguous, "distinct feasible active sets produce different fields");
            }
        }
    }
    return feasible.front().u;
}

}  // namespace thinobs
