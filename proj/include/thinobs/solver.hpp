#pragma once

// Monotone solvers for the Dirichlet, thick-obstacle and thin-obstacle
// problems, plus the obstacle extension and penalization constructions.
//
// All three problems are instances of one discrete complementarity system
//
//     min( -F_h(u)(x), u(x) - lower(x) ) = 0   at unknown nodes,
//     u = prescribed                           elsewhere,
//
// with lower = -inf where no constraint applies. Policy iteration (Howard)
// treats "sit on the obstacle" as one more policy next to the family
// members, so every outer step is a sparse linear solve with frozen
// policies and the fixed point satisfies complementarity exactly.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <json.hpp>

#include "thinobs/error.hpp"
#include "thinobs/grid.hpp"
#include "thinobs/operators.hpp"
#include "thinobs/scheme.hpp"

namespace thinobs {

enum class SolverMethod { policy_iteration, relaxation };
enum class SweepMode { jacobi, gauss_seidel };

constexpr const char* to_string(SweepMode m) noexcept { return m == SweepMode::jacobi ? "jacobi" : "gauss_seidel"; }
constexpr const char* to_string(SolverMethod m) noexcept {
    return m == SolverMethod::policy_iteration ? "policy_iteration" : "relaxation";
}

struct SolveControl {
    double tol = 1e-8;
    long max_iters = 0;  // 0 selects 10 * (policy count) * N^2
    SolverMethod method = SolverMethod::policy_iteration;
    SweepMode sweep_mode = SweepMode::gauss_seidel;
    int threads = 1;
};

struct SolveReport {
    long iterations = 0;
    double max_pde_residual = 0.0;
    double max_supersolution_violation = 0.0;
    double complementarity_gap = 0.0;
    std::vector<Index> active_set;
    std::string linear_solver;
    double wall_seconds = 0.0;
    bool converged = false;

    [[nodiscard]] bool within(double tol) const {
        return max_pde_residual <= tol && max_supersolution_violation <= tol && complementarity_gap <= tol;
    }

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"iterations", iterations},
                {"max_pde_residual", max_pde_residual},
                {"max_supersolution_violation", max_supersolution_violation},
                {"complementarity_gap", complementarity_gap},
                {"active_set", active_set},
                {"active_count", active_set.size()},
                {"linear_solver", linear_solver},
                {"wall_seconds", wall_seconds},
                {"converged", converged}};
    }
};

struct ThinObstacleSpec {
    BellmanFamily family;
    ScalarField obstacle;  // read on THIN nodes
    ScalarField boundary;  // read on BOUNDARY nodes
    SolveControl control{};
};

struct ThickObstacleSpec {
    BellmanFamily family;
    ScalarField obstacle;  // read on every non-exterior node
    ScalarField boundary;
    SolveControl control{};
};

namespace detail {

template <class Fn>
void parallel_for(Index count, int threads, Fn&& fn) {
    if (threads <= 1 || count < 1024) {
        fn(Index{0}, count);
        return;
    }
    const Index chunk = (count + static_cast<Index>(threads) - 1) / static_cast<Index>(threads);
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) {
        const Index b = static_cast<Index>(t) * chunk;
        const Index e = std::min(count, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
}

inline constexpr double kUnconstrained = -std::numeric_limits<double>::infinity();

inline long default_max_iters(const Grid& g, std::size_t policies) {
    return 10L * static_cast<long>(policies) * g.resolution() * g.resolution();
}

}  // namespace detail

/// Report fields for a candidate solution of the complementarity system.
inline SolveReport assess(const DiscreteBellman& op, const ScalarField& u, const std::vector<Index>& unknowns,
                          const std::vector<double>& lower, double tol) {
    SolveReport r;
    const auto vals = u.values();
    for (Index x : unknowns) {
        const double F = op.apply(vals, x);
        r.max_supersolution_violation = std::max(r.max_supersolution_violation, std::max(F, 0.0));
        bool active = false;
        if (lower[x] != detail::kUnconstrained) {
            const double slack = u[x] - lower[x];
            r.complementarity_gap = std::max(r.complementarity_gap, std::abs(std::min(slack, -F)));
            active = slack <= tol;
            if (active) r.active_set.push_back(x);
        }
        if (!active) r.max_pde_residual = std::max(r.max_pde_residual, std::abs(F));
    }
    return r;
}

namespace detail {

inline void howard(const DiscreteBellman& op, ScalarField& u, const std::vector<Index>& unknowns,
                   const std::vector<double>& lower, const SolveControl& /*ctl*/, long max_iters, SolveReport& report) {
    const Grid& g = u.grid();
    const double h2 = g.spacing() * g.spacing();
    const Index m = unknowns.size();
    std::vector<long> row_of(g.size(), -1);
    for (Index r = 0; r < m; ++r) row_of[unknowns[r]] = static_cast<long>(r);

    const std::size_t obstacle_policy = op.size();
    std::vector<std::size_t> policy(m, 0);
    double scale = 1.0;
    for (double v : u.values()) scale = std::max(scale, std::abs(v));
    for (Index r = 0; r < m; ++r) {
        if (lower[unknowns[r]] != kUnconstrained) scale = std::max(scale, std::abs(lower[unknowns[r]]));
    }
    const double tie = 1e-13 * scale;

    using SpMat = Eigen::SparseMatrix<double>;
    Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu;
    std::vector<Eigen::Triplet<double>> trip;
    Vector rhs(static_cast<Eigen::Index>(m));
    long it = 0;

    while (true) {
        ++it;
        trip.clear();
        for (Index r = 0; r < m; ++r) {
            const Index x = unknowns[r];
            const auto er = static_cast<Eigen::Index>(r);
            if (policy[r] == obstacle_policy) {
                trip.emplace_back(er, er, 1.0);
                rhs[er] = lower[x];
                continue;
            }
            // h^2 * (-A_k u) = h^2 * c_k
            const MemberStencil& st = op.stencil(policy[r]);
            double b = h2 * st.constant;
            trip.emplace_back(er, er, -h2 * st.center);
            for (const auto& t : st.taps) {
                const Index y = static_cast<Index>(static_cast<long>(x) + t.delta);
                if (row_of[y] >= 0) {
                    trip.emplace_back(er, static_cast<Eigen::Index>(row_of[y]), -h2 * t.weight);
                } else {
                    b += h2 * t.weight * u[y];
                }
            }
            rhs[er] = b;
        }
        SpMat A(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
        A.setFromTriplets(trip.begin(), trip.end());
        A.makeCompressed();
        lu.compute(A);
        if (lu.info() != Eigen::Success) {
            throw Error(ErrorKind::no_convergence, "sparse LU factorization failed: " + lu.lastErrorMessage());
        }
        const Vector sol = lu.solve(rhs);
        for (Index r = 0; r < m; ++r) u[unknowns[r]] = sol[static_cast<Eigen::Index>(r)];

        // Policy improvement: argmin over {-A_k u - c_k} U {u - lower}, in
        // h^2-scaled units; the current policy is kept on near-ties.
        bool changed = false;
        const auto vals = u.values();
        for (Index r = 0; r < m; ++r) {
            const Index x = unknowns[r];
            auto q = [&](std::size_t p) {
                return p == obstacle_policy ? u[x] - lower[x] : -h2 * op.member_value(vals, x, p);
            };
            std::size_t best = 0;
            double best_q = q(0);
            for (std::size_t p = 1; p < op.size(); ++p) {
                const double v = q(p);
                if (v < best_q) best_q = v, best = p;
            }
            if (lower[x] != kUnconstrained) {
                const double v = q(obstacle_policy);
                if (v < best_q) best_q = v, best = obstacle_policy;
            }
            if (best != policy[r] && q(policy[r]) > best_q + tie) {
                policy[r] = best;
                changed = true;
            }
        }
        if (!changed || it >= max_iters) break;
    }
    report.iterations = it;
    report.linear_solver = "howard+sparse_lu(colamd)";
}

inline void relaxation(const DiscreteBellman& op, ScalarField& u, const std::vector<Index>& unknowns,
                       const std::vector<double>& lower, const SolveControl& ctl, long max_iters, SolveReport& report) {
    const Grid& g = u.grid();
    const double h2 = g.spacing() * g.spacing();
    const double stop = 1e-3 * ctl.tol * h2;

    // Start from a constant supersolution so the iterates decrease monotonically.
    double top = -std::numeric_limits<double>::infinity();
    for (Index x = 0; x < g.size(); ++x) {
        if (g.inside(x)) top = std::max(top, u[x]);
    }
    for (Index x : unknowns) top = std::max(top, lower[x]);
    for (Index x : unknowns) u[x] = top;

    auto local = [&](std::span<const double> vals, Index x) {
        double v = op.member_root(vals, x, 0);
        for (std::size_t k = 1; k < op.size(); ++k) v = std::max(v, op.member_root(vals, x, k));
        return std::max(v, lower[x]);
    };

    long it = 0;
    std::vector<double> next(unknowns.size());
    while (it < max_iters) {
        ++it;
        double delta = 0.0;
        if (ctl.sweep_mode == SweepMode::gauss_seidel) {
            for (Index x : unknowns) {
                const double v = local(u.values(), x);
                delta = std::max(delta, std::abs(v - u[x]));
                u[x] = v;
            }
        } else {
            const auto vals = std::as_const(u).values();
            parallel_for(unknowns.size(), ctl.threads, [&](Index b, Index e) {
                for (Index r = b; r < e; ++r) next[r] = local(vals, unknowns[r]);
            });
            for (Index r = 0; r < unknowns.size(); ++r) {
                delta = std::max(delta, std::abs(next[r] - u[unknowns[r]]));
                u[unknowns[r]] = next[r];
            }
        }
        if (delta <= stop) break;
    }
    report.iterations = it;
    report.linear_solver = std::string("projected_") + to_string(ctl.sweep_mode) + "_relaxation";
}

}  // namespace detail

/// Solves min(-F_h(u), u - lower) = 0 at `unknowns`; every other node keeps
/// its value from `fixed`. Throws no-convergence if the report misses tol.
inline std::pair<ScalarField, SolveReport> solve_constrained(const BellmanFamily& family, const ScalarField& fixed,
                                                             const std::vector<Index>& unknowns,
                                                             const std::vector<double>& lower,
                                                             const SolveControl& ctl) {
    const auto t0 = std::chrono::steady_clock::now();
    const Grid& g = fixed.grid();
    const DiscreteBellman op(family, g);
    const long max_iters = ctl.max_iters > 0 ? ctl.max_iters : detail::default_max_iters(g, family.size() + 1);
    ScalarField u = fixed;
    SolveReport report;
    if (ctl.method == SolverMethod::policy_iteration) {
        detail::howard(op, u, unknowns, lower, ctl, max_iters, report);
    } else {
        detail::relaxation(op, u, unknowns, lower, ctl, max_iters, report);
    }
    SolveReport measured = assess(op, u, unknowns, lower, ctl.tol);
    measured.iterations = report.iterations;
    measured.linear_solver = report.linear_solver;
    measured.converged = measured.within(ctl.tol);
    measured.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!measured.converged) {
        throw Error(ErrorKind::no_convergence,
                    "after " + std::to_string(measured.iterations) + " iterations: pde residual " +
                        format_double(measured.max_pde_residual) + ", supersolution violation " +
                        format_double(measured.max_supersolution_violation) + ", complementarity gap " +
                        format_double(measured.complementarity_gap));
    }
    return {std::move(u), std::move(measured)};
}

namespace detail {

inline void check_same_grid(const ScalarField& a, const ScalarField& b, const char* what) {
    if (a.grid().spec() != b.grid().spec()) throw Error(ErrorKind::invalid_spec, std::string(what) + " lives on a different grid");
}

inline ScalarField with_boundary(const ScalarField& g) {
    ScalarField u(g.grid_ptr(), 0.0);
    for (Index x : g.grid().nodes(NodeClass::boundary)) {
        if (!std::isfinite(g[x])) throw Error(ErrorKind::invalid_spec, "boundary data is not finite");
        u[x] = g[x];
    }
    return u;
}

inline std::vector<Index> free_nodes(const Grid& g) {
    std::vector<Index> out;
    for (Index x = 0; x < g.size(); ++x) {
        if (g.free(x)) out.push_back(x);
    }
    return out;
}

}  // namespace detail

inline std::pair<ScalarField, SolveReport> solve_dirichlet_report(const BellmanFamily& family, const ScalarField& g,
                                                                  const SolveControl& ctl = {}) {
    const std::vector<double> lower(g.size(), detail::kUnconstrained);
    return solve_constrained(family, detail::with_boundary(g), detail::free_nodes(g.grid()), lower, ctl);
}

/// F_h(D^2 psi) = 0 at INTERIOR and THIN nodes, psi = g on BOUNDARY nodes.
inline ScalarField solve_dirichlet(const BellmanFamily& family, const ScalarField& g, const SolveControl& ctl = {}) {
    return solve_dirichlet_report(family, g, ctl).first;
}

inline std::pair<ScalarField, SolveReport> solve_thick_obstacle(const ThickObstacleSpec& spec) {
    const Grid& g = spec.boundary.grid();
    detail::check_same_grid(spec.obstacle, spec.boundary, "obstacle");
    for (Index x : g.nodes(NodeClass::boundary)) {
        if (spec.obstacle[x] > spec.boundary[x]) {
            throw Error(ErrorKind::infeasible_obstacle,
                        "obstacle exceeds boundary data at node " + std::to_string(x) + " (" +
                            format_double(spec.obstacle[x]) + " > " + format_double(spec.boundary[x]) + ")");
        }
    }
    std::vector<double> lower(g.size(), detail::kUnconstrained);
    const auto unknowns = detail::free_nodes(g);
    for (Index x : unknowns) {
        if (!std::isfinite(spec.obstacle[x])) throw Error(ErrorKind::invalid_spec, "obstacle is not finite");
        lower[x] = spec.obstacle[x];
    }
    return solve_constrained(spec.family, detail::with_boundary(spec.boundary), unknowns, lower, spec.control);
}

/// Constraint u >= phi on THIN nodes only.
inline std::pair<ScalarField, SolveReport> solve_thin_obstacle(const ThinObstacleSpec& spec) {
    const Grid& g = spec.boundary.grid();
    detail::check_same_grid(spec.obstacle, spec.boundary, "obstacle");
    std::vector<double> lower(g.size(), detail::kUnconstrained);
    for (Index x : g.nodes(NodeClass::thin)) {
        if (!std::isfinite(spec.obstacle[x])) throw Error(ErrorKind::invalid_spec, "obstacle is not finite on the thin set");
        lower[x] = spec.obstacle[x];
    }
    return solve_constrained(spec.family, detail::with_boundary(spec.boundary), detail::free_nodes(g), lower,
                             spec.control);
}

/// Max-principle bound on ||u||_inf: max(|g| on BOUNDARY, |phi| on THIN).
inline double a_priori_bound(const ThinObstacleSpec& spec) {
    return std::max(spec.boundary.max_abs({NodeClass::boundary}), spec.obstacle.max_abs({NodeClass::thin}));
}

/// Obstacle extension h: F(D^2 h) = 0 in each half ball, h = -M on the
/// curved boundary, h = phi on the thin set. The two halves are solved
/// independently and glued along the plane.
inline ScalarField extend_obstacle(const ThinObstacleSpec& spec, double M) {
    const GridPtr& gp = spec.boundary.grid_ptr();
    const Grid& g = *gp;
    if (M < a_priori_bound(spec) - 1e-15) {
        throw Error(ErrorKind::invalid_spec, "lateral bound M is below max(|g|, |phi|)");
    }
    const int axis = g.normal_axis();
    ScalarField data(gp, 0.0);
    for (Index x = 0; x < g.size(); ++x) {
        if (!g.inside(x)) continue;
        data[x] = g.node_class(x) == NodeClass::thin ? spec.obstacle[x] : -M;
    }
    const std::vector<double> lower(g.size(), detail::kUnconstrained);
    ScalarField h(gp, 0.0);
    for (int side : {1, -1}) {
        std::vector<Index> unknowns;
        for (Index x : g.nodes(NodeClass::interior)) {
            if (g.lattice(x)[axis] * side > 0) unknowns.push_back(x);
        }
        std::sort(unknowns.begin(), unknowns.end());
        const ScalarField half = solve_constrained(spec.family, data, unknowns, lower, spec.control).first;
        for (Index x = 0; x < g.size(); ++x) {
            if (g.inside(x) && g.lattice(x)[axis] * side > 0) h[x] = half[x];
        }
    }
    for (Index x = 0; x < g.size(); ++x) {
        if (g.inside(x) && g.on_plane(x)) h[x] = data[x];
    }
    return h;
}

struct PenalizedResult {
    ScalarField u_eps;
    ScalarField obstacle;  // h_eps = max(h, phi - x_n^2 / eps)
    double band_width = 0.0;
    SolveReport report;
};

/// Thick obstacle problem with h_eps = max(h, phi(x') - x_n^2/eps) and
/// boundary data max(u_ref, phi - x_n^2/eps). band_width is the largest |x_n|
/// over free contact nodes {u_eps = h_eps}.
inline PenalizedResult penalized_solve(const ThinObstacleSpec& spec, double eps, const ScalarField& u_ref) {
    if (!(eps > 0.0)) throw Error(ErrorKind::invalid_spec, "epsilon must be positive");
    detail::check_same_grid(u_ref, spec.boundary, "reference solution");
    const GridPtr& gp = spec.boundary.grid_ptr();
    const Grid& g = *gp;
    const ScalarField h = extend_obstacle(spec, a_priori_bound(spec));

    ScalarField obstacle(gp, 0.0);
    ScalarField boundary(gp, 0.0);
    for (Index x = 0; x < g.size(); ++x) {
        if (!g.inside(x)) continue;
        const Index p = g.plane_node(x);
        const double xn = g.coordinate(x, g.normal_axis());
        const double hb = g.node_class(p) == NodeClass::thin ? spec.obstacle[p] - xn * xn / eps : detail::kUnconstrained;
        obstacle[x] = std::max(h[x], hb);
        if (g.node_class(x) == NodeClass::boundary) boundary[x] = std::max(u_ref[x], hb);
    }
    ThickObstacleSpec thick{spec.family, obstacle, boundary, spec.control};
    auto [u_eps, report] = solve_thick_obstacle(thick);
    double band = 0.0;
    for (Index x : report.active_set) band = std::max(band, std::abs(g.coordinate(x, g.normal_axis())));
    return {std::move(u_eps), std::move(obstacle), band, std::move(report)};
}

}  // namespace thinobs
