#pragma once

// Diagnostics on solution fields: symmetrization, the normal-derivative jump
// sigma, the coincidence set, one-sided second-derivative bounds, barrier
// checks, and Holder exponents fitted from dyadic affine approximation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "thinobs/error.hpp"
#include "thinobs/grid.hpp"
#include "thinobs/operators.hpp"
#include "thinobs/solver.hpp"

namespace thinobs {

/// v(x', x_n) = (u(x', x_n) + u(x', -x_n)) / 2
inline ScalarField symmetrize(const ScalarField& u) {
    const Grid& g = u.grid();
    ScalarField v(u.grid_ptr(), 0.0);
    for (Index x = 0; x < g.size(); ++x) {
        if (g.inside(x)) v[x] = 0.5 * (u[x] + u[g.mirror(x)]);
    }
    return v;
}

/// Largest M^-(D_h^2 v) over INTERIOR nodes.
inline double max_pucci_minus(const ScalarField& v, const Ellipticity& ell) {
    double worst = -std::numeric_limits<double>::infinity();
    for (Index x : v.grid().nodes(NodeClass::interior)) {
        worst = std::max(worst, pucci_extremal(discrete_hessian(v, x), ell.lambda, ell.Lambda, PucciSign::minus));
    }
    return worst;
}

// ---------------------------------------------------------------------------

struct SigmaField {
    GridPtr grid;
    std::vector<Index> nodes;   // THIN nodes, ascending
    std::vector<double> values;
    std::vector<Index> flagged;  // THIN nodes without a one-sided stencil

    [[nodiscard]] std::optional<double> at(Index node) const {
        const auto it = std::lower_bound(nodes.begin(), nodes.end(), node);
        if (it == nodes.end() || *it != node) return std::nullopt;
        return values[static_cast<std::size_t>(it - nodes.begin())];
    }

    [[nodiscard]] double min() const {
        double m = std::numeric_limits<double>::infinity();
        for (double s : values) m = std::min(m, s);
        return m;
    }

    [[nodiscard]] double max_abs() const {
        double m = 0.0;
        for (double s : values) m = std::max(m, std::abs(s));
        return m;
    }
};

/// sigma = d+/dx_n u - d-/dx_n u at every THIN node.
inline SigmaField compute_sigma(const ScalarField& u) {
    SigmaField out{u.grid_ptr(), {}, {}, {}};
    for (Index x : u.grid().nodes(NodeClass::thin)) {
        try {
            const double s = one_sided_normal_derivative(u, x, Side::plus) - one_sided_normal_derivative(u, x, Side::minus);
            out.nodes.push_back(x);
            out.values.push_back(s);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::stencil_out_of_domain) throw;
            out.flagged.push_back(x);
        }
    }
    return out;
}

struct Coincidence {
    std::vector<Index> contact;        // Delta*
    std::vector<Index> free_boundary;  // contact nodes with a non-contact THIN neighbor
    std::vector<Index> non_contact;    // Omega*
};

inline Coincidence coincidence_set(const ScalarField& u, const ScalarField& phi, double contact_tol) {
    if (!(contact_tol > 0.0)) throw Error(ErrorKind::invalid_spec, "contact tolerance must be positive");
    const Grid& g = u.grid();
    Coincidence out;
    std::vector<char> in_contact(g.size(), 0);
    for (Index x : g.nodes(NodeClass::thin)) {
        if (u[x] - phi[x] <= contact_tol) {
            in_contact[x] = 1;
            out.contact.push_back(x);
        } else {
            out.non_contact.push_back(x);
        }
    }
    for (Index x : out.contact) {
        bool edge = false;
        for (int axis = 0; axis < g.normal_axis() && !edge; ++axis) {
            for (int s : {-1, 1}) {
                Offset off{0, 0, 0};
                off[axis] = s;
                const auto y = g.shifted(x, off);
                if (y && g.node_class(*y) == NodeClass::thin && !in_contact[*y]) edge = true;
            }
        }
        if (edge) out.free_boundary.push_back(x);
    }
    return out;
}

// ---------------------------------------------------------------------------

struct DerivativeBounds {
    double lipschitz = 0.0;
    double semiconvexity_min = 0.0;
    double semiconcavity_max = 0.0;
};

namespace detail {

/// Axis directions and two-axis diagonals over the first `axes` axes.
inline std::vector<Offset> lattice_directions(int axes) {
    std::vector<Offset> dirs;
    for (int i = 0; i < axes; ++i) {
        Offset e{0, 0, 0};
        e[i] = 1;
        dirs.push_back(e);
        for (int j = i + 1; j < axes; ++j) {
            for (int s : {1, -1}) {
                Offset d{0, 0, 0};
                d[i] = 1;
                d[j] = s;
                dirs.push_back(d);
            }
        }
    }
    return dirs;
}

inline double offset_norm(const Offset& d) { return std::sqrt(double(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])); }

inline Offset negate(Offset d) {
    for (int& c : d) c = -c;
    return d;
}

}  // namespace detail

/// Lipschitz, tangential semiconvexity and normal semiconcavity measured on
/// B_r. Normal second differences are taken at INTERIOR nodes only, so no
/// stencil spans the thin plane.
inline DerivativeBounds derivative_bounds(const ScalarField& u, double region_radius) {
    if (region_radius > 0.75 + 1e-12) throw Error(ErrorKind::invalid_spec, "region radius must be <= 3/4");
    const Grid& g = u.grid();
    const int n = g.dimension();
    const double h = g.spacing();
    auto in_region = [&](Index x) { return g.inside(x) && g.radius(x) <= region_radius + 1e-12; };

    DerivativeBounds b;
    b.semiconvexity_min = std::numeric_limits<double>::infinity();
    b.semiconcavity_max = -std::numeric_limits<double>::infinity();
    const auto all_dirs = detail::lattice_directions(n);
    const auto tangential = detail::lattice_directions(n - 1);
    Offset normal{0, 0, 0};
    normal[n - 1] = 1;

    for (Index x = 0; x < g.size(); ++x) {
        if (!in_region(x)) continue;
        for (const Offset& d : all_dirs) {
            const auto y = g.shifted(x, d);
            if (y && in_region(*y)) b.lipschitz = std::max(b.lipschitz, std::abs(u[*y] - u[x]) / (h * detail::offset_norm(d)));
        }
        double grad2 = 0.0;
        bool full = true;
        for (int i = 0; i < n && full; ++i) {
            Offset e{0, 0, 0};
            e[i] = 1;
            const auto y = g.shifted(x, e);
            if (!y || !in_region(*y)) {
                full = false;
            } else {
                grad2 += std::pow((u[*y] - u[x]) / h, 2);
            }
        }
        if (full) b.lipschitz = std::max(b.lipschitz, std::sqrt(grad2));

        if (!g.free(x)) continue;
        for (const Offset& d : tangential) {
            const double q = (u[g.at(x, d)] - 2.0 * u[x] + u[g.at(x, detail::negate(d))]) /
                             (h * h * detail::offset_norm(d) * detail::offset_norm(d));
            b.semiconvexity_min = std::min(b.semiconvexity_min, q);
        }
        if (g.node_class(x) == NodeClass::interior) {
            const double q = (u[g.at(x, normal)] - 2.0 * u[x] + u[g.at(x, detail::negate(normal))]) / (h * h);
            b.semiconcavity_max = std::max(b.semiconcavity_max, q);
        }
    }
    return b;
}

// ---------------------------------------------------------------------------

struct AffineFit {
    double a = 0.0;   // value at x0
    Vector b;         // gradient
    double radius = 0.0;
    double sup_residual = 0.0;  // E(r)
    std::size_t samples = 0;
};

struct HolderEstimate {
    double exponent = 0.0;  // log-log slope of the fitted quantity; +inf when saturated
    double order = 0.0;     // derivative order subtracted to obtain alpha (1 for u, 0 for sigma)
    double prefactor = 0.0;
    std::vector<double> radii_used;
    double fit_rms = 0.0;

    [[nodiscard]] bool saturated() const { return std::isinf(exponent); }
    [[nodiscard]] double alpha() const { return exponent - order; }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json j;
        j["saturated"] = saturated();
        j["exponent"] = saturated() ? nlohmann::json(nullptr) : nlohmann::json(exponent);
        j["alpha"] = saturated() ? nlohmann::json(nullptr) : nlohmann::json(alpha());
        j["prefactor"] = prefactor;
        j["radii_used"] = radii_used;
        j["fit_rms"] = fit_rms;
        return j;
    }
};

inline constexpr double kSaturationFloor = 1e-10;

/// Dyadic radii 1/4, 1/8, ... down to 4h; 1/2 is prepended when that
/// leaves fewer than three.
inline std::vector<double> default_radii(const Grid& g) {
    std::vector<double> radii;
    for (double r = 0.25; r >= 4.0 * g.spacing() - 1e-12; r *= 0.5) radii.push_back(r);
    if (radii.size() < 3) radii.insert(radii.begin(), 0.5);
    return radii;
}

namespace detail {

/// Least-squares line through (log r, log E): E ~ C r^slope.
inline HolderEstimate log_log_fit(const std::vector<double>& radii, const std::vector<double>& errors, double order) {
    HolderEstimate est;
    est.order = order;
    est.radii_used = radii;
    const bool all_small = std::all_of(errors.begin(), errors.end(), [](double e) { return e < kSaturationFloor; });
    if (all_small) {
        est.exponent = std::numeric_limits<double>::infinity();
        return est;
    }
    const auto m = static_cast<Eigen::Index>(radii.size());
    Matrix X(m, 2);
    Vector y(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = std::log(radii[static_cast<std::size_t>(i)]);
        y[i] = std::log(std::max(errors[static_cast<std::size_t>(i)], 1e-300));
    }
    const Vector coef = X.colPivHouseholderQr().solve(y);
    est.exponent = coef[1];
    est.prefactor = std::exp(coef[0]);
    est.fit_rms = std::sqrt((X * coef - y).squaredNorm() / static_cast<double>(m));
    return est;
}

inline std::vector<double> usable_radii(const Grid& g, const std::vector<double>& radii) {
    std::vector<double> out;
    for (double r : radii) {
        if (r >= 4.0 * g.spacing() - 1e-12) out.push_back(r);
    }
    if (out.size() < 3) throw Error(ErrorKind::insufficient_radii, "need at least 3 radii >= 4h");
    return out;
}

}  // namespace detail

struct FlatnessResult {
    std::vector<AffineFit> fits;
    HolderEstimate estimate;  // E(r) ~ C r^{exponent}, exponent = 1 + alpha
};

/// Affine least-squares fit on B_r(x0) per radius, sup residual E(r), and
/// the log-log slope of E(r), which is 1 + alpha. For x0 on the thin plane
/// only the closed upper half {x_n >= 0} is sampled.
inline FlatnessResult flatness_fit(const ScalarField& u, Index x0, const std::vector<double>& radii) {
    const Grid& g = u.grid();
    const int n = g.dimension();
    const auto use = detail::usable_radii(g, radii);
    const bool one_sided = g.on_plane(x0);
    const Point c = g.position(x0);

    FlatnessResult out;
    std::vector<double> errors;
    for (double r : use) {
        std::vector<Index> pts;
        for (Index x = 0; x < g.size(); ++x) {
            if (!g.inside(x)) continue;
            if (one_sided && g.lattice(x)[n - 1] < 0) continue;
            const Point p = g.position(x);
            double d2 = 0.0;
            for (int k = 0; k < n; ++k) d2 += (p[k] - c[k]) * (p[k] - c[k]);
            if (d2 <= r * r * (1.0 + 1e-12)) pts.push_back(x);
        }
        const auto m = static_cast<Eigen::Index>(pts.size());
        Matrix X(m, n + 1);
        Vector y(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            const Point p = g.position(pts[static_cast<std::size_t>(i)]);
            X(i, 0) = 1.0;
            for (int k = 0; k < n; ++k) X(i, k + 1) = p[k] - c[k];
            y[i] = u[pts[static_cast<std::size_t>(i)]];
        }
        const Vector coef = X.colPivHouseholderQr().solve(y);
        AffineFit fit;
        fit.a = coef[0];
        fit.b = coef.tail(n);
        fit.radius = r;
        fit.sup_residual = (X * coef - y).cwiseAbs().maxCoeff();
        fit.samples = pts.size();
        errors.push_back(fit.sup_residual);
        out.fits.push_back(std::move(fit));
    }
    out.estimate = detail::log_log_fit(use, errors, 1.0);
    return out;
}

/// max_{|x'-x0'| <= r} |sigma| ~ C r^alpha.
inline HolderEstimate sigma_holder(const SigmaField& sigma, Index x0, const std::vector<double>& radii) {
    const Grid& g = *sigma.grid;
    const auto use = detail::usable_radii(g, radii);
    const Point c = g.position(x0);
    std::vector<double> peaks;
    for (double r : use) {
        double peak = 0.0;
        for (std::size_t k = 0; k < sigma.nodes.size(); ++k) {
            const Point p = g.position(sigma.nodes[k]);
            double d2 = 0.0;
            for (int a = 0; a < g.normal_axis(); ++a) d2 += (p[a] - c[a]) * (p[a] - c[a]);
            if (d2 <= r * r * (1.0 + 1e-12)) peak = std::max(peak, std::abs(sigma.values[k]));
        }
        peaks.push_back(peak);
    }
    return detail::log_log_fit(use, peaks, 0.0);
}

// ---------------------------------------------------------------------------

/// Largest |phi_tautau| over THIN nodes, tangential axes and diagonals.
inline double obstacle_tangential_curvature(const ScalarField& phi) {
    const Grid& g = phi.grid();
    const double h = g.spacing();
    double m = 0.0;
    for (Index x : g.nodes(NodeClass::thin)) {
        for (const Offset& d : detail::lattice_directions(g.dimension() - 1)) {
            const double q = (phi[g.at(x, d)] - 2.0 * phi[x] + phi[g.at(x, detail::negate(d))]) /
                             (h * h * detail::offset_norm(d) * detail::offset_norm(d));
            m = std::max(m, std::abs(q));
        }
    }
    return m;
}

inline Vector obstacle_gradient(const ScalarField& phi, Index x) {
    const Grid& g = phi.grid();
    Vector grad = Vector::Zero(g.dimension() - 1);
    for (int a = 0; a < g.normal_axis(); ++a) {
        Offset e{0, 0, 0};
        e[a] = 1;
        grad[a] = (phi[g.at(x, e)] - phi[g.at(x, detail::negate(e))]) / (2.0 * g.spacing());
    }
    return grad;
}

struct Cylinder {
    double r_lateral = 0.2;
    double r_vertical = 0.1;
};

struct BarrierResult {
    double value = 0.0;          // sup over the upper lateral-and-top boundary of v - psi
    double tol_barrier = 0.0;    // 10 h (1 + kappa)
    double kappa = 0.0;
    std::size_t boundary_nodes = 0;
};

inline double default_kappa(const ScalarField& phi) { return 2.0 * obstacle_tangential_curvature(phi) + 1.0; }

/// Evaluates sup_{dU ∩ {x_n > 0}} (v - psi_x0) with
/// psi_x0 = phi(x0) + grad phi(x0).(x - x0) + kappa |x - x0|^2 - kappa (n-1) (Lambda/lambda) x_n^2
/// on the lattice cylinder U = {|x' - x0'| <= r_lat, |x_n| <= r_vert}.
inline BarrierResult barrier_check(const ScalarField& v, const ScalarField& phi, Index x0, double kappa,
                                   const Cylinder& cyl, const Ellipticity& ell) {
    const Grid& g = v.grid();
    const int n = g.dimension();
    if (!(kappa > obstacle_tangential_curvature(phi))) {
        throw Error(ErrorKind::invalid_spec, "kappa must exceed sup |phi_tautau|");
    }
    if (g.node_class(x0) != NodeClass::thin) throw Error(ErrorKind::invalid_spec, "barrier center must be a THIN node");
    const Point c = g.position(x0);
    const Vector grad = obstacle_gradient(phi, x0);
    const double ratio = ell.Lambda / ell.lambda;

    auto in_cyl = [&](Index x) {
        const Point p = g.position(x);
        double lat2 = 0.0;
        for (int a = 0; a < n - 1; ++a) lat2 += (p[a] - c[a]) * (p[a] - c[a]);
        return lat2 <= cyl.r_lateral * cyl.r_lateral * (1.0 + 1e-12) && std::abs(p[n - 1]) <= cyl.r_vertical + 1e-12;
    };
    auto psi = [&](Index x) {
        const Point p = g.position(x);
        double val = phi[x0];
        double d2 = 0.0;
        for (int a = 0; a < n; ++a) d2 += (p[a] - c[a]) * (p[a] - c[a]);
        for (int a = 0; a < n - 1; ++a) val += grad[a] * (p[a] - c[a]);
        return val + kappa * d2 - kappa * (n - 1) * ratio * p[n - 1] * p[n - 1];
    };

    BarrierResult res;
    res.kappa = kappa;
    res.tol_barrier = 10.0 * g.spacing() * (1.0 + kappa);
    res.value = -std::numeric_limits<double>::infinity();
    for (Index x = 0; x < g.size(); ++x) {
        if (!in_cyl(x)) continue;
        if (!g.inside(x)) throw Error(ErrorKind::invalid_cylinder, "cylinder leaves the ball");
        bool edge = false;
        for (int a = 0; a < n && !edge; ++a) {
            for (int s : {-1, 1}) {
                Offset off{0, 0, 0};
                off[a] = s;
                const auto y = g.shifted(x, off);
                if (!y || !in_cyl(*y)) edge = true;
            }
        }
        if (!edge || g.lattice(x)[n - 1] <= 0) continue;
        ++res.boundary_nodes;
        res.value = std::max(res.value, v[x] - psi(x));
    }
    if (res.boundary_nodes == 0) throw Error(ErrorKind::invalid_cylinder, "cylinder has no upper boundary nodes");
    return res;
}

// ---------------------------------------------------------------------------

struct DirichletGap {
    double gap = 0.0;
    double sigma_norm = 0.0;
};

/// Distance from w to the Dirichlet solution with w's boundary trace.
inline DirichletGap dirichlet_gap(const ScalarField& w, const BellmanFamily& family, const SolveControl& ctl = {}) {
    const ScalarField psi = solve_dirichlet(family, w, ctl);
    DirichletGap out;
    const Grid& g = w.grid();
    for (Index x = 0; x < g.size(); ++x) {
        if (g.inside(x)) out.gap = std::max(out.gap, std::abs(psi[x] - w[x]));
    }
    out.sigma_norm = compute_sigma(w).max_abs();
    return out;
}

/// u_z = u - sigma_value * (x_n)^+
inline ScalarField subtract_jump(const ScalarField& u, double sigma_value) {
    const Grid& g = u.grid();
    ScalarField out = u;
    for (Index x = 0; x < g.size(); ++x) {
        if (!g.inside(x)) continue;
        out[x] -= sigma_value * std::max(g.coordinate(x, g.normal_axis()), 0.0);
    }
    return out;
}

// ---------------------------------------------------------------------------

struct RegularityReport {
    double K0 = 0.0;
    double lipschitz = 0.0;
    double semiconvexity_min = 0.0;
    double semiconcavity_max = 0.0;
    double sigma_min = 0.0;
    HolderEstimate alpha_u;
    HolderEstimate alpha_sigma;

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"K0", K0},
                {"lipschitz", lipschitz},
                {"semiconvexity_min", semiconvexity_min},
                {"semiconcavity_max", semiconcavity_max},
                {"sigma_min", sigma_min},
                {"alpha_u", alpha_u.to_json()},
                {"alpha_sigma", alpha_sigma.to_json()}};
    }
};

/// ||phi||_{C^{1,1}} proxy: max of |phi|, |grad phi| and |phi_tautau| on THIN nodes.
inline double obstacle_c11_proxy(const ScalarField& phi) {
    double m = obstacle_tangential_curvature(phi);
    for (Index x : phi.grid().nodes(NodeClass::thin)) {
        m = std::max({m, std::abs(phi[x]), obstacle_gradient(phi, x).norm()});
    }
    return m;
}

inline double scaling_constant_K0(const ScalarField& u, const ScalarField& phi) {
    return u.max_abs({NodeClass::interior, NodeClass::thin, NodeClass::boundary}) + obstacle_c11_proxy(phi);
}

}  // namespace thinobs
