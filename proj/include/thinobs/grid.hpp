#pragma once

// Cartesian discretization of the unit ball with a distinguished thin plane
// {x_n = 0}, node classification, sampled fields and difference stencils.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "thinobs/error.hpp"

namespace thinobs {

using Index = std::size_t;
using Point = std::array<double, 3>;       // unused trailing components are 0
using Offset = std::array<int, 3>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct GridSpec {
    int dimension = 2;
    int resolution = 9;  // nodes per axis, odd

    [[nodiscard]] double spacing() const { return 2.0 / (resolution - 1); }

    void validate() const {
        if (dimension != 2 && dimension != 3) {
            throw Error(ErrorKind::invalid_spec, "dimension must be 2 or 3, got " + std::to_string(dimension));
        }
        if (resolution < 9 || resolution % 2 == 0) {
            throw Error(ErrorKind::invalid_spec,
                        "resolution must be odd and >= 9, got " + std::to_string(resolution));
        }
    }

    friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

enum class NodeClass : std::uint8_t { interior, thin, boundary, exterior };

constexpr const char* to_string(NodeClass c) noexcept {
    switch (c) {
        case NodeClass::interior: return "interior";
        case NodeClass::thin: return "thin";
        case NodeClass::boundary: return "boundary";
        case NodeClass::exterior: return "exterior";
    }
    return "?";
}

inline NodeClass node_class_from_string(std::string_view s) {
    if (s == "interior") return NodeClass::interior;
    if (s == "thin") return NodeClass::thin;
    if (s == "boundary") return NodeClass::boundary;
    if (s == "exterior") return NodeClass::exterior;
    throw Error(ErrorKind::io_error, "unknown node class '" + std::string(s) + "'");
}

enum class Side { plus, minus };

/// Classified lattice on B_1. Nodes are stored row-major: the first axis is
/// the slowest, the thin-plane normal x_n is the last (fastest) axis.
///
/// All geometric predicates are evaluated in integer lattice units
/// (p = i - (N-1)/2, so x = p*h and h*(N-1)/2 = 1), which keeps the
/// classification exact for every resolution.
class Grid {
public:
    explicit Grid(GridSpec spec) : spec_(spec) {
        spec_.validate();
        const int n = spec_.dimension;
        const int N = spec_.resolution;
        half_ = (N - 1) / 2;
        size_ = 1;
        for (int d = 0; d < n; ++d) size_ *= static_cast<Index>(N);
        classes_.assign(size_, NodeClass::exterior);

        const long c2 = static_cast<long>(half_) * half_;
        const long inner = static_cast<long>(half_ - 1) * (half_ - 1);
        const long thin_r = static_cast<long>(half_ - 2) * (half_ - 2);

        for (Index idx = 0; idx < size_; ++idx) {
            const Offset p = lattice(idx);
            const long r2 = norm2(p);
            if (r2 >= c2) continue;
            if (p[n - 1] == 0 && r2 <= thin_r) {
                classes_[idx] = NodeClass::thin;
            } else if (p[n - 1] == 0 || r2 >= inner || !stencil_inside(p)) {
                // plane nodes outside the thin disc are rim nodes
                classes_[idx] = NodeClass::boundary;
            } else {
                classes_[idx] = NodeClass::interior;
            }
        }
        for (Index idx = 0; idx < size_; ++idx) {
            by_class_[static_cast<int>(classes_[idx])].push_back(idx);
        }
    }

    [[nodiscard]] const GridSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] int dimension() const noexcept { return spec_.dimension; }
    [[nodiscard]] int resolution() const noexcept { return spec_.resolution; }
    [[nodiscard]] int normal_axis() const noexcept { return spec_.dimension - 1; }
    [[nodiscard]] double spacing() const noexcept { return 1.0 / half_; }
    [[nodiscard]] Index size() const noexcept { return size_; }

    [[nodiscard]] NodeClass node_class(Index idx) const { return classes_[idx]; }
    [[nodiscard]] bool inside(Index idx) const { return classes_[idx] != NodeClass::exterior; }
    [[nodiscard]] bool free(Index idx) const {
        return classes_[idx] == NodeClass::interior || classes_[idx] == NodeClass::thin;
    }
    [[nodiscard]] const std::vector<Index>& nodes(NodeClass c) const { return by_class_[static_cast<int>(c)]; }

    /// Axis indices (0..N-1).
    [[nodiscard]] Offset coords(Index idx) const {
        Offset ijk{0, 0, 0};
        const Index N = static_cast<Index>(spec_.resolution);
        for (int d = spec_.dimension - 1; d >= 0; --d) {
            ijk[d] = static_cast<int>(idx % N);
            idx /= N;
        }
        return ijk;
    }

    [[nodiscard]] Index index(const Offset& ijk) const {
        Index idx = 0;
        for (int d = 0; d < spec_.dimension; ++d) idx = idx * spec_.resolution + static_cast<Index>(ijk[d]);
        return idx;
    }

    /// Centered lattice coordinates p, with x = p*h.
    [[nodiscard]] Offset lattice(Index idx) const {
        Offset p = coords(idx);
        for (int d = 0; d < spec_.dimension; ++d) p[d] -= half_;
        return p;
    }

    [[nodiscard]] double coordinate(Index idx, int axis) const {
        return static_cast<double>(lattice(idx)[axis]) / half_;
    }

    [[nodiscard]] Point position(Index idx) const {
        const Offset p = lattice(idx);
        Point x{0.0, 0.0, 0.0};
        for (int d = 0; d < spec_.dimension; ++d) x[d] = static_cast<double>(p[d]) / half_;
        return x;
    }

    [[nodiscard]] double radius(Index idx) const { return std::sqrt(static_cast<double>(norm2(lattice(idx)))) / half_; }

    [[nodiscard]] bool on_plane(Index idx) const { return lattice(idx)[normal_axis()] == 0; }

    /// Node at idx shifted by `off` lattice steps, if it lies in the bounding box.
    [[nodiscard]] std::optional<Index> shifted(Index idx, const Offset& off) const {
        Offset ijk = coords(idx);
        for (int d = 0; d < spec_.dimension; ++d) {
            ijk[d] += off[d];
            if (ijk[d] < 0 || ijk[d] >= spec_.resolution) return std::nullopt;
        }
        return index(ijk);
    }

    /// Shifted node that is known to exist (stencils of free nodes).
    [[nodiscard]] Index at(Index idx, const Offset& off) const {
        Index out = idx;
        Index stride = 1;
        for (int d = spec_.dimension - 1; d >= 0; --d) {
            out = static_cast<Index>(static_cast<long>(out) + static_cast<long>(off[d]) * static_cast<long>(stride));
            stride *= static_cast<Index>(spec_.resolution);
        }
        return out;
    }

    /// Reflection x_n -> -x_n.
    [[nodiscard]] Index mirror(Index idx) const {
        Offset ijk = coords(idx);
        ijk[normal_axis()] = spec_.resolution - 1 - ijk[normal_axis()];
        return index(ijk);
    }

    /// The node on the thin plane in the same x' column.
    [[nodiscard]] Index plane_node(Index idx) const {
        Offset ijk = coords(idx);
        ijk[normal_axis()] = half_;
        return index(ijk);
    }

    [[nodiscard]] Index origin() const {
        Offset ijk{half_, half_, half_};
        return index(ijk);
    }

    /// Node nearest to x (rounded to the lattice); nullopt outside the box.
    [[nodiscard]] std::optional<Index> nearest(const Point& x) const {
        Offset ijk{0, 0, 0};
        for (int d = 0; d < spec_.dimension; ++d) {
            const long i = std::lround(x[d] * half_) + half_;
            if (i < 0 || i >= spec_.resolution) return std::nullopt;
            ijk[d] = static_cast<int>(i);
        }
        return index(ijk);
    }

private:
    [[nodiscard]] long norm2(const Offset& p) const {
        long s = 0;
        for (int d = 0; d < spec_.dimension; ++d) s += static_cast<long>(p[d]) * p[d];
        return s;
    }

    // Full second-difference stencil: axis and two-axis diagonal neighbors.
    [[nodiscard]] bool stencil_inside(const Offset& p) const {
        const long c2 = static_cast<long>(half_) * half_;
        const int n = spec_.dimension;
        for (int i = 0; i < n; ++i) {
            for (int si : {-1, 1}) {
                Offset q = p;
                q[i] += si;
                if (norm2(q) >= c2) return false;
                for (int j = i + 1; j < n; ++j) {
                    for (int sj : {-1, 1}) {
                        Offset r = q;
                        r[j] += sj;
                        if (norm2(r) >= c2) return false;
                    }
                }
            }
        }
        return true;
    }

    GridSpec spec_;
    int half_ = 0;
    Index size_ = 0;
    std::vector<NodeClass> classes_;
    std::array<std::vector<Index>, 4> by_class_;
};

using GridPtr = std::shared_ptr<const Grid>;

inline GridPtr build_grid(const GridSpec& spec) { return std::make_shared<const Grid>(spec); }

/// Grid-sampled function. Values at EXTERIOR nodes are carried but ignored.
class ScalarField {
public:
    ScalarField() = default;
    explicit ScalarField(GridPtr grid, double fill = 0.0) : grid_(std::move(grid)), values_(grid_->size(), fill) {}
    ScalarField(GridPtr grid, std::vector<double> values) : grid_(std::move(grid)), values_(std::move(values)) {
        if (values_.size() != grid_->size()) throw Error(ErrorKind::invalid_spec, "field size does not match grid");
    }

    /// Samples f at every non-exterior node; exterior nodes get 0.
    template <class F>
    static ScalarField sample(GridPtr grid, F&& f) {
        ScalarField out(grid, 0.0);
        for (Index i = 0; i < grid->size(); ++i) {
            if (grid->inside(i)) out.values_[i] = f(grid->position(i));
        }
        return out;
    }

    [[nodiscard]] const Grid& grid() const { return *grid_; }
    [[nodiscard]] const GridPtr& grid_ptr() const { return grid_; }
    [[nodiscard]] Index size() const { return values_.size(); }

    double operator[](Index i) const { return values_[i]; }
    double& operator[](Index i) { return values_[i]; }

    [[nodiscard]] std::span<const double> values() const { return values_; }
    [[nodiscard]] std::span<double> values() { return values_; }

    /// Largest |value| over nodes of the given classes.
    [[nodiscard]] double max_abs(std::initializer_list<NodeClass> classes) const {
        double m = 0.0;
        for (NodeClass c : classes) {
            for (Index i : grid_->nodes(c)) m = std::max(m, std::abs(values_[i]));
        }
        return m;
    }

private:
    GridPtr grid_;
    std::vector<double> values_;
};

/// Second-difference Hessian: 3-point centered diagonal, 4-point cross
/// off-diagonal. Exact on polynomials of degree <= 2.
inline Matrix discrete_hessian(const ScalarField& f, Index node) {
    const Grid& g = f.grid();
    const int n = g.dimension();
    const double h = g.spacing();
    auto value = [&](const Offset& off) {
        const auto j = g.shifted(node, off);
        if (!j || !g.inside(*j)) {
            throw Error(ErrorKind::stencil_out_of_domain, "hessian stencil leaves the ball at node " + std::to_string(node));
        }
        return f[*j];
    };
    if (!g.inside(node)) throw Error(ErrorKind::stencil_out_of_domain, "hessian requested at exterior node");
    const double center = f[node];
    Matrix H = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        Offset p{0, 0, 0}, m{0, 0, 0};
        p[i] = 1;
        m[i] = -1;
        H(i, i) = (value(p) - 2.0 * center + value(m)) / (h * h);
        for (int j = i + 1; j < n; ++j) {
            Offset pp{0, 0, 0}, mm{0, 0, 0}, pm{0, 0, 0}, mp{0, 0, 0};
            pp[i] = 1, pp[j] = 1;
            mm[i] = -1, mm[j] = -1;
            pm[i] = 1, pm[j] = -1;
            mp[i] = -1, mp[j] = 1;
            H(i, j) = (value(pp) + value(mm) - value(pm) - value(mp)) / (4.0 * h * h);
            H(j, i) = H(i, j);
        }
    }
    return H;
}

/// Second-order one-sided difference in x_n: (-3f(0) + 4f(±h) - f(±2h)) / (±2h).
inline double one_sided_normal_derivative(const ScalarField& f, Index node, Side side) {
    const Grid& g = f.grid();
    const int s = side == Side::plus ? 1 : -1;
    Offset o1{0, 0, 0}, o2{0, 0, 0};
    o1[g.normal_axis()] = s;
    o2[g.normal_axis()] = 2 * s;
    const auto j1 = g.shifted(node, o1);
    const auto j2 = g.shifted(node, o2);
    if (!g.inside(node) || !j1 || !j2 || !g.inside(*j1) || !g.inside(*j2)) {
        throw Error(ErrorKind::stencil_out_of_domain, "one-sided stencil unavailable at node " + std::to_string(node));
    }
    return (-3.0 * f[node] + 4.0 * f[*j1] - f[*j2]) / (2.0 * s * g.spacing());
}

// ---------------------------------------------------------------------------
// CSV field dumps: header `i,j[,k],x1,x2[,x3],class,value`, row-major order,
// non-exterior nodes only, 17 significant digits.

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_field_csv(std::ostream& os, const ScalarField& f) {
    const Grid& g = f.grid();
    const int n = g.dimension();
    static constexpr const char* axes[] = {"i", "j", "k"};
    for (int d = 0; d < n; ++d) os << axes[d] << ',';
    for (int d = 0; d < n; ++d) os << 'x' << d + 1 << ',';
    os << "class,value\n";
    for (Index idx = 0; idx < g.size(); ++idx) {
        if (!g.inside(idx)) continue;
        const Offset ijk = g.coords(idx);
        const Point x = g.position(idx);
        for (int d = 0; d < n; ++d) os << ijk[d] << ',';
        for (int d = 0; d < n; ++d) os << format_double(x[d]) << ',';
        os << to_string(g.node_class(idx)) << ',' << format_double(f[idx]) << '\n';
    }
}

inline ScalarField read_field_csv(std::istream& is, GridPtr grid) {
    const int n = grid->dimension();
    std::string line;
    if (!std::getline(is, line)) throw Error(ErrorKind::io_error, "empty field file");
    ScalarField out(grid, 0.0);
    std::vector<bool> seen(grid->size(), false);
    long row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cols.push_back(cell);
        if (cols.size() != static_cast<std::size_t>(2 * n + 2)) {
            throw Error(ErrorKind::io_error, "field row " + std::to_string(row) + " has wrong column count");
        }
        Offset ijk{0, 0, 0};
        for (int d = 0; d < n; ++d) {
            ijk[d] = std::stoi(cols[d]);
            if (ijk[d] < 0 || ijk[d] >= grid->resolution()) {
                throw Error(ErrorKind::io_error, "field row " + std::to_string(row) + " index out of range");
            }
        }
        const Index idx = grid->index(ijk);
        if (node_class_from_string(cols[2 * n]) != grid->node_class(idx)) {
            throw Error(ErrorKind::io_error, "field row " + std::to_string(row) + " class mismatch");
        }
        out[idx] = std::strtod(cols[2 * n + 1].c_str(), nullptr);
        seen[idx] = true;
    }
    for (Index idx = 0; idx < grid->size(); ++idx) {
        if (grid->inside(idx) && !seen[idx]) {
            throw Error(ErrorKind::io_error, "field file is missing node " + std::to_string(idx));
        }
    }
    return out;
}

}  // namespace thinobs
