#pragma once

// Monotone finite-difference discretization of a Bellman family.
//
// Each member tr(M D^2u) uses the 3^n-box stencil whose mixed terms are
// oriented by sign(M_ij): for M_ij > 0 the (+,+)/(-,-) diagonal, for
// M_ij < 0 the (+,-)/(-,+) diagonal. Diagonal dominance of M makes every
// off-center weight nonnegative, so -A_g is an M-matrix row. The stencil is
// exact on quadratics, like discrete_hessian.

#include <cmath>
#include <span>
#include <vector>

#include "thinobs/grid.hpp"
#include "thinobs/operators.hpp"

namespace thinobs {

struct StencilTap {
    Offset offset;
    long delta;  // linear index shift
    double weight;
};

struct MemberStencil {
    double center = 0.0;
    std::vector<StencilTap> taps;
    double constant = 0.0;
};

inline MemberStencil build_member_stencil(const LinearOperator& op, const Grid& grid) {
    const int n = grid.dimension();
    const double h2 = grid.spacing() * grid.spacing();
    const Matrix& M = op.matrix;
    MemberStencil st;
    st.constant = op.constant;

    std::vector<std::pair<Offset, double>> raw;
    auto add = [&](Offset off, double w) {
        for (auto& [o, v] : raw) {
            if (o == off) {
                v += w;
                return;
            }
        }
        raw.emplace_back(off, w);
    };

    for (int i = 0; i < n; ++i) {
        Offset p{0, 0, 0}, m{0, 0, 0};
        p[i] = 1;
        m[i] = -1;
        add(p, M(i, i) / h2);
        add(m, M(i, i) / h2);
        st.center -= 2.0 * M(i, i) / h2;
        for (int j = i + 1; j < n; ++j) {
            const double mij = M(i, j);
            if (mij == 0.0) continue;
            const double a = std::abs(mij) / h2;
            const int s = mij > 0.0 ? 1 : -1;
            Offset d1{0, 0, 0}, d2{0, 0, 0}, pj{0, 0, 0}, mj{0, 0, 0};
            d1[i] = 1, d1[j] = s;
            d2[i] = -1, d2[j] = -s;
            pj[j] = 1;
            mj[j] = -1;
            add(d1, a);
            add(d2, a);
            add(p, -a);
            add(m, -a);
            add(pj, -a);
            add(mj, -a);
            st.center += 2.0 * a;
        }
    }
    for (const auto& [off, w] : raw) {
        if (w == 0.0) continue;
        long delta = 0;
        long stride = 1;
        for (int d = n - 1; d >= 0; --d) {
            delta += off[d] * stride;
            stride *= grid.resolution();
        }
        st.taps.push_back({off, delta, w});
    }
    return st;
}

/// F_h(u)(x) = max_g (A_g u)(x) + c_g at free nodes.
class DiscreteBellman {
public:
    DiscreteBellman(const BellmanFamily& family, const Grid& grid) {
        if (family.dimension() != grid.dimension()) {
            throw Error(ErrorKind::invalid_family, "family dimension does not match the grid");
        }
        stencils_.reserve(family.size());
        for (const auto& m : family.members()) stencils_.push_back(build_member_stencil(m, grid));
    }

    [[nodiscard]] std::size_t size() const noexcept { return stencils_.size(); }
    [[nodiscard]] const MemberStencil& stencil(std::size_t k) const { return stencils_[k]; }

    [[nodiscard]] double member_value(std::span<const double> u, Index node, std::size_t k) const {
        const MemberStencil& st = stencils_[k];
        double acc = st.center * u[node] + st.constant;
        for (const auto& t : st.taps) acc += t.weight * u[static_cast<Index>(static_cast<long>(node) + t.delta)];
        return acc;
    }

    /// Value and lowest-index argmax.
    [[nodiscard]] std::pair<double, std::size_t> evaluate(std::span<const double> u, Index node) const {
        double best = member_value(u, node, 0);
        std::size_t arg = 0;
        for (std::size_t k = 1; k < stencils_.size(); ++k) {
            const double v = member_value(u, node, k);
            if (v > best) {
                best = v;
                arg = k;
            }
        }
        return {best, arg};
    }

    [[nodiscard]] double apply(std::span<const double> u, Index node) const { return evaluate(u, node).first; }

    /// Value of u(node) that zeroes member k given the neighbors.
    [[nodiscard]] double member_root(std::span<const double> u, Index node, std::size_t k) const {
        const MemberStencil& st = stencils_[k];
        double acc = st.constant;
        for (const auto& t : st.taps) acc += t.weight * u[static_cast<Index>(static_cast<long>(node) + t.delta)];
        return acc / (-st.center);
    }

private:
    std::vector<MemberStencil> stencils_;
};

}  // namespace thinobs
