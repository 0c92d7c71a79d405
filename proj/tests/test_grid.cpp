#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "thinobs/grid.hpp"

using namespace thinobs;

namespace {

ErrorKind kind_of(auto&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no thinobs::Error thrown";
    return ErrorKind::io_error;
}

std::vector<Index> interior_nodes(const Grid& g) { return g.nodes(NodeClass::interior); }

}  // namespace

TEST(Grid, NineNodeDiscHasFiveThinNodes) {
    const GridPtr g = build_grid({2, 9});
    const auto& thin = g->nodes(NodeClass::thin);
    ASSERT_EQ(thin.size(), 5u);
    for (Index x : thin) {
        EXPECT_DOUBLE_EQ(g->coordinate(x, 1), 0.0);
        EXPECT_LE(std::abs(g->coordinate(x, 0)), 0.5 + 1e-12);
    }
}

TEST(Grid, RejectsEvenAndTinyResolutions) {
    EXPECT_EQ(kind_of([] { (void)build_grid({2, 8}); }), ErrorKind::invalid_spec);
    EXPECT_EQ(kind_of([] { (void)build_grid({2, 7}); }), ErrorKind::invalid_spec);
    EXPECT_EQ(kind_of([] { (void)build_grid({4, 9}); }), ErrorKind::invalid_spec);
}

TEST(Grid, ThinCountIn3DMatchesEnumeration) {
    const GridPtr g = build_grid({3, 33});
    const int c = 16;
    std::size_t expected = 0;
    for (int p1 = -c; p1 <= c; ++p1) {
        for (int p2 = -c; p2 <= c; ++p2) {
            if (p1 * p1 + p2 * p2 <= (c - 2) * (c - 2)) ++expected;
        }
    }
    EXPECT_EQ(g->nodes(NodeClass::thin).size(), expected);
    for (Index x : g->nodes(NodeClass::thin)) EXPECT_TRUE(g->on_plane(x));
}

TEST(Grid, ClassificationCoversBallOnly) {
    for (int n : {2, 3}) {
        const GridPtr g = build_grid({n, 17});
        for (Index x = 0; x < g->size(); ++x) {
            EXPECT_EQ(g->inside(x), g->radius(x) < 1.0 - 1e-12) << x;
            if (g->node_class(x) == NodeClass::interior) {
                EXPECT_FALSE(g->on_plane(x));
                EXPECT_LT(g->radius(x), 1.0 - g->spacing() + 1e-12);
            }
        }
    }
}

TEST(Grid, RefinementMapsThinToThin) {
    for (int n : {2, 3}) {
        const int N = n == 2 ? 33 : 17;
        const GridPtr coarse = build_grid({n, N});
        const GridPtr fine = build_grid({n, 2 * N - 1});
        for (Index x : coarse->nodes(NodeClass::thin)) {
            Offset ijk = coarse->coords(x);
            for (int d = 0; d < n; ++d) ijk[d] *= 2;
            EXPECT_EQ(fine->node_class(fine->index(ijk)), NodeClass::thin);
        }
    }
}

TEST(Grid, IndexRoundTripAndMirror) {
    const GridPtr g = build_grid({3, 9});
    for (Index x = 0; x < g->size(); ++x) {
        EXPECT_EQ(g->index(g->coords(x)), x);
        if (!g->inside(x)) continue;
        const Index m = g->mirror(x);
        EXPECT_DOUBLE_EQ(g->coordinate(m, 2), -g->coordinate(x, 2));
        EXPECT_EQ(g->mirror(m), x);
        EXPECT_TRUE(g->on_plane(g->plane_node(x)));
    }
    EXPECT_EQ(g->radius(g->origin()), 0.0);
}

TEST(DiscreteHessian, ExactOnSquare) {
    const GridPtr g = build_grid({2, 17});
    const auto f = ScalarField::sample(g, [](const Point& x) { return x[0] * x[0]; });
    for (Index x : interior_nodes(*g)) {
        const Matrix H = discrete_hessian(f, x);
        EXPECT_NEAR(H(0, 0), 2.0, 1e-12);
        EXPECT_NEAR(H(1, 1), 0.0, 1e-12);
        EXPECT_NEAR(H(0, 1), 0.0, 1e-12);
    }
}

TEST(DiscreteHessian, BilinearCrossTerm) {
    const GridPtr g = build_grid({2, 17});
    const auto f = ScalarField::sample(g, [](const Point& x) { return x[0] * x[1]; });
    for (Index x : interior_nodes(*g)) {
        const Matrix H = discrete_hessian(f, x);
        EXPECT_NEAR(H(0, 1), 1.0, 1e-12);
        EXPECT_NEAR(H(1, 0), 1.0, 1e-12);
    }
}

TEST(DiscreteHessian, SmoothFunctionNearOrigin) {
    const GridPtr g = build_grid({2, 65});
    const double h = g->spacing();
    const auto f = ScalarField::sample(g, [](const Point& x) { return std::sin(x[0]) * std::sin(x[1]); });
    const Index node = g->index({33, 33, 0});
    const Point p = g->position(node);
    const Matrix H = discrete_hessian(f, node);
    EXPECT_NEAR(H(0, 0), -std::sin(p[0]) * std::sin(p[1]), 5 * h * h);
    EXPECT_NEAR(H(1, 1), -std::sin(p[0]) * std::sin(p[1]), 5 * h * h);
    EXPECT_NEAR(H(0, 1), std::cos(p[0]) * std::cos(p[1]), 5 * h * h);
}

TEST(DiscreteHessian, ExactOnQuadraticsAndLinear3D) {
    const GridPtr g = build_grid({3, 17});
    const Matrix Q = (Matrix(3, 3) << 1.0, 0.3, -0.2, 0.3, -2.0, 0.5, -0.2, 0.5, 0.7).finished();
    auto quad = [&](const Point& x) {
        Vector v(3);
        v << x[0], x[1], x[2];
        return 0.5 * v.dot(Q * v) + 0.4 * x[0] - 1.0;
    };
    const auto f = ScalarField::sample(g, quad);
    const auto f2 = ScalarField::sample(g, [&](const Point& x) { return 3.0 * quad(x); });
    for (Index x : interior_nodes(*g)) {
        const Matrix H = discrete_hessian(f, x);
        EXPECT_LT((H - Q).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((discrete_hessian(f2, x) - 3.0 * H).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(DiscreteHessian, ThinNodeUsesBothSides) {
    const GridPtr g = build_grid({2, 17});
    const auto f = ScalarField::sample(g, [](const Point& x) { return x[1] * x[1]; });
    for (Index x : g->nodes(NodeClass::thin)) EXPECT_NEAR(discrete_hessian(f, x)(1, 1), 2.0, 1e-12);
}

TEST(DiscreteHessian, StencilOutOfDomain) {
    const GridPtr g = build_grid({2, 17});
    const ScalarField f(g, 1.0);
    Index edge = 0;
    for (Index x : g->nodes(NodeClass::boundary)) {
        if (!g->shifted(x, {1, 0, 0}) || !g->inside(*g->shifted(x, {1, 0, 0})) || !g->inside(g->at(x, {-1, 0, 0}))) {
            edge = x;
            break;
        }
    }
    EXPECT_EQ(kind_of([&] { (void)discrete_hessian(f, edge); }), ErrorKind::stencil_out_of_domain);
}

TEST(OneSidedDerivative, LinearAndKinkAndQuadratic) {
    const GridPtr g = build_grid({2, 33});
    const auto lin = ScalarField::sample(g, [](const Point& x) { return x[1]; });
    const auto kink = ScalarField::sample(g, [](const Point& x) { return std::abs(x[1]); });
    const auto sq = ScalarField::sample(g, [](const Point& x) { return x[1] * x[1]; });
    const auto mixed = ScalarField::sample(g, [](const Point& x) { return x[0] + 2.0 * x[1] - 3.0 * x[1] * x[1]; });
    for (Index x : g->nodes(NodeClass::thin)) {
        EXPECT_NEAR(one_sided_normal_derivative(lin, x, Side::plus), 1.0, 1e-12);
        EXPECT_NEAR(one_sided_normal_derivative(kink, x, Side::minus), -1.0, 1e-12);
        EXPECT_NEAR(one_sided_normal_derivative(sq, x, Side::plus), 0.0, 1e-12);
        EXPECT_NEAR(one_sided_normal_derivative(mixed, x, Side::minus), 2.0, 1e-11);
    }
}

TEST(OneSidedDerivative, UnavailableStencil) {
    const GridPtr g = build_grid({2, 9});
    const ScalarField f(g, 0.0);
    const Index rim = g->index({0, 4, 0});
    EXPECT_EQ(kind_of([&] { (void)one_sided_normal_derivative(f, rim, Side::plus); }),
              ErrorKind::stencil_out_of_domain);
}

TEST(FieldCsv, RoundTripIsBitExact) {
    for (int n : {2, 3}) {
        const GridPtr g = build_grid({n, 17});
        const auto f = ScalarField::sample(g, [](const Point& x) { return std::exp(x[0]) / 3.0 - std::sin(7 * x[1]) + x[2]; });
        std::stringstream ss;
        write_field_csv(ss, f);
        const ScalarField back = read_field_csv(ss, g);
        for (Index x = 0; x < g->size(); ++x) {
            if (g->inside(x)) EXPECT_EQ(back[x], f[x]);
        }
    }
}

TEST(FieldCsv, RejectsMismatchedGrid) {
    std::stringstream ss;
    write_field_csv(ss, ScalarField(build_grid({2, 9}), 1.0));
    EXPECT_EQ(kind_of([&] { (void)read_field_csv(ss, build_grid({2, 11})); }), ErrorKind::io_error);
}
