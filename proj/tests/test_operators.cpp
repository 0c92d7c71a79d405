#include <random>

#include <gtest/gtest.h>

#include "support.hpp"
#include "thinobs/operators.hpp"

using namespace thinobs;
using thinobs::testing::error_kind;
using thinobs::testing::random_family;
using thinobs::testing::minimize_trace;
using thinobs::testing::random_symmetric;

namespace {

Matrix diag(std::initializer_list<double> d) {
    Vector v(static_cast<Eigen::Index>(d.size()));
    Eigen::Index i = 0;
    for (double x : d) v[i++] = x;
    return v.asDiagonal();
}

}  // namespace

TEST(Ellipticity, Validation) {
    EXPECT_EQ(error_kind([] { Ellipticity{0.0, 1.0}.validate(); }), ErrorKind::invalid_ellipticity);
    EXPECT_EQ(error_kind([] { Ellipticity{2.0, 1.0}.validate(); }), ErrorKind::invalid_ellipticity);
    EXPECT_EQ(error_kind([] { (void)pucci_extremal(Matrix::Identity(2, 2), -1.0, 1.0, PucciSign::minus); }),
              ErrorKind::invalid_ellipticity);
    EXPECT_FALSE(error_kind([] { Ellipticity{1.0, 1.0}.validate(); }));
}

TEST(BellmanFamily, RejectsInvalidMembers) {
    EXPECT_EQ(error_kind([] { BellmanFamily({}, Ellipticity{1, 1}); }), ErrorKind::invalid_family);
    Matrix nonsym(2, 2);
    nonsym << 1, 0.2, 0.1, 1;
    EXPECT_EQ(error_kind([&] { BellmanFamily({{nonsym, 0}}, Ellipticity{0.5, 2}); }), ErrorKind::invalid_family);
    Matrix coupled(2, 2);
    coupled << 1, 0.8, 0.8, 1.0;  // smallest eigenvalue 0.2 < lambda
    EXPECT_EQ(error_kind([&] { BellmanFamily({{coupled, 0}}, Ellipticity{0.5, 2}); }), ErrorKind::invalid_family);
    Matrix weak(2, 2);
    weak << 1, 1.2, 1.2, 2;
    EXPECT_EQ(error_kind([&] { BellmanFamily({{weak, 0}}, Ellipticity{0.01, 4}); }), ErrorKind::invalid_family);
    EXPECT_EQ(error_kind([] { BellmanFamily({{Matrix::Identity(2, 2), 0}, {Matrix::Identity(3, 3), 0}}, Ellipticity{1, 1}); }),
              ErrorKind::invalid_family);
}

TEST(BellmanFamily, ConstantsShiftSoThatZeroMapsToZero) {
    const BellmanFamily f({{Matrix::Identity(2, 2), 3.0}, {diag({2, 1}), 1.0}}, Ellipticity{1, 2});
    EXPECT_TRUE(f.normalized_zero());
    EXPECT_DOUBLE_EQ(bellman_apply(f, Matrix::Zero(2, 2)), 0.0);
    EXPECT_DOUBLE_EQ(f[1].constant, -2.0);
}

TEST(BellmanApply, LaplacianTrace) {
    EXPECT_DOUBLE_EQ(bellman_apply(BellmanFamily::laplacian(2), diag({1, -2})), -1.0);
}

TEST(BellmanApply, TwoTraces) {
    const BellmanFamily f({{Matrix::Identity(2, 2), 0}, {diag({2, 1}), 0}}, Ellipticity{1, 2});
    EXPECT_DOUBLE_EQ(bellman_apply(f, diag({1, 1})), 3.0);
    EXPECT_EQ(select_policy(f, diag({-1, 1})), 0u);
    EXPECT_EQ(select_policy(f, diag({1, 1})), 1u);
}

TEST(SelectPolicy, ConstantsBreakTheComparison) {
    const BellmanFamily f({{Matrix::Identity(2, 2), 0}, {2.0 * Matrix::Identity(2, 2), -10}}, Ellipticity{1, 2});
    EXPECT_EQ(select_policy(f, diag({1, 1})), 0u);
}

TEST(SelectPolicy, TiesGoToLowestIndex) {
    const BellmanFamily f({{diag({2, 1}), -1}, {Matrix::Identity(2, 2), 0}, {diag({1, 2}), 0}}, Ellipticity{1, 2});
    EXPECT_EQ(select_policy(f, Matrix::Zero(2, 2)), 1u);
    EXPECT_DOUBLE_EQ(bellman_apply(f, Matrix::Zero(2, 2)), 0.0);
}

TEST(BellmanApply, DimensionMismatch) {
    EXPECT_EQ(error_kind([] { (void)bellman_apply(BellmanFamily::laplacian(2), Matrix::Identity(3, 3)); }),
              ErrorKind::invalid_family);
}

TEST(Pucci, ClosedFormExamples) {
    EXPECT_DOUBLE_EQ(pucci_extremal(diag({1, -1}), 0.5, 2.0, PucciSign::minus), -1.5);
    EXPECT_DOUBLE_EQ(pucci_extremal(diag({1, -1}), 0.5, 2.0, PucciSign::plus), 1.5);
    for (int n : {2, 3}) {
        EXPECT_DOUBLE_EQ(pucci_extremal(Matrix::Identity(n, n), 0.7, 3.0, PucciSign::minus), 0.7 * n);
    }
}

TEST(Pucci, SandwichAndSuperadditivity) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(0.2, 3.0);
    for (int trial = 0; trial < 500; ++trial) {
        const int n = 2 + trial % 2;
        double lambda = U(rng), Lambda = U(rng);
        if (lambda > Lambda) std::swap(lambda, Lambda);
        const Matrix H = random_symmetric(rng, n), K = random_symmetric(rng, n);
        const double mH = pucci_extremal(H, lambda, Lambda, PucciSign::minus);
        const double mK = pucci_extremal(K, lambda, Lambda, PucciSign::minus);
        const double pK = pucci_extremal(K, lambda, Lambda, PucciSign::plus);
        const double mHK = pucci_extremal(H + K, lambda, Lambda, PucciSign::minus);
        EXPECT_LE(mH + mK, mHK + 1e-10);
        EXPECT_LE(mHK, mH + pK + 1e-10);
        // any admissible coefficient matrix lies between the extremal operators
        Eigen::SelfAdjointEigenSolver<Matrix> es(random_symmetric(rng, n));
        std::uniform_real_distribution<double> E(lambda, Lambda);
        Vector ev(n);
        for (int i = 0; i < n; ++i) ev[i] = E(rng);
        const Matrix M = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        const double t = M.cwiseProduct(H).sum();
        EXPECT_LE(mH, t + 1e-10);
        EXPECT_LE(t, pucci_extremal(H, lambda, Lambda, PucciSign::plus) + 1e-10);
    }
}

TEST(Pucci, MatchesProjectedGradientMinimum) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + trial % 2;
        const Matrix H = random_symmetric(rng, n);
        EXPECT_NEAR(pucci_extremal(H, 0.5, 2.0, PucciSign::minus), minimize_trace(H, 0.5, 2.0, rng, 8), 1e-6);
    }
}

TEST(BellmanApply, ConvexInHessian) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + trial % 2;
        const BellmanFamily f = random_family(rng, n, 3);
        const Matrix H = random_symmetric(rng, n), K = random_symmetric(rng, n);
        EXPECT_LE(bellman_apply(f, 0.5 * (H + K)), 0.5 * (bellman_apply(f, H) + bellman_apply(f, K)) + 1e-12);
        const auto& ell = f.ellipticity();
        const double trace = bellman_apply(f, H) - f[select_policy(f, H)].constant;
        EXPECT_LE(pucci_extremal(H, ell.lambda, ell.Lambda, PucciSign::minus), trace + 1e-10);
    }
}

TEST(Normalize, WorkedTwoByTwoExample) {
    Matrix L(2, 2);
    L << 1.0, 0.5, 0.5, 1.0;
    const BellmanFamily f({{L, 0}}, Ellipticity{0.5, 1.5});
    const NormalizationResult r = normalize_family(f, 0);
    EXPECT_NEAR(r.a_bar[0], 0.5, 1e-15);
    Matrix A(2, 2);
    A << 1.0, -0.5, 0.0, 1.0;
    EXPECT_LT((r.A - A).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((r.pivot.matrix - diag({0.75, 1.0})).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Normalize, DiagonalPivotIsIdentity) {
    const BellmanFamily f({{diag({0.5, 2.0}), 0}, {diag({2.0, 0.5}), 0}}, Ellipticity{0.5, 2});
    const NormalizationResult r = normalize_family(f, 0);
    EXPECT_EQ(r.A, Matrix::Identity(2, 2));
    for (std::size_t k = 0; k < f.size(); ++k) EXPECT_EQ(r.transformed[k].matrix, f[k].matrix);
}

TEST(Normalize, RandomFamiliesDecoupleThePivotAndStayInEnvelope) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + trial % 2;
        const BellmanFamily f = random_family(rng, n, 1 + trial % 3);
        const std::size_t pivot = static_cast<std::size_t>(trial) % f.size();
        const NormalizationResult r = normalize_family(f, pivot);
        for (int i = 0; i < n - 1; ++i) EXPECT_LE(std::abs(r.pivot.matrix(i, n - 1)), 1e-12);
        // last row of A is e_n, so the plane x_n = 0 maps to itself
        for (int j = 0; j < n; ++j) EXPECT_EQ(r.A(n - 1, j), j == n - 1 ? 1.0 : 0.0);
        Vector x = Vector::Random(n);
        x[n - 1] = 0.0;
        EXPECT_EQ((r.A * x)[n - 1], 0.0);
        for (const auto& m : r.transformed.members()) {
            const Vector eig = Eigen::SelfAdjointEigenSolver<Matrix>(m.matrix).eigenvalues();
            EXPECT_GE(eig.minCoeff(), r.envelope.lambda - 1e-12);
            EXPECT_LE(eig.maxCoeff(), r.envelope.Lambda + 1e-12);
        }
    }
}

TEST(Normalize, RejectsLossOfDiagonalDominance) {
    Matrix a(2, 2), b(2, 2);
    a << 1.0, 0.9, 0.9, 1.0;
    b << 4.0, -0.9, -0.9, 1.0;
    const BellmanFamily f({{a, 0}, {b, 0}}, Ellipticity{0.05, 5});
    EXPECT_EQ(error_kind([&] { (void)normalize_family(f, 1); }), ErrorKind::non_monotone_after_transform);
    EXPECT_EQ(error_kind([&] { (void)normalize_family(f, 7); }), ErrorKind::invalid_family);
}

TEST(FamilyJson, RoundTripAndNestedMatrices) {
    std::mt19937_64 rng(2);
    const BellmanFamily f = random_family(rng, 3, 3);
    const BellmanFamily g = BellmanFamily::from_json(f.to_json());
    ASSERT_EQ(g.size(), f.size());
    for (std::size_t k = 0; k < f.size(); ++k) {
        EXPECT_EQ(g[k].matrix, f[k].matrix);
        EXPECT_EQ(g[k].constant, f[k].constant);
    }
    const auto j = nlohmann::json::parse(R"({"lambda":1,"Lambda":2,"members":[{"matrix":[[2,0],[0,1]]}]})");
    EXPECT_EQ(BellmanFamily::from_json(j)[0].matrix, diag({2, 1}));
    EXPECT_EQ(error_kind([] { (void)BellmanFamily::from_json(nlohmann::json::parse(R"({"lambda":1})")); }),
              ErrorKind::invalid_family);
}
