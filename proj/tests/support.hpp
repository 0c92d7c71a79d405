#pragma once

// Shared helpers for the unit suites and the acceptance binary.

#include <random>

#include "thinobs/error.hpp"
#include "thinobs/operators.hpp"

namespace thinobs::testing {

template <class F>
std::optional<ErrorKind> error_kind(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    return std::nullopt;
}

inline Matrix random_symmetric(std::mt19937_64& rng, int n, double scale = 1.0) {
    std::normal_distribution<double> N01(0.0, scale);
    Matrix M(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) M(i, j) = M(j, i) = N01(rng);
    }
    return M;
}

/// Diagonally dominant members with small couplings; ellipticity taken from
/// the extreme eigenvalues so every family is valid.
inline BellmanFamily random_family(std::mt19937_64& rng, int n, int members, double coupling = 0.15) {
    std::uniform_real_distribution<double> diag(1.0, 2.0), off(-coupling, coupling), cst(-0.5, 0.5);
    std::vector<LinearOperator> ops;
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (int k = 0; k < members; ++k) {
        Matrix M(n, n);
        for (int i = 0; i < n; ++i) {
            M(i, i) = diag(rng);
            for (int j = i + 1; j < n; ++j) M(i, j) = M(j, i) = off(rng);
        }
        const Vector eig = Eigen::SelfAdjointEigenSolver<Matrix>(M).eigenvalues();
        lo = std::min(lo, eig.minCoeff());
        hi = std::max(hi, eig.maxCoeff());
        ops.push_back({M, cst(rng)});
    }
    return BellmanFamily(std::move(ops), Ellipticity{lo, hi});
}

/// Minimizes tr(M H) over {lambda I <= M <= Lambda I} by projected gradient
/// from random feasible starts; projection clips eigenvalues.
inline double minimize_trace(const Matrix& H, double lambda, double Lambda, std::mt19937_64& rng, int starts = 20) {
    const int n = static_cast<int>(H.rows());
    auto project = [&](const Matrix& M) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (M + M.transpose()));
        const Vector ev = es.eigenvalues().cwiseMax(lambda).cwiseMin(Lambda);
        return Matrix(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
    };
    // The objective is linear, so any step is admissible; a growing step
    // removes the slow tail along directions where H is nearly flat.
    const double step0 = 0.25 / std::max(1.0, H.norm());
    double best = std::numeric_limits<double>::infinity();
    for (int s = 0; s < starts; ++s) {
        Matrix M = project(random_symmetric(rng, n, Lambda) + 0.5 * (lambda + Lambda) * Matrix::Identity(n, n));
        double step = step0;
        for (int it = 0; it < 400; ++it, step = std::min(step * 1.05, 1e8 * step0)) M = project(M - step * H);
        best = std::min(best, (M.cwiseProduct(H)).sum());
    }
    return best;
}

}  // namespace thinobs::testing
