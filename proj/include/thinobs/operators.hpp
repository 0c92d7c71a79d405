#pragma once

// Finite Bellman representation F(H) = max_g tr(L_g H) + c_g, Pucci extremal
// operators, and the coordinate change that decouples the thin-plane normal
// from the tangential directions in one member of the family.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "thinobs/error.hpp"
#include "thinobs/grid.hpp"

namespace thinobs {

struct Ellipticity {
    double lambda = 1.0;
    double Lambda = 1.0;

    void validate() const {
        if (!(lambda > 0.0) || !(lambda <= Lambda) || !std::isfinite(Lambda)) {
            throw Error(ErrorKind::invalid_ellipticity,
                        "need 0 < lambda <= Lambda, got (" + std::to_string(lambda) + ", " + std::to_string(Lambda) + ")");
        }
    }
};

struct LinearOperator {
    Matrix matrix;
    double constant = 0.0;

    [[nodiscard]] double apply(const Matrix& H) const { return (matrix.cwiseProduct(H)).sum() + constant; }
};

/// M_ii >= sum_{j != i} |M_ij| for every row.
inline bool diagonally_dominant(const Matrix& M, double slack = 1e-12) {
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        double off = 0.0;
        for (Eigen::Index j = 0; j < M.cols(); ++j) {
            if (j != i) off += std::abs(M(i, j));
        }
        if (M(i, i) < off - slack * std::max(1.0, M(i, i))) return false;
    }
    return true;
}

class BellmanFamily {
public:
    enum class Constants { shift_to_zero, keep };

    BellmanFamily(std::vector<LinearOperator> members, Ellipticity ellipticity,
                  Constants constants = Constants::shift_to_zero)
        : members_(std::move(members)), ellipticity_(ellipticity) {
        ellipticity_.validate();
        if (members_.empty()) throw Error(ErrorKind::invalid_family, "family has no members");
        const auto n = members_.front().matrix.rows();
        if (n != 2 && n != 3) throw Error(ErrorKind::invalid_family, "member matrices must be 2x2 or 3x3");
        for (std::size_t k = 0; k < members_.size(); ++k) {
            const Matrix& M = members_[k].matrix;
            const std::string who = "member " + std::to_string(k);
            if (M.rows() != n || M.cols() != n) throw Error(ErrorKind::invalid_family, who + " has mismatched size");
            if (!M.allFinite() || !std::isfinite(members_[k].constant)) {
                throw Error(ErrorKind::invalid_family, who + " is not finite");
            }
            if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, M.cwiseAbs().maxCoeff())) {
                throw Error(ErrorKind::invalid_family, who + " is not symmetric");
            }
            members_[k].matrix = 0.5 * (M + M.transpose());
            const Vector eig = Eigen::SelfAdjointEigenSolver<Matrix>(members_[k].matrix).eigenvalues();
            const double slack = 1e-12 * ellipticity_.Lambda;
            if (eig.minCoeff() < ellipticity_.lambda - slack || eig.maxCoeff() > ellipticity_.Lambda + slack) {
                throw Error(ErrorKind::invalid_family, who + " violates the ellipticity bounds");
            }
            if (!diagonally_dominant(members_[k].matrix)) {
                throw Error(ErrorKind::invalid_family, who + " is not diagonally dominant");
            }
        }
        if (constants == Constants::shift_to_zero) {
            const double top = max_constant();
            for (auto& m : members_) m.constant -= top;
        }
    }

    [[nodiscard]] const std::vector<LinearOperator>& members() const noexcept { return members_; }
    [[nodiscard]] std::size_t size() const noexcept { return members_.size(); }
    [[nodiscard]] const LinearOperator& operator[](std::size_t k) const { return members_[k]; }
    [[nodiscard]] const Ellipticity& ellipticity() const noexcept { return ellipticity_; }
    [[nodiscard]] int dimension() const { return static_cast<int>(members_.front().matrix.rows()); }
    [[nodiscard]] bool normalized_zero() const { return max_constant() == 0.0; }

    static BellmanFamily laplacian(int n) {
        return BellmanFamily({LinearOperator{Matrix::Identity(n, n), 0.0}}, Ellipticity{1.0, 1.0});
    }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json j;
        j["lambda"] = ellipticity_.lambda;
        j["Lambda"] = ellipticity_.Lambda;
        j["members"] = nlohmann::json::array();
        for (const auto& m : members_) {
            std::vector<double> flat;
            for (Eigen::Index r = 0; r < m.matrix.rows(); ++r) {
                for (Eigen::Index c = 0; c < m.matrix.cols(); ++c) flat.push_back(m.matrix(r, c));
            }
            j["members"].push_back({{"matrix", flat}, {"c", m.constant}});
        }
        return j;
    }

    /// Accepts the matrix either flat row-major or as nested rows.
    static BellmanFamily from_json(const nlohmann::json& j) {
        try {
            Ellipticity ell{j.at("lambda").get<double>(), j.at("Lambda").get<double>()};
            std::vector<LinearOperator> members;
            for (const auto& m : j.at("members")) {
                const auto& mj = m.at("matrix");
                std::vector<double> flat;
                for (const auto& e : mj) {
                    if (e.is_array()) {
                        for (const auto& x : e) flat.push_back(x.get<double>());
                    } else {
                        flat.push_back(e.get<double>());
                    }
                }
                const int n = flat.size() == 4 ? 2 : flat.size() == 9 ? 3 : 0;
                if (n == 0) throw Error(ErrorKind::invalid_family, "member matrix must have 4 or 9 entries");
                Matrix M(n, n);
                for (int r = 0; r < n; ++r) {
                    for (int c = 0; c < n; ++c) M(r, c) = flat[static_cast<std::size_t>(r * n + c)];
                }
                members.push_back({M, m.value("c", 0.0)});
            }
            return BellmanFamily(std::move(members), ell);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::invalid_family, std::string("malformed family JSON: ") + e.what());
        }
    }

private:
    [[nodiscard]] double max_constant() const {
        double top = -std::numeric_limits<double>::infinity();
        for (const auto& m : members_) top = std::max(top, m.constant);
        return top;
    }

    std::vector<LinearOperator> members_;
    Ellipticity ellipticity_;
};

/// Argmax member of tr(L_g H) + c_g; ties go to the lowest index.
inline std::size_t select_policy(const BellmanFamily& family, const Matrix& H) {
    std::size_t best = 0;
    double best_value = family[0].apply(H);
    for (std::size_t k = 1; k < family.size(); ++k) {
        const double v = family[k].apply(H);
        if (v > best_value) {
            best_value = v;
            best = k;
        }
    }
    return best;
}

inline double bellman_apply(const BellmanFamily& family, const Matrix& H) {
    if (H.rows() != family.dimension() || H.cols() != family.dimension()) {
        throw Error(ErrorKind::invalid_family, "Hessian dimension does not match the family");
    }
    return family[select_policy(family, H)].apply(H);
}

enum class PucciSign { minus, plus };

inline double pucci_extremal(const Matrix& H, double lambda, double Lambda, PucciSign sign) {
    Ellipticity{lambda, Lambda}.validate();
    const Vector eig = Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (H + H.transpose()), Eigen::EigenvaluesOnly).eigenvalues();
    double pos = 0.0, neg = 0.0;
    for (Eigen::Index i = 0; i < eig.size(); ++i) (eig[i] > 0.0 ? pos : neg) += eig[i];
    return sign == PucciSign::minus ? lambda * pos + Lambda * neg : Lambda * pos + lambda * neg;
}

struct NormalizationResult {
    Matrix A;
    Vector a_bar;
    LinearOperator pivot;
    BellmanFamily transformed;
    Ellipticity envelope;
};

/// Change of variables y = A x with A = [[I, -a_bar], [0, 1]] and
/// a_bar = L_in / L_nn for the pivot member. Members map to A L A^T, so
/// the transformed pivot has no mixed tangential/normal entries and the
/// plane {x_n = 0} is preserved.
inline NormalizationResult normalize_family(const BellmanFamily& family, std::size_t pivot_index = 0) {
    if (pivot_index >= family.size()) throw Error(ErrorKind::invalid_family, "pivot index out of range");
    const int n = family.dimension();
    const LinearOperator& pivot = family[pivot_index];
    const Vector Ln = pivot.matrix.topRightCorner(n - 1, 1);
    const Vector a_bar = Ln / pivot.matrix(n - 1, n - 1);

    Matrix A = Matrix::Identity(n, n);
    A.topRightCorner(n - 1, 1) = -a_bar;

    const Eigen::JacobiSVD<Matrix> svd(A);
    const double norm_A = svd.singularValues().maxCoeff();
    const double norm_Ainv = 1.0 / svd.singularValues().minCoeff();
    const Ellipticity env{family.ellipticity().lambda / (norm_Ainv * norm_Ainv),
                          family.ellipticity().Lambda * norm_A * norm_A};

    std::vector<LinearOperator> members;
    members.reserve(family.size());
    for (std::size_t k = 0; k < family.size(); ++k) {
        Matrix M = A * family[k].matrix * A.transpose();
        M = 0.5 * (M + M.transpose());
        if (!diagonally_dominant(M)) {
            throw Error(ErrorKind::non_monotone_after_transform,
                        "member " + std::to_string(k) + " loses diagonal dominance under the change of variables");
        }
        members.push_back({M, family[k].constant});
    }
    BellmanFamily transformed(std::move(members), env, BellmanFamily::Constants::keep);
    LinearOperator new_pivot = transformed[pivot_index];
    return {A, a_bar, new_pivot, std::move(transformed), env};
}

}  // namespace thinobs
