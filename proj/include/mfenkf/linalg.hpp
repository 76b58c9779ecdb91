#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "mfenkf/error.hpp"

namespace mfenkf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// Cholesky of an SPD matrix with one shot of relative diagonal jitter on
/// failure. jitter_rel scales trace(A)/dim (0 disables the retry).
inline Eigen::LLT<Matrix> chol_spd(const Matrix& a, double jitter_rel,
                                   const char* error_code) {
    require(a.rows() == a.cols(), "ShapeMismatch", "cholesky of non-square matrix");
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() == Eigen::Success) return llt;
    if (jitter_rel > 0.0) {
        const double jitter = jitter_rel * a.trace() / static_cast<double>(a.rows());
        Matrix aj = a;
        aj.diagonal().array() += jitter;
        llt.compute(aj);
        if (llt.info() == Eigen::Success) return llt;
    }
    throw Error(error_code);
}

/// X = B * A^{-1} for SPD A, via Cholesky (never forms the inverse).
inline Matrix solve_spd_right(const Matrix& a, const Matrix& b, double jitter_rel,
                              const char* error_code) {
    auto llt = chol_spd(a, jitter_rel, error_code);
    return llt.solve(b.transpose()).transpose();
}

/// log det(A) for SPD A via Cholesky.
inline double logdet_spd(const Matrix& a, const char* error_code = "NotPositiveDefinite") {
    auto llt = chol_spd(a, 0.0, error_code);
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

inline double min_eigenvalue(const Matrix& sym) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (sym + sym.transpose()),
                                             Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

}  // namespace mfenkf
