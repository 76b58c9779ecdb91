#include "mfenkf/projection.hpp"

#include <cmath>
#include <functional>
#include <istream>
#include <ostream>

#include "mfenkf/archive.hpp"

namespace mfenkf {
namespace {

constexpr double kBiorthTol = 1e-10;

// One modified Gram-Schmidt pass in the inner product realized by apply_m.
void m_orthonormalize(Matrix& basis, const std::function<Vector(const Vector&)>& apply_m) {
    for (Eigen::Index j = 0; j < basis.cols(); ++j) {
        Vector mv = apply_m(basis.col(j));
        for (Eigen::Index i = 0; i < j; ++i) {
            const double proj = basis.col(i).dot(mv);
            basis.col(j) -= proj * basis.col(i);
        }
        mv = apply_m(basis.col(j));
        const double norm2 = basis.col(j).dot(mv);
        require(norm2 > 0.0 && std::isfinite(norm2), "BasisDegenerate",
                "basis column has non-positive M-norm");
        basis.col(j) /= std::sqrt(norm2);
    }
}

double biorth_defect(const Matrix& phi, const Matrix& phi_star) {
    const Matrix g = phi_star * phi;
    return (g - Matrix::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff();
}

ProjectionPair build(Matrix basis, const std::function<Vector(const Vector&)>& apply_m,
                     const std::function<Matrix(const Matrix&)>& phi_star_of) {
    Matrix phi_star = phi_star_of(basis);
    if (biorth_defect(basis, phi_star) > kBiorthTol) {
        m_orthonormalize(basis, apply_m);
        phi_star = phi_star_of(basis);
        require(biorth_defect(basis, phi_star) <= kBiorthTol, "BasisDegenerate",
                "biorthogonality not reached after re-orthogonalization");
    }
    return ProjectionPair::from_operators(std::move(basis), std::move(phi_star));
}

}  // namespace

ProjectionPair ProjectionPair::from_basis(Matrix basis, const Matrix& m_inner) {
    require(m_inner.rows() == basis.rows() && m_inner.cols() == basis.rows(),
            "ShapeMismatch", "inner product dimension");
    return build(
        std::move(basis), [&](const Vector& v) { return Vector(m_inner * v); },
        [&](const Matrix& phi) { return Matrix(phi.transpose() * m_inner); });
}

ProjectionPair ProjectionPair::from_factored(Matrix basis, const SparseMatrix& b_factor) {
    require(b_factor.cols() == basis.rows(), "ShapeMismatch", "factor dimension");
    return build(
        std::move(basis),
        [&](const Vector& v) { return Vector(b_factor.transpose() * (b_factor * v)); },
        [&](const Matrix& phi) {
            const Matrix bphi = b_factor * phi;  // n x r
            return Matrix(bphi.transpose() * b_factor);
        });
}

ProjectionPair ProjectionPair::from_operators(Matrix phi, Matrix phi_star) {
    require(phi.rows() == phi_star.cols() && phi.cols() == phi_star.rows(),
            "ShapeMismatch");
    require(biorth_defect(phi, phi_star) <= 1e-8, "BasisDegenerate",
            "operators are not biorthogonal");
    return ProjectionPair(std::move(phi), std::move(phi_star));
}

Vector ProjectionPair::lift(const Vector& u) const {
    require(u.size() == reduced_dim(), "ShapeMismatch", "lift input dimension");
    return phi_ * u;
}

Matrix ProjectionPair::lift_cols(const Matrix& u) const {
    require(u.rows() == reduced_dim(), "ShapeMismatch", "lift input dimension");
    return phi_ * u;
}

Vector ProjectionPair::restrict(const Vector& x) const {
    require(x.size() == full_dim(), "ShapeMismatch", "restrict input dimension");
    return phi_star_ * x;
}

Matrix ProjectionPair::restrict_cols(const Matrix& x) const {
    require(x.rows() == full_dim(), "ShapeMismatch", "restrict input dimension");
    return phi_star_ * x;
}

void ProjectionPair::save(std::ostream& out) const {
    ArrayArchive ar;
    ar.put("phi", phi_);
    ar.put("phi_star", phi_star_);
    ar.save(out);
}

ProjectionPair ProjectionPair::load(std::istream& in) {
    ArrayArchive ar = ArrayArchive::load(in);
    return from_operators(ar.matrix("phi"), ar.matrix("phi_star"));
}

CvGain fixed_gain(const ProjectionPair& p) {
    return {p.phi(), GainFlavor::FixedProjection};
}

CvGain optimal_gain_correction(const Matrix& cov_dxr_uhat, const Matrix& cov_uhat,
                               const ProjectionPair& p) {
    require(cov_dxr_uhat.rows() == p.full_dim() &&
                cov_dxr_uhat.cols() == p.reduced_dim(),
            "ShapeMismatch");
    const Matrix corr =
        solve_spd_right(cov_uhat, cov_dxr_uhat, 0.0, "SingularControlCovariance");
    return {p.phi() + corr, GainFlavor::FixedProjection};
}

}  // namespace mfenkf
