#pragma once

#include <iosfwd>

#include "mfenkf/control_variates.hpp"
#include "mfenkf/linalg.hpp"

namespace mfenkf {

/// M-orthogonal lift/restriction pair between a reduced r-dimensional space
/// and the full n-dimensional space: restrict(lift(u)) = u and
/// phi_star = phi^T M. The M inner product may be given dense or in factored
/// form M = B^T B (the factored path never forms an n x n dense matrix).
class ProjectionPair {
public:
    /// Build from a lift basis and a dense SPD inner product. If the basis is
    /// not M-orthonormal to 1e-10, one Gram-Schmidt pass in the M inner
    /// product is applied; failure afterwards raises BasisDegenerate.
    static ProjectionPair from_basis(Matrix basis, const Matrix& m_inner);

    /// Same, with M = B^T B supplied in factored form.
    static ProjectionPair from_factored(Matrix basis, const SparseMatrix& b_factor);

    /// Trusted constructor (deserialization); checks biorthogonality only.
    static ProjectionPair from_operators(Matrix phi, Matrix phi_star);

    Vector lift(const Vector& u) const;         // Phi u
    Matrix lift_cols(const Matrix& u) const;    // column-wise
    Vector restrict(const Vector& x) const;     // Phi* x
    Matrix restrict_cols(const Matrix& x) const;

    const Matrix& phi() const { return phi_; }
    const Matrix& phi_star() const { return phi_star_; }
    Eigen::Index full_dim() const { return phi_.rows(); }
    Eigen::Index reduced_dim() const { return phi_.cols(); }

    void save(std::ostream& out) const;
    static ProjectionPair load(std::istream& in);

private:
    ProjectionPair(Matrix phi, Matrix phi_star)
        : phi_(std::move(phi)), phi_star_(std::move(phi_star)) {}

    Matrix phi_;       // n x r
    Matrix phi_star_;  // r x n
};

/// Fixed projection gain S = Phi_r: removes the variability of the principal
/// variate inside the reduced subspace.
CvGain fixed_gain(const ProjectionPair& p);

/// S = Phi_r + Cov(dx_r, uhat) Cov(uhat, uhat)^-1 correction for projected
/// control variates.
CvGain optimal_gain_correction(const Matrix& cov_dxr_uhat, const Matrix& cov_uhat,
                               const ProjectionPair& p);  // SingularControlCovariance

}  // namespace mfenkf
