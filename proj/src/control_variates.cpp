#include "mfenkf/control_variates.hpp"

namespace mfenkf {

CvGain optimal_gain(const Matrix& cov_xu, const Matrix& cov_uu) {
    require(cov_xu.cols() == cov_uu.rows(), "ShapeMismatch");
    return {solve_spd_right(cov_uu, cov_xu, 0.0, "SingularControlCovariance"),
            GainFlavor::ExactMean};
}

CvGain ancillary_gain(const Matrix& cov_xu, const Matrix& cov_uhat,
                      const Matrix& cov_u) {
    require(cov_uhat.rows() == cov_u.rows() && cov_uhat.cols() == cov_u.cols(),
            "ShapeMismatch");
    return {solve_spd_right(cov_uhat + cov_u, cov_xu, 0.0, "SingularSumCovariance"),
            GainFlavor::Ancillary};
}

CvGain half_gain(const Matrix& cov_xu, const Matrix& cov_uu) {
    CvGain g = optimal_gain(cov_xu, cov_uu);
    g.s *= 0.5;
    g.flavor = GainFlavor::Half;
    return g;
}

Matrix total_variate_cov(const Matrix& cov_xx, const Matrix& cov_xu,
                         const Matrix& cov_uhat, const Matrix& cov_u,
                         const Matrix& s) {
    require(cov_xu.rows() == cov_xx.rows() && s.rows() == cov_xx.rows() &&
                s.cols() == cov_uhat.rows() && cov_xu.cols() == cov_uhat.rows() &&
                cov_uhat.rows() == cov_u.rows(),
            "ShapeMismatch");
    const Matrix cross = cov_xu * s.transpose();
    return cov_xx - cross - cross.transpose() + s * (cov_uhat + cov_u) * s.transpose();
}

Matrix signed_measure_cov(const Matrix& cov_xx, const Matrix& cov_uhat,
                          const Matrix& cov_u) {
    return cov_xx - cov_uhat + cov_u;
}

CvGain empirical_gain(const Matrix& cov_xu_emp, const Matrix& cov_uhat_emp,
                      const Matrix& cov_u_exact) {
    CvGain g = ancillary_gain(cov_xu_emp, cov_uhat_emp, cov_u_exact);
    g.flavor = GainFlavor::Empirical;
    return g;
}

CvGain empirical_gain_full(const Matrix& cov_xu_emp, const Matrix& cov_uhat_emp,
                           const Matrix& cov_u_emp) {
    const Matrix sum = cov_uhat_emp + cov_u_emp;
    Eigen::LLT<Matrix> llt(sum);
    if (llt.info() == Eigen::Success) {
        // guard against a numerically successful factorization of a
        // rank-deficient sum
        const Vector d = llt.matrixL().toDenseMatrix().diagonal();
        if (d.minCoeff() > 1e-10 * d.maxCoeff())
            return {llt.solve(cov_xu_emp.transpose()).transpose(),
                    GainFlavor::EmpiricalFull};
    }
    const Matrix pinv = sum.completeOrthogonalDecomposition().pseudoInverse();
    return {cov_xu_emp * pinv, GainFlavor::EmpiricalFull};
}

FidelityChain FidelityChain::from_gains(std::vector<Matrix> gains) {
    FidelityChain chain;
    chain.gains = std::move(gains);
    chain.accumulated.reserve(chain.gains.size());
    for (std::size_t l = 0; l < chain.gains.size(); ++l) {
        if (l == 0) {
            chain.accumulated.push_back(chain.gains[0]);
        } else {
            require(chain.accumulated[l - 1].cols() == chain.gains[l].rows(),
                    "ShapeMismatch", "fidelity chain dimensions do not chain");
            chain.accumulated.push_back(chain.accumulated[l - 1] * chain.gains[l]);
        }
    }
    return chain;
}

Vector telescoping_total_variate(const Vector& x_mean,
                                 const std::vector<Vector>& diffs,
                                 const FidelityChain& chain) {
    require(diffs.size() == chain.levels(), "ShapeMismatch",
            "diffs/chain length mismatch");
    Vector z = x_mean;
    for (std::size_t l = 0; l < diffs.size(); ++l) {
        require(chain.accumulated[l].cols() == diffs[l].size(), "ShapeMismatch");
        z -= chain.accumulated[l] * diffs[l];
    }
    return z;
}

double estimator_cost(const CostModel& m) {
    return m.n_principal * m.cost_principal +
           (m.n_principal + m.n_reduced) * m.cost_reduced;
}

double effective_ensemble_size(double sigma_x, double sigma_z, double sigma_su,
                               int n_x, int n_u) {
    const double denom = n_u * sigma_z - sigma_su * (n_u - n_x);
    require(denom > 0.0, "DegenerateVarianceBudget");
    return n_x * n_u * sigma_x / denom;
}

}  // namespace mfenkf
