#pragma once

#include <vector>

#include "mfenkf/linalg.hpp"

namespace mfenkf {

enum class GainFlavor {
    ExactMean,        // S = Cov(x,u) Cov(u,u)^-1, control mean known
    Ancillary,        // S = Cov(x,u) (Cov(uh,uh) + Cov(u,u))^-1
    Half,             // S = 1/2 Cov(x,u) Cov(u,u)^-1, matched second moments
    Empirical,        // sampled cross / control covariances, exact ancillary
    EmpiricalFull,    // everything sampled (diagnostic only)
    FixedProjection,  // S = Phi_r
};

/// Linear control-variate gain coupling reduced-space information back into
/// the principal space.
struct CvGain {
    Matrix s;  // principal dim x control dim
    GainFlavor flavor = GainFlavor::ExactMean;
};

CvGain optimal_gain(const Matrix& cov_xu, const Matrix& cov_uu);  // SingularControlCovariance
CvGain ancillary_gain(const Matrix& cov_xu, const Matrix& cov_uhat,
                      const Matrix& cov_u);                       // SingularSumCovariance
CvGain half_gain(const Matrix& cov_xu, const Matrix& cov_uu);

/// Covariance of the total variate x - S(uh - u) for an arbitrary gain.
Matrix total_variate_cov(const Matrix& cov_xx, const Matrix& cov_xu,
                         const Matrix& cov_uhat, const Matrix& cov_u,
                         const Matrix& s);

/// The (possibly indefinite) signed-measure combination used by the MLEnKF
/// baseline: cov_xx - cov_uhat + cov_u.
Matrix signed_measure_cov(const Matrix& cov_xx, const Matrix& cov_uhat,
                          const Matrix& cov_u);

/// Statistical gain with sampled cross/control covariances but the ancillary
/// covariance known exactly.
CvGain empirical_gain(const Matrix& cov_xu_emp, const Matrix& cov_uhat_emp,
                      const Matrix& cov_u_exact);  // SingularSumCovariance

/// Fully sampled gain; can be ill-defined when undersampled, so the solve
/// falls back to a pseudo-inverse. Diagnostic use only.
CvGain empirical_gain_full(const Matrix& cov_xu_emp, const Matrix& cov_uhat_emp,
                           const Matrix& cov_u_emp);

/// Per-fidelity gains S_1..S_L together with the accumulated products
/// Sbar_l = S_1 * ... * S_l used by the telescoping combination.
struct FidelityChain {
    std::vector<Matrix> gains;
    std::vector<Matrix> accumulated;

    static FidelityChain from_gains(std::vector<Matrix> gains);  // ShapeMismatch
    std::size_t levels() const { return gains.size(); }
};

/// zeta-mean of the telescoped total variate: x - sum_l Sbar_l * diffs[l],
/// where diffs[l] = mean(uhat_l) - mean(u_l).
Vector telescoping_total_variate(const Vector& x_mean,
                                 const std::vector<Vector>& diffs,
                                 const FidelityChain& chain);  // ShapeMismatch

/// Abstract work units for a two-fidelity estimator.
struct CostModel {
    double cost_principal = 0.0;  // C_x per principal sample
    double cost_reduced = 0.0;    // C_u per reduced sample
    int n_principal = 2;          // N_x
    int n_reduced = 2;            // N_u
};

double estimator_cost(const CostModel& m);

/// Equivalent EnKF ensemble size matching the MFEnKF sampling error:
/// M_X = N_x N_u sigma_x / (N_u sigma_z - sigma_su (N_u - N_x)).
double effective_ensemble_size(double sigma_x, double sigma_z, double sigma_su,
                               int n_x, int n_u);  // DegenerateVarianceBudget

}  // namespace mfenkf
