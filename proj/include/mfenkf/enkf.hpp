#pragma once

#include <optional>

#include "mfenkf/ensemble.hpp"
#include "mfenkf/observation.hpp"

namespace mfenkf {

/// One filter cycle's mutable state.
struct FilterState {
    Ensemble ensemble;
    int step = 0;
    double inflation = 1.0;
};

/// Perturbed-observations EnKF analysis. Inflation is applied to the prior
/// anomalies before the gain is computed; observation perturbations are
/// mean-centered so the mean update is exactly the statistical Kalman one.
/// Errors: InsufficientMembers, SingularInnovation.
Ensemble enkf_analysis(const Ensemble& prior, const ObservationModel& obs,
                       const Vector& y, GaussianSampler& sampler, double alpha);

/// Same update with the empirical covariances tapered by the localization
/// kernel (Schur product) before the gain solve.
Ensemble localized_enkf_analysis(const Ensemble& prior, const ObservationModel& obs,
                                 const Vector& y, GaussianSampler& sampler, double alpha,
                                 const LocalizedTaper& taper);
Ensemble localized_enkf_analysis(const Ensemble& prior, const ObservationModel& obs,
                                 const Vector& y, GaussianSampler& sampler, double alpha,
                                 const LocalizationKernel& kernel, const Geometry* geom,
                                 const std::vector<int>& obs_state_indices);

/// Shrinkage target with the observation-side products precomputed
/// (T H^T and H T H^T), so a full n x n target is never formed.
struct ShrinkageTarget {
    Matrix t_ht;    // n x m
    Matrix h_t_ht;  // m x m
    double trace = 0.0;

    /// Dense convenience constructor; verifies SPD. Error: TargetNotSPD.
    static ShrinkageTarget from_dense(const Matrix& target, const Matrix& h);
};

/// Rao-Blackwellized Ledoit-Wolf shrinkage intensity from scaled anomalies.
double rblw_intensity(const AnomalyMatrix& a);

/// EnKF with the background covariance replaced by
/// (1-gamma) empirical + gamma * mu * target, mu = tr(sample)/tr(target).
Ensemble shrinkage_enkf_analysis(const Ensemble& prior, const ObservationModel& obs,
                                 const Vector& y, GaussianSampler& sampler, double alpha,
                                 const ShrinkageTarget& target,
                                 std::optional<double> gamma_override = std::nullopt);

namespace detail {
/// Shared perturbed-observation update so the degenerate reductions between
/// filters are bit-identical: mean - K (mean_h - y), A - K (A_h - A_eta).
Ensemble gain_update(const Vector& mean_x, const AnomalyMatrix& ax, const Vector& mean_h,
                     const AnomalyMatrix& ah, const AnomalyMatrix& a_eta, const Matrix& k,
                     const Vector& y);
/// Draw count perturbations from the sampler and mean-center them; returns
/// the centered draws and their scaled anomalies.
AnomalyMatrix centered_perturbations(GaussianSampler& sampler, Eigen::Index count);
}  // namespace detail

}  // namespace mfenkf
