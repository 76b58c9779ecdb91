#pragma once

#include "mfenkf/mfenkf.hpp"

namespace mfenkf {

/// Corrected multilevel EnKF baseline: coefficient-1 signed-measure
/// covariances (lifted through the projection), Gaussian localization,
/// forecast projection of the control ensemble and total-variate mean
/// re-centering. The signed innovation matrix can be indefinite; the solve
/// logs, jitters and only then fails with IndefiniteCovariance.
TotalVariateTriple mlenkf_corrected_analysis(const TotalVariateTriple& forecast,
                                             const ObservationModel& obs, const Vector& y,
                                             GaussianSampler& sampler_x,
                                             GaussianSampler& sampler_u,
                                             const MfInflation& inflation,
                                             const LocalizedTaper& taper);

/// Forecast for the baseline: identical projection/propagation pattern to
/// the MFEnKF forecast step.
void mlenkf_forecast(TotalVariateTriple& triple, const MemberPropagator& fom,
                     const MemberPropagator& rom, int threads = 1);

}  // namespace mfenkf
