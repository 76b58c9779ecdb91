#include "mfenkf/mlenkf.hpp"

#include <iostream>

#include "mfenkf/control_variates.hpp"

namespace mfenkf {
namespace {

// Signed-measure matrices can be genuinely indefinite: log, shift the
// spectrum just past zero, and solve; fail only on non-finite input.
Matrix solve_signed_innovation(const Matrix& s, const Matrix& rhs) {
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() == Eigen::Success) return llt.solve(rhs.transpose()).transpose();
    require(s.allFinite(), "IndefiniteCovariance", "non-finite innovation matrix");
    const double floor = 1e-10 * s.trace() / static_cast<double>(s.rows());
    const double lift = std::max(floor, -min_eigenvalue(s) * (1.0 + 1e-6) + floor);
    std::cerr << "mlenkf: indefinite innovation covariance, shifting by " << lift << "\n";
    Matrix sj = s;
    sj.diagonal().array() += lift;
    llt.compute(sj);
    require(llt.info() == Eigen::Success, "IndefiniteCovariance",
            "innovation matrix unusable after the spectral shift");
    return llt.solve(rhs.transpose()).transpose();
}

}  // namespace

void mlenkf_forecast(TotalVariateTriple& triple, const MemberPropagator& fom,
                     const MemberPropagator& rom, int threads) {
    mf_forecast(triple, fom, rom, threads);
}

TotalVariateTriple mlenkf_corrected_analysis(const TotalVariateTriple& forecast,
                                             const ObservationModel& obs, const Vector& y,
                                             GaussianSampler& sampler_x,
                                             GaussianSampler& sampler_u,
                                             const MfInflation& inflation,
                                             const LocalizedTaper& taper) {
    forecast.validate();
    const Eigen::Index r = forecast.reduced_dim();

    const Vector mx = empirical_mean(forecast.principal);
    AnomalyMatrix ax = inflate(anomalies(forecast.principal), inflation.principal);
    const Ensemble x_infl = assemble(mx, ax);
    const Ensemble hx{obs.h(x_infl.members)};
    const Vector mhx = empirical_mean(hx);
    const AnomalyMatrix ahx = anomalies(hx);
    const AnomalyMatrix a_eta_x =
        detail::centered_perturbations(sampler_x, forecast.principal.count());

    if (r == 0) {
        // degenerate ladder: plain localized EnKF on the principal ensemble
        const Matrix cov_xh = taper.state_obs.cwiseProduct(empirical_cov(ax, ahx));
        const Matrix s =
            taper.obs_obs.cwiseProduct(empirical_cov(ahx, ahx)) + obs.cov_obs;
        const Matrix k = solve_signed_innovation(s, cov_xh);
        TotalVariateTriple out = forecast;
        out.principal = detail::gain_update(mx, ax, mhx, ahx, a_eta_x, k, y);
        return out;
    }

    const Matrix& phi = forecast.proj->phi();
    const Vector m_uhat = empirical_mean(forecast.control);
    const Vector m_u = empirical_mean(forecast.ancillary);
    AnomalyMatrix a_uhat = inflate(anomalies(forecast.control), inflation.principal);
    AnomalyMatrix a_u = inflate(anomalies(forecast.ancillary), inflation.ancillary);
    const Ensemble uhat_infl = assemble(m_uhat, a_uhat);
    const Ensemble u_infl = assemble(m_u, a_u);
    const Ensemble h_uhat{obs.h(phi * uhat_infl.members)};
    const Ensemble h_u{obs.h(phi * u_infl.members)};
    const Vector mh_uhat = empirical_mean(h_uhat);
    const Vector mh_u = empirical_mean(h_u);
    const AnomalyMatrix ah_uhat = anomalies(h_uhat);
    const AnomalyMatrix ah_u = anomalies(h_u);
    const AnomalyMatrix a_eta_u =
        detail::centered_perturbations(sampler_u, forecast.ancillary.count());

    // signed-measure covariances lifted into the principal space
    const Matrix cov_xh = taper.state_obs.cwiseProduct(
        empirical_cov(ax, ahx) - phi * empirical_cov(a_uhat, ah_uhat) +
        phi * empirical_cov(a_u, ah_u));
    const Matrix s_hh = taper.obs_obs.cwiseProduct(signed_measure_cov(
                            empirical_cov(ahx, ahx), empirical_cov(ah_uhat, ah_uhat),
                            empirical_cov(ah_u, ah_u))) +
                        obs.cov_obs;
    const Matrix k = solve_signed_innovation(s_hh, cov_xh);
    const Matrix k_reduced = forecast.proj->phi_star() * k;

    // mean of the coefficient-1 total variate, then Eq. 4.17-style recentering
    const Vector mean_zb = mx - phi * (m_uhat - m_u);
    const Vector mean_hzb = mhx - (mh_uhat - mh_u);
    const Vector mean_za = mean_zb - k * (mean_hzb - y);

    AnomalyMatrix ax_a;
    ax_a.anomalies = ax.anomalies - k * (ahx.anomalies - a_eta_x.anomalies);
    AnomalyMatrix au_a;
    au_a.anomalies =
        a_u.anomalies - k_reduced * (ah_u.anomalies - a_eta_u.anomalies);
    AnomalyMatrix auhat_a;
    auhat_a.anomalies = forecast.proj->restrict_cols(ax_a.anomalies);

    const Vector mean_reduced = forecast.proj->restrict(mean_za);
    TotalVariateTriple out = forecast;
    out.principal = assemble(mean_za, ax_a);
    out.control = assemble(mean_reduced, auhat_a);
    out.ancillary = assemble(mean_reduced, au_a);
    require(out.principal.members.allFinite() && out.control.members.allFinite() &&
                out.ancillary.members.allFinite(),
            "DivergedAnalysis");
    return out;
}

}  // namespace mfenkf
