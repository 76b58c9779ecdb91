#include "mfenkf/enkf.hpp"

#include <cmath>

namespace mfenkf {

namespace detail {

Ensemble gain_update(const Vector& mean_x, const AnomalyMatrix& ax, const Vector& mean_h,
                     const AnomalyMatrix& ah, const AnomalyMatrix& a_eta, const Matrix& k,
                     const Vector& y) {
    const Vector mean_a = mean_x - k * (mean_h - y);
    AnomalyMatrix aa;
    aa.anomalies = ax.anomalies - k * (ah.anomalies - a_eta.anomalies);
    return assemble(mean_a, aa);
}

AnomalyMatrix centered_perturbations(GaussianSampler& sampler, Eigen::Index count) {
    Matrix draws = sampler.sample(count).members;
    const Vector mean = draws.rowwise().sum() / static_cast<double>(count);
    draws.colwise() -= mean;
    AnomalyMatrix a;
    a.anomalies = draws / std::sqrt(static_cast<double>(count - 1));
    return a;
}

}  // namespace detail

namespace {

struct PriorPieces {
    Vector mean;
    AnomalyMatrix ax;       // inflated
    Vector mean_h;
    AnomalyMatrix ah;
};

PriorPieces prepare_prior(const Ensemble& prior, const ObservationModel& obs,
                          double alpha) {
    require(prior.count() >= 2, "InsufficientMembers");
    PriorPieces p;
    p.mean = empirical_mean(prior);
    p.ax = inflate(anomalies(prior), alpha);
    const Ensemble inflated = assemble(p.mean, p.ax);
    const Ensemble hx{obs.h(inflated.members)};
    require(hx.dim() == obs.dim(), "ShapeMismatch", "observation operator output");
    p.mean_h = empirical_mean(hx);
    p.ah = anomalies(hx);
    return p;
}

}  // namespace

Ensemble enkf_analysis(const Ensemble& prior, const ObservationModel& obs,
                       const Vector& y, GaussianSampler& sampler, double alpha) {
    const PriorPieces p = prepare_prior(prior, obs, alpha);
    const AnomalyMatrix a_eta = detail::centered_perturbations(sampler, prior.count());
    const Matrix innovation_cov =
        empirical_cov(p.ah, p.ah) + obs.cov_obs;
    const Matrix k = solve_spd_right(innovation_cov, empirical_cov(p.ax, p.ah), 1e-10,
                                     "SingularInnovation");
    return detail::gain_update(p.mean, p.ax, p.mean_h, p.ah, a_eta, k, y);
}

Ensemble localized_enkf_analysis(const Ensemble& prior, const ObservationModel& obs,
                                 const Vector& y, GaussianSampler& sampler, double alpha,
                                 const LocalizedTaper& taper) {
    const PriorPieces p = prepare_prior(prior, obs, alpha);
    require(taper.state_obs.rows() == prior.dim() && taper.state_obs.cols() == obs.dim(),
            "ShapeMismatch", "taper dimensions");
    const AnomalyMatrix a_eta = detail::centered_perturbations(sampler, prior.count());
    const Matrix cov_xh = taper.state_obs.cwiseProduct(empirical_cov(p.ax, p.ah));
    const Matrix innovation_cov =
        taper.obs_obs.cwiseProduct(empirical_cov(p.ah, p.ah)) + obs.cov_obs;
    const Matrix k =
        solve_spd_right(innovation_cov, cov_xh, 1e-10, "SingularInnovation");
    return detail::gain_update(p.mean, p.ax, p.mean_h, p.ah, a_eta, k, y);
}

Ensemble localized_enkf_analysis(const Ensemble& prior, const ObservationModel& obs,
                                 const Vector& y, GaussianSampler& sampler, double alpha,
                                 const LocalizationKernel& kernel, const Geometry* geom,
                                 const std::vector<int>& obs_state_indices) {
    return localized_enkf_analysis(prior, obs, y, sampler, alpha,
                                   make_taper(kernel, geom, obs_state_indices));
}

ShrinkageTarget ShrinkageTarget::from_dense(const Matrix& target, const Matrix& h) {
    require(target.rows() == target.cols(), "ShapeMismatch");
    Eigen::LLT<Matrix> llt(target);
    require(llt.info() == Eigen::Success, "TargetNotSPD");
    ShrinkageTarget t;
    t.t_ht = target * h.transpose();
    t.h_t_ht = h * t.t_ht;
    t.trace = target.trace();
    return t;
}

double rblw_intensity(const AnomalyMatrix& a) {
    const double n_members = static_cast<double>(a.count());
    const double n_dim = static_cast<double>(a.dim());
    const Matrix small_gram = a.anomalies.transpose() * a.anomalies;  // N x N
    const double tr_s = a.anomalies.squaredNorm();       // tr(S)
    const double tr_s2 = small_gram.squaredNorm();       // tr(S^2)
    const double denom = (n_members + 2.0) * (tr_s2 - tr_s * tr_s / n_dim);
    if (denom <= 0.0) return 1.0;  // sample covariance already spherical
    const double num = (n_members - 2.0) / n_members * tr_s2 + tr_s * tr_s;
    return std::min(1.0, num / denom);
}

Ensemble shrinkage_enkf_analysis(const Ensemble& prior, const ObservationModel& obs,
                                 const Vector& y, GaussianSampler& sampler, double alpha,
                                 const ShrinkageTarget& target,
                                 std::optional<double> gamma_override) {
    const PriorPieces p = prepare_prior(prior, obs, alpha);
    require(target.t_ht.rows() == prior.dim() && target.t_ht.cols() == obs.dim(),
            "ShapeMismatch", "target dimensions");
    require(target.trace > 0.0, "TargetNotSPD", "target trace must be positive");
    const AnomalyMatrix a_eta = detail::centered_perturbations(sampler, prior.count());

    const double gamma = gamma_override ? *gamma_override : rblw_intensity(p.ax);
    const double mu = p.ax.anomalies.squaredNorm() / target.trace;

    const Matrix cov_xh =
        (1.0 - gamma) * empirical_cov(p.ax, p.ah) + (gamma * mu) * target.t_ht;
    const Matrix innovation_cov = (1.0 - gamma) * empirical_cov(p.ah, p.ah) +
                                  (gamma * mu) * target.h_t_ht + obs.cov_obs;
    const Matrix k =
        solve_spd_right(innovation_cov, cov_xh, 1e-10, "SingularInnovation");
    return detail::gain_update(p.mean, p.ax, p.mean_h, p.ah, a_eta, k, y);
}

}  // namespace mfenkf
