#include "mfenkf/ensemble.hpp"

#include <cmath>

namespace mfenkf {

Vector empirical_mean(const Ensemble& ens) {
    require(ens.count() >= 1, "EmptyEnsemble");
    return ens.members.rowwise().sum() / static_cast<double>(ens.count());
}

AnomalyMatrix anomalies(const Ensemble& ens) {
    require(ens.count() >= 2, "InsufficientMembers",
            "anomalies need at least two members");
    const Vector mean = empirical_mean(ens);
    const double scale = 1.0 / std::sqrt(static_cast<double>(ens.count() - 1));
    AnomalyMatrix a;
    a.anomalies = (ens.members.colwise() - mean) * scale;
    return a;
}

Matrix empirical_cov(const AnomalyMatrix& a, const AnomalyMatrix& b) {
    require(a.count() == b.count(), "ShapeMismatch",
            "anomaly member counts differ");
    return a.anomalies * b.anomalies.transpose();
}

AnomalyMatrix inflate(const AnomalyMatrix& a, double alpha) {
    require(alpha >= 1.0, "InvalidInflation", "inflation factor must be >= 1");
    return AnomalyMatrix{alpha * a.anomalies};
}

Ensemble assemble(const Vector& mean, const AnomalyMatrix& a) {
    require(mean.size() == a.dim(), "ShapeMismatch", "mean/anomaly dims differ");
    const double scale = std::sqrt(static_cast<double>(a.count() - 1));
    Ensemble e;
    e.members = (scale * a.anomalies).colwise() + mean;
    return e;
}

Ensemble GaussianSampler::sample(Eigen::Index count) {
    require(count >= 1, "EmptyEnsemble", "sample count must be >= 1");
    Matrix z(factor_.cols(), count);
    for (Eigen::Index j = 0; j < count; ++j)
        for (Eigen::Index i = 0; i < z.rows(); ++i) z(i, j) = rng_.next_gaussian();
    return Ensemble{factor_ * z};
}

Vector GaussianSampler::sample_vector() {
    Vector z(factor_.cols());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng_.next_gaussian();
    return factor_ * z;
}

Matrix covariance_factor(const Matrix& covariance) {
    auto llt = chol_spd(covariance, 1e-12, "CovarianceNotPD");
    return llt.matrixL();
}

}  // namespace mfenkf
