#pragma once

#include <cstdint>

#include "mfenkf/linalg.hpp"
#include "mfenkf/rng.hpp"

namespace mfenkf {

/// An ensemble of N model states, one per column.
struct Ensemble {
    Matrix members;  // dim x count

    Ensemble() = default;
    explicit Ensemble(Matrix m) : members(std::move(m)) {}

    Eigen::Index dim() const { return members.rows(); }
    Eigen::Index count() const { return members.cols(); }
};

/// Mean-centered member deviations with the 1/sqrt(N-1) scale baked in, so
/// the sample covariance is A * A^T with no further scaling.
struct AnomalyMatrix {
    Matrix anomalies;  // dim x count, rows sum to ~0

    Eigen::Index dim() const { return anomalies.rows(); }
    Eigen::Index count() const { return anomalies.cols(); }
};

Vector empirical_mean(const Ensemble& ens);               // error: EmptyEnsemble
AnomalyMatrix anomalies(const Ensemble& ens);             // error: InsufficientMembers
Matrix empirical_cov(const AnomalyMatrix& a, const AnomalyMatrix& b);  // ShapeMismatch
AnomalyMatrix inflate(const AnomalyMatrix& a, double alpha);           // InvalidInflation

/// Rebuild members from mean and scaled anomalies: mean 1^T + sqrt(N-1) A.
Ensemble assemble(const Vector& mean, const AnomalyMatrix& a);

/// Seeded N(0, L L^T) sampler. Same seed/stream => bit-identical output.
/// Single-owner mutable state; use one per thread or serialize externally.
class GaussianSampler {
public:
    GaussianSampler(Matrix covariance_factor, std::uint64_t seed,
                    std::uint64_t stream = 0, std::uint64_t substream = 0)
        : factor_(std::move(covariance_factor)), rng_(seed, stream, substream) {}

    /// Columns are i.i.d. N(0, L L^T) draws.
    Ensemble sample(Eigen::Index count);
    Vector sample_vector();

    Eigen::Index dim() const { return factor_.rows(); }
    RngStream& rng() { return rng_; }

private:
    Matrix factor_;  // lower-triangular L
    RngStream rng_;
};

/// Lower Cholesky factor of an SPD covariance, with the ensemble-stats
/// jitter policy (1e-12 * trace/n on failure). Error: CovarianceNotPD.
Matrix covariance_factor(const Matrix& covariance);

}  // namespace mfenkf
