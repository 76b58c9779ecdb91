#pragma once

#include <vector>

#include "mfenkf/linalg.hpp"
#include "mfenkf/rng.hpp"

namespace mfenkf {

/// RMSE over all components and post-spinup times.
double spatiotemporal_rmse(const std::vector<Vector>& estimates,
                           const std::vector<Vector>& truths, int spinup);

/// Count of ensemble values strictly below truth; ties placed uniformly at
/// random among the equal values. Result in [0, N].
int rank_tally(const Vector& ensemble_values, double truth, RngStream& rng);

/// Rank histogram accumulator for an N-member ensemble (N+1 bins).
struct RankHistogram {
    std::vector<long> bins;

    explicit RankHistogram(int members) : bins(static_cast<std::size_t>(members) + 1, 0) {}
    void add(int rank);
    long total() const;
};

/// Discrete KL divergence sum p log(p/q) in nats with 0 log 0 = 0; inputs
/// are nonnegative weights, normalized internally.
/// Errors: UnsupportedBin when q has a zero bin with p > 0.
double kl_divergence(const Vector& p, const Vector& q);

/// Add-one smoothing of histogram counts, normalized to probabilities.
Vector laplace_smooth(const std::vector<long>& counts);

/// KL of the ideal uniform distribution from the (smoothed) observed rank
/// histogram.
double kl_to_uniform(const RankHistogram& hist);

}  // namespace mfenkf
