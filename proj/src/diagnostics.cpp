#include "mfenkf/diagnostics.hpp"

#include <cmath>

namespace mfenkf {

double spatiotemporal_rmse(const std::vector<Vector>& estimates,
                           const std::vector<Vector>& truths, int spinup) {
    require(estimates.size() == truths.size(), "ShapeMismatch",
            "estimate/truth sequence lengths differ");
    require(spinup >= 0 && static_cast<std::size_t>(spinup) < estimates.size(),
            "InvalidSpinup");
    double sum = 0.0;
    long count = 0;
    for (std::size_t t = static_cast<std::size_t>(spinup); t < estimates.size(); ++t) {
        require(estimates[t].size() == truths[t].size(), "ShapeMismatch");
        sum += (estimates[t] - truths[t]).squaredNorm();
        count += estimates[t].size();
    }
    return std::sqrt(sum / static_cast<double>(count));
}

int rank_tally(const Vector& ensemble_values, double truth, RngStream& rng) {
    require(ensemble_values.size() >= 1, "EmptyEnsemble");
    int below = 0, equal = 0;
    for (Eigen::Index i = 0; i < ensemble_values.size(); ++i) {
        if (ensemble_values(i) < truth)
            ++below;
        else if (ensemble_values(i) == truth)
            ++equal;
    }
    if (equal > 0) below += static_cast<int>(rng.next_below(static_cast<std::uint64_t>(equal) + 1));
    return below;
}

void RankHistogram::add(int rank) {
    require(rank >= 0 && static_cast<std::size_t>(rank) < bins.size(), "IndexOutOfRange",
            "rank outside histogram");
    ++bins[static_cast<std::size_t>(rank)];
}

long RankHistogram::total() const {
    long t = 0;
    for (long b : bins) t += b;
    return t;
}

double kl_divergence(const Vector& p, const Vector& q) {
    require(p.size() == q.size(), "ShapeMismatch", "histogram bin counts differ");
    require(p.size() >= 1, "UnsupportedBin", "empty histograms");
    const double psum = p.sum(), qsum = q.sum();
    require(psum > 0.0 && qsum > 0.0, "UnsupportedBin", "zero-mass histogram");
    double kl = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        require(p(i) >= 0.0 && q(i) >= 0.0, "UnsupportedBin", "negative bin");
        const double pi = p(i) / psum;
        if (pi == 0.0) continue;
        const double qi = q(i) / qsum;
        require(qi > 0.0, "UnsupportedBin", "zero q bin with positive p mass");
        kl += pi * std::log(pi / qi);
    }
    return kl;
}

Vector laplace_smooth(const std::vector<long>& counts) {
    Vector p(static_cast<Eigen::Index>(counts.size()));
    double total = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        p(static_cast<Eigen::Index>(i)) = static_cast<double>(counts[i]) + 1.0;
        total += p(static_cast<Eigen::Index>(i));
    }
    return p / total;
}

double kl_to_uniform(const RankHistogram& hist) {
    const auto bins = static_cast<Eigen::Index>(hist.bins.size());
    const Vector uniform = Vector::Constant(bins, 1.0 / static_cast<double>(bins));
    return kl_divergence(uniform, laplace_smooth(hist.bins));
}

}  // namespace mfenkf
