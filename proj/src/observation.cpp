#include "mfenkf/observation.hpp"

#include <cmath>

namespace mfenkf {

ObservationModel ObservationModel::linear(Matrix h_matrix, Matrix cov) {
    ObservationModel obs;
    obs.linear_h = std::move(h_matrix);
    obs.cov_obs = std::move(cov);
    require(obs.linear_h.rows() == obs.cov_obs.rows(), "ShapeMismatch",
            "H rows must match observation covariance");
    const Matrix h = obs.linear_h;
    obs.h = [h](const Matrix& states) { return Matrix(h * states); };
    return obs;
}

double GridGeometry::distance(int i, int j) const {
    const int ix1 = i % nx_, iy1 = i / nx_;
    const int ix2 = j % nx_, iy2 = j / nx_;
    const double dx = ix1 - ix2, dy = iy1 - iy2;
    return std::sqrt(dx * dx + dy * dy);
}

double RingGeometry::distance(int i, int j) const {
    int d = std::abs(i - j);
    d = std::min(d, n_ - d);
    return d;
}

double LocalizationKernel::operator()(double d) const {
    require(radius > 0.0, "InvalidLocalizationRadius");
    const double z = d / radius;
    return std::exp(-0.5 * z * z);
}

LocalizedTaper make_taper(const LocalizationKernel& kernel, const Geometry* geom,
                          const std::vector<int>& obs_state_indices) {
    require(geom != nullptr, "NoGeometry", "state components carry no coordinates");
    const int n = geom->size();
    const int m = static_cast<int>(obs_state_indices.size());
    LocalizedTaper taper;
    taper.state_obs.resize(n, m);
    for (int j = 0; j < m; ++j) {
        const int oj = obs_state_indices[static_cast<std::size_t>(j)];
        require(oj >= 0 && oj < n, "IndexOutOfRange", "observation index");
        for (int i = 0; i < n; ++i)
            taper.state_obs(i, j) = kernel(geom->distance(i, oj));
    }
    taper.obs_obs.resize(m, m);
    for (int j = 0; j < m; ++j)
        for (int i = 0; i < m; ++i)
            taper.obs_obs(i, j) = taper.state_obs(obs_state_indices[static_cast<std::size_t>(i)], j);
    return taper;
}

}  // namespace mfenkf
