#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mfenkf/linalg.hpp"

namespace mfenkf {

/// Observation operator y = h(x) + eta, eta ~ N(0, cov_obs). h is applied
/// column-wise to a matrix of states; linear_h optionally carries the matrix
/// H when the operator is linear (required by the shrinkage filter and the
/// exact-filter oracles).
struct ObservationModel {
    std::function<Matrix(const Matrix&)> h;
    Matrix cov_obs;   // m x m SPD
    Matrix linear_h;  // 0x0 when the operator is not (known to be) linear

    Eigen::Index dim() const { return cov_obs.rows(); }
    bool has_linear() const { return linear_h.size() > 0; }

    static ObservationModel linear(Matrix h_matrix, Matrix cov);
};

/// Distance metadata for the state components; localization needs it.
class Geometry {
public:
    virtual ~Geometry() = default;
    virtual double distance(int i, int j) const = 0;
    virtual int size() const = 0;
};

/// Points of a structured nx x ny grid, Euclidean distance in grid units.
class GridGeometry final : public Geometry {
public:
    GridGeometry(int nx, int ny) : nx_(nx), ny_(ny) {}
    double distance(int i, int j) const override;
    int size() const override { return nx_ * ny_; }

private:
    int nx_, ny_;
};

/// 1-D periodic ring of n points.
class RingGeometry final : public Geometry {
public:
    explicit RingGeometry(int n) : n_(n) {}
    double distance(int i, int j) const override;
    int size() const override { return n_; }

private:
    int n_;
};

/// Gaussian localization kernel rho(d) = exp(-d^2 / (2 radius^2)), radius in
/// grid units.
struct LocalizationKernel {
    double radius = 20.0;
    double operator()(double d) const;
};

/// Schur-product tapers for a gather-type observation set: state-to-obs
/// (n x m) and obs-to-obs (m x m) kernel matrices.
struct LocalizedTaper {
    Matrix state_obs;
    Matrix obs_obs;
};

/// Errors: NoGeometry when geom is null.
LocalizedTaper make_taper(const LocalizationKernel& kernel, const Geometry* geom,
                          const std::vector<int>& obs_state_indices);

}  // namespace mfenkf
