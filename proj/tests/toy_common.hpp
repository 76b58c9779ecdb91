#pragma once

// Analytic linear-Gaussian test system shared by the filter tests and the
// acceptance suite. The prior covariance is block-structured along the
// projection subspace, so the halved projection gain is exactly the
// ancillary-optimal control-variate gain and the total-variate theory
// applies with closed-form covariances.

#include <memory>

#include "mfenkf/ensemble.hpp"
#include "mfenkf/mfenkf.hpp"
#include "mfenkf/projection.hpp"

namespace mfenkf::toy {

struct LinearGaussianToy {
    int n = 0, r = 0, m = 0;
    Matrix p;       // prior covariance, block along the subspace
    Matrix cu;      // reduced covariance Phi* P Phi*^T
    Matrix phi;     // orthonormal columns, M = I
    Matrix h;       // linear observation operator
    Matrix r_obs;   // observation covariance
    Vector truth;   // prior mean
    std::shared_ptr<const ProjectionPair> proj;

    static LinearGaussianToy make(int n, int r, int m, std::uint64_t seed) {
        RngStream rng(seed);
        auto randm = [&](int rows, int cols) {
            Matrix w(rows, cols);
            for (int j = 0; j < cols; ++j)
                for (int i = 0; i < rows; ++i) w(i, j) = rng.next_gaussian();
            return w;
        };
        LinearGaussianToy toy;
        toy.n = n;
        toy.r = r;
        toy.m = m;
        Eigen::HouseholderQR<Matrix> qr(randm(n, n));
        const Matrix q = qr.householderQ();
        toy.phi = q.leftCols(r);
        Vector lambda(r);
        for (int i = 0; i < r; ++i) lambda(i) = 2.0 / (1.0 + i);
        const Matrix complement = Matrix::Identity(n, n) - toy.phi * toy.phi.transpose();
        const Matrix gw = randm(n, n);
        toy.p = toy.phi * lambda.asDiagonal() * toy.phi.transpose() +
                complement * (0.4 * (gw * gw.transpose() / n) +
                              0.3 * Matrix::Identity(n, n)) *
                    complement.transpose();
        toy.cu = lambda.asDiagonal();
        toy.h = randm(m, n);
        const Matrix rw = randm(m, m);
        toy.r_obs = 0.5 * (rw * rw.transpose() / m) + 0.5 * Matrix::Identity(m, m);
        toy.truth = randm(n, 1);
        toy.proj = std::make_shared<ProjectionPair>(
            ProjectionPair::from_basis(toy.phi, Matrix::Identity(n, n)));
        return toy;
    }

    // covariance of the total variate z = x - (phi/2)(uhat - u)
    Matrix cov_z() const {
        const Matrix gz = gz_block();
        return gz * sigma_w() * gz.transpose();
    }
    Matrix kalman_gain_x() const {
        const Matrix s = h * p * h.transpose() + r_obs;
        return s.llt().solve(h * p.transpose()).transpose();
    }
    Matrix kalman_gain_z() const {
        const Matrix cz = cov_z();
        const Matrix s = h * cz * h.transpose() + r_obs;
        return s.llt().solve(h * cz.transpose()).transpose();
    }
    // perturbed-observation analysis covariances under a given gain
    Matrix cov_xa(const Matrix& k) const {
        const Matrix ikh = Matrix::Identity(n, n) - k * h;
        return ikh * p * ikh.transpose() + k * r_obs * k.transpose();
    }
    Matrix cov_za(const Matrix& k) const {
        const Matrix ikh = Matrix::Identity(n, n) - k * h;
        return ikh * cov_z() * ikh.transpose() + k * r_obs * k.transpose();
    }

    // one sampled forecast triple: pairwise (x, phi* x) plus an independent
    // ancillary stream with the same reduced mean and covariance
    TotalVariateTriple sample_triple(int n_x, int n_u, RngStream& rng) const {
        const Matrix lp = p.llt().matrixL();
        const Matrix lu = cu.llt().matrixL();
        TotalVariateTriple triple;
        triple.proj = proj;
        triple.principal.members.resize(n, n_x);
        Vector w(n);
        for (int k = 0; k < n_x; ++k) {
            for (int i = 0; i < n; ++i) w(i) = rng.next_gaussian();
            triple.principal.members.col(k) = truth + lp * w;
        }
        triple.control.members = proj->restrict_cols(triple.principal.members);
        triple.ancillary.members.resize(r, n_u);
        Vector wr(r);
        const Vector mean_u = proj->restrict(truth);
        for (int k = 0; k < n_u; ++k) {
            for (int i = 0; i < r; ++i) wr(i) = rng.next_gaussian();
            triple.ancillary.members.col(k) = mean_u + lu * wr;
        }
        return triple;
    }

    Vector sample_observation(RngStream& rng) const {
        const Matrix lr = Matrix(r_obs.llt().matrixL());
        Vector w(m);
        for (int i = 0; i < m; ++i) w(i) = rng.next_gaussian();
        return h * truth + lr * w;
    }

private:
    Matrix sigma_w() const {
        Matrix sw = Matrix::Zero(n + 2 * r, n + 2 * r);
        sw.topLeftCorner(n, n) = p;
        sw.block(0, n, n, r) = p * phi;  // Cov(x, uhat) with phi* = phi^T
        sw.block(n, 0, r, n) = phi.transpose() * p;
        sw.block(n, n, r, r) = cu;
        sw.block(n + r, n + r, r, r) = cu;
        return sw;
    }
    Matrix gz_block() const {
        Matrix gz = Matrix::Zero(n, n + 2 * r);
        gz.leftCols(n).setIdentity();
        gz.block(0, n, n, r) = -0.5 * phi;
        gz.block(0, n + r, n, r) = 0.5 * phi;
        return gz;
    }
};

/// Deterministic ensemble whose sample mean and covariance are exactly the
/// given moments (columns mean +- c L_k).
inline Ensemble exact_moment_ensemble(const Vector& mean, const Matrix& cov) {
    const auto n = mean.size();
    const Matrix l = Matrix(cov.llt().matrixL());
    const auto count = 2 * n;
    const double c = std::sqrt((count - 1) / 2.0);
    Ensemble e;
    e.members.resize(n, count);
    for (Eigen::Index k = 0; k < n; ++k) {
        e.members.col(2 * k) = mean + c * l.col(k);
        e.members.col(2 * k + 1) = mean - c * l.col(k);
    }
    return e;
}

}  // namespace mfenkf::toy
