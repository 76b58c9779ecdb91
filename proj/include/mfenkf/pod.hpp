#pragma once

#include <string>
#include <vector>

#include "mfenkf/projection.hpp"
#include "mfenkf/qge.hpp"

namespace mfenkf::pod {

using qge::Grid2D;
using qge::PoissonSolver;
using qge::QgeParams;
using qge::QgeState;

/// Diagonal 2-D composite Simpson quadrature weights over the interior grid
/// (boundary nodes carry zero data). Odd interior counts give pure Simpson;
/// otherwise the last panel falls back to the trapezoid rule.
Vector simpson_weights(const Grid2D& g);

/// Simpson-weighted inner product of two interior fields.
double weighted_dot(const Vector& a, const Vector& b, const Vector& w);

/// FOM vorticity snapshots along one trajectory plus the quadrature weights.
struct SnapshotSet {
    Matrix snapshots;  // n x M, one snapshot per column
    std::vector<double> times;
    Vector weights;  // Simpson diagonal
    Grid2D grid;

    Eigen::Index count() const { return snapshots.cols(); }
};

struct SnapshotRunSpec {
    QgeParams params;
    QgeState initial;
    double warmup = 0.0;   // model time discarded before the first snapshot
    double spacing = 0.25; // model time between snapshots
    int count = 2;
    StepController ctrl;
};

SnapshotSet collect_snapshots(const SnapshotRunSpec& spec, const PoissonSolver& solver);

/// Method of snapshots: eigen-decompose the Simpson-weighted Gram matrix and
/// reconstruct D-orthonormal spatial modes phi_i = lambda_i^{-1/2} sum_j
/// v_ij w_j. eigenvalues holds the full nonincreasing spectrum.
struct PodBasis {
    Matrix modes;        // n x r, D-orthonormal
    Vector eigenvalues;  // length M, nonincreasing
};

PodBasis pod_basis(const SnapshotSet& s, int r);  // error: RankDeficient

/// Energy fraction captured by the first r modes (eigenvalue form equals the
/// window form evaluated on the snapshot set itself).
double relative_kinetic_energy(const Vector& eigenvalues, int r);

/// POD-Galerkin reduced model a_t = b + A a - a^T B a (see tensors below; the
/// quadratic sign follows from the Jacobian antisymmetry).
struct GalerkinRom {
    int r = 0;
    Matrix vorticity_modes;       // n x r
    Matrix streamfunction_modes;  // n x r, -lap(stream_i) = vort_i
    Vector b;                     // r
    Matrix a;                     // r x r
    std::vector<Matrix> b_tensor; // r slices of r x r: [B]_i(m,n)
    Vector eigenvalues;           // full spectrum from the basis build
    Grid2D grid;
    Vector weights;               // Simpson diagonal
    QgeParams params;
};

/// Quadrature assembly of the Galerkin tensors:
/// [b]_i = <F, phi_i>/Ro, [A]_ij = <d(stream_j)/dx, phi_i>/Ro -
/// <grad phi_j, grad phi_i>/Re, [B]_imn = -<J(phi_m, stream_n), phi_i>.
void galerkin_tensors(const Matrix& vorticity_modes, const Matrix& streamfunction_modes,
                      const QgeParams& params, const Grid2D& grid, const Vector& weights,
                      Vector* b, Matrix* a, std::vector<Matrix>* b_tensor,
                      const Vector* forcing_override = nullptr);

GalerkinRom build_galerkin_rom(const SnapshotSet& snaps, int r, const QgeParams& params,
                               const PoissonSolver& solver);

Vector rom_rhs(const Vector& coeffs, const GalerkinRom& rom);

/// Reduced-space energy fraction of a field window captured by the first r
/// modes of the ROM basis.
double relative_kinetic_energy(const GalerkinRom& rom, int r, const Matrix& window);

/// Lift/restriction pair of the streamfunction-consistent operators with
/// M = lap^T D lap supplied in factored form.
ProjectionPair build_projection_pair(const GalerkinRom& rom, const PoissonSolver& solver);

/// Projection onto the first r coefficients of a ROM state (nested ladder
/// levels share one basis, so the inner product is Euclidean).
ProjectionPair nested_coefficient_pair(int r_parent, int r_child);

/// Basis archive: modes, eigenvalues, tensors, grid metadata and (optionally)
/// the raw snapshots in one portable container.
void save_rom(const std::string& path, const GalerkinRom& rom,
              const Matrix* snapshots = nullptr);
GalerkinRom load_rom(const std::string& path, Matrix* snapshots_out = nullptr);

}  // namespace mfenkf::pod
