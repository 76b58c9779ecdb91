#pragma once

#include <memory>
#include <vector>

#include <Eigen/SparseCholesky>

#include "mfenkf/ensemble.hpp"
#include "mfenkf/linalg.hpp"
#include "mfenkf/ode.hpp"

namespace mfenkf::qge {

/// Structured interior grid on Omega = [0,1] x [0,2] with homogeneous
/// Dirichlet boundaries. Fields store interior values only, row-major with x
/// fastest: index = iy * nx + ix.
struct Grid2D {
    int nx = 0;  // interior points in x
    int ny = 0;  // interior points in y
    double hx = 0.0;
    double hy = 0.0;

    static Grid2D make(int nx, int ny);
    int size() const { return nx * ny; }
    int index(int ix, int iy) const { return iy * nx + ix; }
    double x(int ix) const { return (ix + 1) * hx; }
    double y(int iy) const { return (iy + 1) * hy; }
};

struct QgeParams {
    double reynolds = 450.0;
    double rossby = 0.0036;
};

/// Vorticity field plus model time.
struct QgeState {
    Vector omega;
    double t = 0.0;
};

/// 24 hours expressed in model time units.
inline constexpr double kDayTimeUnits = 0.0109;

/// Precomputed sparse Cholesky of the SPD 5-point negative Laplacian with
/// Dirichlet conditions; solve() returns psi with -lap(psi) = omega and
/// enforces the 1e-10 relative residual bound on every solve.
class PoissonSolver {
public:
    explicit PoissonSolver(const Grid2D& grid);

    Vector solve(const Vector& omega) const;  // error: PoissonResidual
    Matrix solve_cols(const Matrix& omega) const;

    const SparseMatrix& neg_laplacian() const { return a_; }
    const Grid2D& grid() const { return grid_; }

private:
    Grid2D grid_;
    SparseMatrix a_;
    Eigen::SimplicialLLT<SparseMatrix> llt_;
};

/// Second-order Arakawa discretization of J(psi, omega) = psi_y omega_x -
/// psi_x omega_y; conserves the discrete mean, energy and enstrophy sums.
Vector arakawa_jacobian(const Vector& psi, const Vector& omega, const Grid2D& g);

/// Centered first derivatives and 5-point Laplacian, ghost values zero.
Vector d_dx(const Vector& f, const Grid2D& g);
Vector d_dy(const Vector& f, const Grid2D& g);
Vector laplacian(const Vector& f, const Grid2D& g);

/// Double-gyre forcing F = sin(pi (y - 1)) sampled on the grid.
Vector forcing_field(const Grid2D& g);

/// Vorticity tendency -J(psi,omega) + psi_x/Ro + lap(omega)/Re + F/Ro with
/// psi from the Poisson solver.
Vector qge_rhs(const QgeState& state, const QgeParams& params, const PoissonSolver& solver);

/// Advance to t_end with the adaptive embedded RK pair. step_hint, when
/// given, seeds the initial step and receives the last accepted one.
QgeState integrate(const QgeState& state, const QgeParams& params,
                   const PoissonSolver& solver, double t_end,
                   StepController ctrl = {}, double* step_hint = nullptr);

/// Full-weighting restriction onto a coarser grid; (nx+1, ny+1) of the fine
/// grid must be power-of-two multiples of the coarse one.
Vector restrict_to_fom(const Vector& fine_field, const Grid2D& fine, const Grid2D& coarse);

/// Equally spaced flattened indices, constant stride.
std::vector<int> equally_spaced_indices(int state_size, int count);

/// Vorticity values at the given indices plus one N(0, cov) draw per call;
/// pass nullptr for noise-free gathering.
Vector observe(const QgeState& state, const std::vector<int>& indices,
               GaussianSampler* sampler);

/// Snapshot file I/O: flat binary float64 row-major with an (nx, ny, t)
/// header, plus CSV export for plotting.
void save_field(const std::string& path, const Vector& field, const Grid2D& g, double t);
QgeState load_field(const std::string& path, Grid2D* grid_out);
void export_field_csv(const std::string& path, const Vector& field, const Grid2D& g);

}  // namespace mfenkf::qge
