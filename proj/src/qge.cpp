#include "mfenkf/qge.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

namespace mfenkf::qge {
namespace {

// Copy an interior field into an (nx+2)x(ny+2) scratch array with the zero
// Dirichlet ring, so stencil loops need no boundary branches.
void pad(const Vector& f, const Grid2D& g, std::vector<double>& out) {
    const int pnx = g.nx + 2;
    out.assign(static_cast<std::size_t>(pnx) * (g.ny + 2), 0.0);
    for (int iy = 0; iy < g.ny; ++iy)
        for (int ix = 0; ix < g.nx; ++ix)
            out[static_cast<std::size_t>(iy + 1) * pnx + (ix + 1)] = f[g.index(ix, iy)];
}

}  // namespace

Grid2D Grid2D::make(int nx, int ny) {
    require(nx >= 3 && ny >= 3, "InvalidGrid", "need at least 3 interior points");
    Grid2D g;
    g.nx = nx;
    g.ny = ny;
    g.hx = 1.0 / (nx + 1);
    g.hy = 2.0 / (ny + 1);
    return g;
}

PoissonSolver::PoissonSolver(const Grid2D& grid) : grid_(grid) {
    const int n = grid.size();
    const double cx = 1.0 / (grid.hx * grid.hx);
    const double cy = 1.0 / (grid.hy * grid.hy);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(5) * n);
    for (int iy = 0; iy < grid.ny; ++iy) {
        for (int ix = 0; ix < grid.nx; ++ix) {
            const int k = grid.index(ix, iy);
            trip.emplace_back(k, k, 2.0 * cx + 2.0 * cy);
            if (ix > 0) trip.emplace_back(k, grid.index(ix - 1, iy), -cx);
            if (ix < grid.nx - 1) trip.emplace_back(k, grid.index(ix + 1, iy), -cx);
            if (iy > 0) trip.emplace_back(k, grid.index(ix, iy - 1), -cy);
            if (iy < grid.ny - 1) trip.emplace_back(k, grid.index(ix, iy + 1), -cy);
        }
    }
    a_.resize(n, n);
    a_.setFromTriplets(trip.begin(), trip.end());
    a_.makeCompressed();
    llt_.compute(a_);
    require(llt_.info() == Eigen::Success, "PoissonFactorization",
            "sparse Cholesky of the Laplacian failed");
}

Vector PoissonSolver::solve(const Vector& omega) const {
    require(omega.size() == grid_.size(), "ShapeMismatch", "poisson rhs size");
    Vector psi = llt_.solve(omega);
    const double rhs_norm = omega.norm();
    const double res = (a_ * psi - omega).norm();
    require(res <= 1e-10 * rhs_norm || (rhs_norm == 0.0 && res == 0.0),
            "PoissonResidual", "relative residual " + std::to_string(res / rhs_norm));
    return psi;
}

Matrix PoissonSolver::solve_cols(const Matrix& omega) const {
    Matrix psi(omega.rows(), omega.cols());
    for (Eigen::Index j = 0; j < omega.cols(); ++j) psi.col(j) = solve(omega.col(j));
    return psi;
}

Vector arakawa_jacobian(const Vector& psi, const Vector& omega, const Grid2D& g) {
    require(psi.size() == g.size() && omega.size() == g.size(), "ShapeMismatch");
    // canonical Arakawa average of the J1/J2/J3 forms for a_x b_y - a_y b_x,
    // evaluated with a = omega, b = psi so the result is psi_y w_x - psi_x w_y
    static thread_local std::vector<double> ap, bp;
    pad(omega, g, ap);
    pad(psi, g, bp);
    const int pnx = g.nx + 2;
    const double fac = 1.0 / (12.0 * g.hx * g.hy);
    Vector out(g.size());
    for (int iy = 1; iy <= g.ny; ++iy) {
        const std::size_t row = static_cast<std::size_t>(iy) * pnx;
        const std::size_t rn = row + pnx;  // iy+1
        const std::size_t rs = row - pnx;  // iy-1
        for (int ix = 1; ix <= g.nx; ++ix) {
            const std::size_t c = row + ix;
            const double j1 = (ap[c + 1] - ap[c - 1]) * (bp[rn + ix] - bp[rs + ix]) -
                              (ap[rn + ix] - ap[rs + ix]) * (bp[c + 1] - bp[c - 1]);
            const double j2 = ap[c + 1] * (bp[rn + ix + 1] - bp[rs + ix + 1]) -
                              ap[c - 1] * (bp[rn + ix - 1] - bp[rs + ix - 1]) -
                              ap[rn + ix] * (bp[rn + ix + 1] - bp[rn + ix - 1]) +
                              ap[rs + ix] * (bp[rs + ix + 1] - bp[rs + ix - 1]);
            const double j3 = ap[rn + ix + 1] * (bp[rn + ix] - bp[c + 1]) -
                              ap[rs + ix - 1] * (bp[c - 1] - bp[rs + ix]) -
                              ap[rn + ix - 1] * (bp[rn + ix] - bp[c - 1]) +
                              ap[rs + ix + 1] * (bp[c + 1] - bp[rs + ix]);
            out[g.index(ix - 1, iy - 1)] = fac * (j1 + j2 + j3);
        }
    }
    return out;
}

Vector d_dx(const Vector& f, const Grid2D& g) {
    require(f.size() == g.size(), "ShapeMismatch");
    static thread_local std::vector<double> fp;
    pad(f, g, fp);
    const int pnx = g.nx + 2;
    const double c = 0.5 / g.hx;
    Vector out(g.size());
    for (int iy = 1; iy <= g.ny; ++iy) {
        const std::size_t row = static_cast<std::size_t>(iy) * pnx;
        for (int ix = 1; ix <= g.nx; ++ix)
            out[g.index(ix - 1, iy - 1)] = c * (fp[row + ix + 1] - fp[row + ix - 1]);
    }
    return out;
}

Vector d_dy(const Vector& f, const Grid2D& g) {
    require(f.size() == g.size(), "ShapeMismatch");
    static thread_local std::vector<double> fp;
    pad(f, g, fp);
    const int pnx = g.nx + 2;
    const double c = 0.5 / g.hy;
    Vector out(g.size());
    for (int iy = 1; iy <= g.ny; ++iy) {
        const std::size_t rn = static_cast<std::size_t>(iy + 1) * pnx;
        const std::size_t rs = static_cast<std::size_t>(iy - 1) * pnx;
        for (int ix = 1; ix <= g.nx; ++ix)
            out[g.index(ix - 1, iy - 1)] = c * (fp[rn + ix] - fp[rs + ix]);
    }
    return out;
}

Vector laplacian(const Vector& f, const Grid2D& g) {
    require(f.size() == g.size(), "ShapeMismatch");
    static thread_local std::vector<double> fp;
    pad(f, g, fp);
    const int pnx = g.nx + 2;
    const double cx = 1.0 / (g.hx * g.hx);
    const double cy = 1.0 / (g.hy * g.hy);
    Vector out(g.size());
    for (int iy = 1; iy <= g.ny; ++iy) {
        const std::size_t row = static_cast<std::size_t>(iy) * pnx;
        const std::size_t rn = row + pnx;
        const std::size_t rs = row - pnx;
        for (int ix = 1; ix <= g.nx; ++ix) {
            const std::size_t c = row + ix;
            out[g.index(ix - 1, iy - 1)] = cx * (fp[c + 1] - 2.0 * fp[c] + fp[c - 1]) +
                                           cy * (fp[rn + ix] - 2.0 * fp[c] + fp[rs + ix]);
        }
    }
    return out;
}

Vector forcing_field(const Grid2D& g) {
    Vector f(g.size());
    for (int iy = 0; iy < g.ny; ++iy) {
        const double v = std::sin(M_PI * (g.y(iy) - 1.0));
        for (int ix = 0; ix < g.nx; ++ix) f[g.index(ix, iy)] = v;
    }
    return f;
}

Vector qge_rhs(const QgeState& state, const QgeParams& params, const PoissonSolver& solver) {
    const Grid2D& g = solver.grid();
    const Vector psi = solver.solve(state.omega);
    Vector rhs = -arakawa_jacobian(psi, state.omega, g);
    rhs += (1.0 / params.rossby) * d_dx(psi, g);
    rhs += (1.0 / params.reynolds) * laplacian(state.omega, g);
    rhs += (1.0 / params.rossby) * forcing_field(g);
    return rhs;
}

QgeState integrate(const QgeState& state, const QgeParams& params,
                   const PoissonSolver& solver, double t_end, StepController ctrl,
                   double* step_hint) {
    require(t_end >= state.t, "InvalidTimeSpan", "t_end before state time");
    if (t_end == state.t) return state;
    const Grid2D& g = solver.grid();
    const Vector forcing = (1.0 / params.rossby) * forcing_field(g);
    const double inv_re = 1.0 / params.reynolds;
    const double inv_ro = 1.0 / params.rossby;
    auto f = [&](double, const Vector& w) -> Vector {
        const Vector psi = solver.solve(w);
        Vector rhs = -arakawa_jacobian(psi, w, g);
        rhs += inv_ro * d_dx(psi, g);
        rhs += inv_re * laplacian(w, g);
        rhs += forcing;
        return rhs;
    };
    if (step_hint && *step_hint > 0.0) ctrl.initial_step = *step_hint;
    OdeResult res = integrate_adaptive(f, state.omega, state.t, t_end, ctrl);
    if (step_hint)
        *step_hint = (t_end - state.t) / std::max(1, res.accepted_steps);
    return QgeState{std::move(res.y), t_end};
}

Vector restrict_to_fom(const Vector& fine_field, const Grid2D& fine, const Grid2D& coarse) {
    require((fine.nx + 1) % (coarse.nx + 1) == 0 && (fine.ny + 1) % (coarse.ny + 1) == 0,
            "IncompatibleGrids", "coarse grid does not nest in fine grid");
    int rx = (fine.nx + 1) / (coarse.nx + 1);
    int ry = (fine.ny + 1) / (coarse.ny + 1);
    require(rx == ry && rx >= 1 && (rx & (rx - 1)) == 0, "IncompatibleGrids",
            "grid ratio must be a power of two");
    Vector f = fine_field;
    Grid2D cur = fine;
    while (rx > 1) {
        Grid2D next = Grid2D::make((cur.nx + 1) / 2 - 1, (cur.ny + 1) / 2 - 1);
        static thread_local std::vector<double> fp;
        pad(f, cur, fp);
        const int pnx = cur.nx + 2;
        Vector g(next.size());
        for (int iy = 0; iy < next.ny; ++iy) {
            const int fy = 2 * iy + 1;  // fine interior index of the coarse point
            const std::size_t row = static_cast<std::size_t>(fy + 1) * pnx;
            const std::size_t rn = row + pnx;
            const std::size_t rs = row - pnx;
            for (int ix = 0; ix < next.nx; ++ix) {
                const int fx = 2 * ix + 2;  // padded x index
                g[next.index(ix, iy)] =
                    (4.0 * fp[row + fx] +
                     2.0 * (fp[row + fx + 1] + fp[row + fx - 1] + fp[rn + fx] + fp[rs + fx]) +
                     fp[rn + fx + 1] + fp[rn + fx - 1] + fp[rs + fx + 1] + fp[rs + fx - 1]) /
                    16.0;
            }
        }
        f = std::move(g);
        cur = next;
        rx /= 2;
    }
    return f;
}

std::vector<int> equally_spaced_indices(int state_size, int count) {
    require(count >= 1 && count <= state_size, "InvalidObservationCount");
    const int stride = state_size / count;
    std::vector<int> idx(count);
    for (int k = 0; k < count; ++k) idx[k] = stride / 2 + k * stride;
    require(idx.back() < state_size, "InvalidObservationCount");
    return idx;
}

Vector observe(const QgeState& state, const std::vector<int>& indices,
               GaussianSampler* sampler) {
    Vector y(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t k = 0; k < indices.size(); ++k) {
        require(indices[k] >= 0 && indices[k] < state.omega.size(), "IndexOutOfRange");
        y[static_cast<Eigen::Index>(k)] = state.omega[indices[k]];
    }
    if (sampler) {
        require(sampler->dim() == y.size(), "ShapeMismatch", "observation noise dim");
        y += sampler->sample_vector();
    }
    return y;
}

void save_field(const std::string& path, const Vector& field, const Grid2D& g, double t) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "FileOpenFailed", path);
    const std::int32_t nx = g.nx, ny = g.ny;
    out.write(reinterpret_cast<const char*>(&nx), sizeof(nx));
    out.write(reinterpret_cast<const char*>(&ny), sizeof(ny));
    out.write(reinterpret_cast<const char*>(&t), sizeof(t));
    out.write(reinterpret_cast<const char*>(field.data()),
              static_cast<std::streamsize>(sizeof(double) * field.size()));
}

QgeState load_field(const std::string& path, Grid2D* grid_out) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "FileOpenFailed", path);
    std::int32_t nx = 0, ny = 0;
    double t = 0.0;
    in.read(reinterpret_cast<char*>(&nx), sizeof(nx));
    in.read(reinterpret_cast<char*>(&ny), sizeof(ny));
    in.read(reinterpret_cast<char*>(&t), sizeof(t));
    require(static_cast<bool>(in) && nx >= 3 && ny >= 3, "ArchiveCorrupt", path);
    QgeState st;
    st.t = t;
    st.omega.resize(static_cast<Eigen::Index>(nx) * ny);
    in.read(reinterpret_cast<char*>(st.omega.data()),
            static_cast<std::streamsize>(sizeof(double) * st.omega.size()));
    require(static_cast<bool>(in), "ArchiveCorrupt", path);
    if (grid_out) *grid_out = Grid2D::make(nx, ny);
    return st;
}

void export_field_csv(const std::string& path, const Vector& field, const Grid2D& g) {
    std::ofstream out(path);
    require(static_cast<bool>(out), "FileOpenFailed", path);
    out << "x,y,value\n";
    char buf[96];
    for (int iy = 0; iy < g.ny; ++iy)
        for (int ix = 0; ix < g.nx; ++ix) {
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", g.x(ix), g.y(iy),
                          field[g.index(ix, iy)]);
            out << buf;
        }
}

}  // namespace mfenkf::qge
