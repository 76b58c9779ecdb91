#include "mfenkf/pod.hpp"

#include <algorithm>
#include <cmath>

#include "mfenkf/archive.hpp"

namespace mfenkf::pod {
namespace {

// 1-D composite Simpson weights on the interior nodes of [0, L] with
// (count+1) panels; boundary node data is zero so only interior weights are
// returned. Even panel counts give pure Simpson, otherwise the last panel
// uses the trapezoid rule.
std::vector<double> simpson_1d(int count, double h) {
    const int panels = count + 1;
    std::vector<double> w(static_cast<std::size_t>(count), 0.0);
    const int simpson_panels = (panels % 2 == 0) ? panels : panels - 1;
    // nodes 0..simpson_panels, pattern 1,4,2,4,...,4,1 scaled by h/3
    for (int i = 1; i <= count && i < simpson_panels; ++i)
        w[static_cast<std::size_t>(i - 1)] = (i % 2 == 1) ? 4.0 * h / 3.0 : 2.0 * h / 3.0;
    if (simpson_panels <= count) {
        // endpoint weight of the Simpson block lands on an interior node
        w[static_cast<std::size_t>(simpson_panels - 1)] += h / 3.0;
        // trapezoid over the final panel
        w[static_cast<std::size_t>(simpson_panels - 1)] += h / 2.0;
        if (simpson_panels + 1 <= count) w[static_cast<std::size_t>(simpson_panels)] += h / 2.0;
    }
    return w;
}

}  // namespace

Vector simpson_weights(const Grid2D& g) {
    const auto wx = simpson_1d(g.nx, g.hx);
    const auto wy = simpson_1d(g.ny, g.hy);
    Vector w(g.size());
    for (int iy = 0; iy < g.ny; ++iy)
        for (int ix = 0; ix < g.nx; ++ix)
            w[g.index(ix, iy)] = wx[static_cast<std::size_t>(ix)] * wy[static_cast<std::size_t>(iy)];
    return w;
}

double weighted_dot(const Vector& a, const Vector& b, const Vector& w) {
    require(a.size() == b.size() && a.size() == w.size(), "ShapeMismatch");
    return (a.array() * w.array() * b.array()).sum();
}

SnapshotSet collect_snapshots(const SnapshotRunSpec& spec, const PoissonSolver& solver) {
    require(spec.count >= 2, "InsufficientSnapshots", "need at least two snapshots");
    require(spec.spacing > 0.0, "InvalidSnapshotSpacing");
    SnapshotSet set;
    set.grid = solver.grid();
    set.weights = simpson_weights(set.grid);
    set.snapshots.resize(set.grid.size(), spec.count);
    set.times.resize(static_cast<std::size_t>(spec.count));

    QgeState state = spec.initial;
    double hint = 0.0;
    if (spec.warmup > 0.0)
        state = qge::integrate(state, spec.params, solver, state.t + spec.warmup,
                               spec.ctrl, &hint);
    for (int k = 0; k < spec.count; ++k) {
        if (k > 0)
            state = qge::integrate(state, spec.params, solver, state.t + spec.spacing,
                                   spec.ctrl, &hint);
        set.snapshots.col(k) = state.omega;
        set.times[static_cast<std::size_t>(k)] = state.t;
    }
    return set;
}

PodBasis pod_basis(const SnapshotSet& s, int r) {
    const auto m = s.count();
    require(m >= 2, "InsufficientSnapshots");
    require(r >= 1 && r <= m, "RankDeficient", "requested more modes than snapshots");
    const Matrix weighted = s.weights.asDiagonal() * s.snapshots;
    const Matrix gram = s.snapshots.transpose() * weighted;  // M x M

    Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
    require(es.info() == Eigen::Success, "EigenDecompositionFailed");
    // ascending from Eigen; flip to nonincreasing
    Vector eigs = es.eigenvalues().reverse();
    Matrix vecs = es.eigenvectors().rowwise().reverse();

    const double lead = std::max(eigs(0), 0.0);
    require(lead > 0.0, "RankDeficient", "zero snapshot energy");
    require(eigs(r - 1) > 1e-12 * lead, "RankDeficient",
            "requested modes beyond numerical rank");

    PodBasis basis;
    basis.eigenvalues = eigs;
    basis.modes.resize(s.snapshots.rows(), r);
    for (int i = 0; i < r; ++i)
        basis.modes.col(i) = s.snapshots * vecs.col(i) / std::sqrt(eigs(i));
    return basis;
}

double relative_kinetic_energy(const Vector& eigenvalues, int r) {
    require(r >= 1 && r <= eigenvalues.size(), "RankDeficient");
    const double total = eigenvalues.array().max(0.0).sum();
    require(total > 0.0, "RankDeficient", "empty spectrum");
    return eigenvalues.head(r).array().max(0.0).sum() / total;
}

void galerkin_tensors(const Matrix& vorticity_modes, const Matrix& streamfunction_modes,
                      const QgeParams& params, const Grid2D& grid, const Vector& weights,
                      Vector* b, Matrix* a, std::vector<Matrix>* b_tensor,
                      const Vector* forcing_override) {
    const int r = static_cast<int>(vorticity_modes.cols());
    const double inv_ro = 1.0 / params.rossby;
    const double inv_re = 1.0 / params.reynolds;

    const Vector forcing = forcing_override ? *forcing_override : qge::forcing_field(grid);
    b->resize(r);
    for (int i = 0; i < r; ++i)
        (*b)(i) = inv_ro * weighted_dot(forcing, vorticity_modes.col(i), weights);

    // gradients of the vorticity modes for the viscous term
    Matrix gx(grid.size(), r), gy(grid.size(), r), sx(grid.size(), r);
    for (int j = 0; j < r; ++j) {
        gx.col(j) = qge::d_dx(vorticity_modes.col(j), grid);
        gy.col(j) = qge::d_dy(vorticity_modes.col(j), grid);
        sx.col(j) = qge::d_dx(streamfunction_modes.col(j), grid);
    }
    a->resize(r, r);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j)
            (*a)(i, j) = inv_ro * weighted_dot(sx.col(j), vorticity_modes.col(i), weights) -
                         inv_re * (weighted_dot(gx.col(j), gx.col(i), weights) +
                                   weighted_dot(gy.col(j), gy.col(i), weights));

    b_tensor->assign(static_cast<std::size_t>(r), Matrix::Zero(r, r));
    for (int m = 0; m < r; ++m) {
        for (int n = 0; n < r; ++n) {
            const Vector jac =
                qge::arakawa_jacobian(vorticity_modes.col(m), streamfunction_modes.col(n), grid);
            for (int i = 0; i < r; ++i)
                (*b_tensor)[static_cast<std::size_t>(i)](m, n) =
                    -weighted_dot(jac, vorticity_modes.col(i), weights);
        }
    }
}

GalerkinRom build_galerkin_rom(const SnapshotSet& snaps, int r, const QgeParams& params,
                               const PoissonSolver& solver) {
    PodBasis basis = pod_basis(snaps, r);
    GalerkinRom rom;
    rom.r = r;
    rom.grid = snaps.grid;
    rom.weights = snaps.weights;
    rom.params = params;
    rom.eigenvalues = basis.eigenvalues;
    rom.vorticity_modes = std::move(basis.modes);
    rom.streamfunction_modes = solver.solve_cols(rom.vorticity_modes);
    galerkin_tensors(rom.vorticity_modes, rom.streamfunction_modes, params, rom.grid,
                     rom.weights, &rom.b, &rom.a, &rom.b_tensor);
    return rom;
}

Vector rom_rhs(const Vector& coeffs, const GalerkinRom& rom) {
    require(coeffs.size() == rom.r, "ShapeMismatch", "rom coefficient dimension");
    Vector rhs = rom.b + rom.a * coeffs;
    for (int i = 0; i < rom.r; ++i)
        rhs(i) -= coeffs.dot(rom.b_tensor[static_cast<std::size_t>(i)] * coeffs);
    return rhs;
}

double relative_kinetic_energy(const GalerkinRom& rom, int r, const Matrix& window) {
    require(r >= 1 && r <= rom.r, "RankDeficient");
    require(window.rows() == rom.grid.size(), "ShapeMismatch");
    double captured = 0.0, total = 0.0;
    for (Eigen::Index k = 0; k < window.cols(); ++k) {
        const Vector wf = rom.weights.asDiagonal() * window.col(k);
        const Vector coeffs = rom.vorticity_modes.leftCols(r).transpose() * wf;
        captured += coeffs.squaredNorm();
        total += window.col(k).dot(wf);
    }
    require(total > 0.0, "RankDeficient", "window has zero energy");
    return captured / total;
}

ProjectionPair build_projection_pair(const GalerkinRom& rom, const PoissonSolver& solver) {
    const SparseMatrix factor =
        Vector(rom.weights.array().sqrt()).asDiagonal() * solver.neg_laplacian();
    return ProjectionPair::from_factored(rom.streamfunction_modes, factor);
}

ProjectionPair nested_coefficient_pair(int r_parent, int r_child) {
    require(r_child >= 1 && r_child <= r_parent, "ShapeMismatch",
            "nested level must be smaller");
    Matrix phi = Matrix::Zero(r_parent, r_child);
    phi.topRows(r_child).setIdentity();
    return ProjectionPair::from_operators(phi, phi.transpose());
}

void save_rom(const std::string& path, const GalerkinRom& rom, const Matrix* snapshots) {
    ArrayArchive ar;
    ar.put("vorticity_modes", rom.vorticity_modes);
    ar.put("streamfunction_modes", rom.streamfunction_modes);
    ar.put("eigenvalues", rom.eigenvalues);
    ar.put("b", rom.b);
    ar.put("a", rom.a);
    Matrix bt(rom.r, rom.r * rom.r);
    for (int i = 0; i < rom.r; ++i)
        for (int m = 0; m < rom.r; ++m)
            for (int n = 0; n < rom.r; ++n)
                bt(i, m * rom.r + n) = rom.b_tensor[static_cast<std::size_t>(i)](m, n);
    ar.put("b_tensor", bt);
    ar.put_u64("grid", {static_cast<std::uint64_t>(rom.grid.nx),
                        static_cast<std::uint64_t>(rom.grid.ny)});
    ar.put("params", Vector{{rom.params.reynolds, rom.params.rossby}});
    if (snapshots) ar.put("snapshots", *snapshots);
    ar.save_file(path);
}

GalerkinRom load_rom(const std::string& path, Matrix* snapshots_out) {
    ArrayArchive ar = ArrayArchive::load_file(path);
    GalerkinRom rom;
    rom.vorticity_modes = ar.matrix("vorticity_modes");
    rom.streamfunction_modes = ar.matrix("streamfunction_modes");
    rom.eigenvalues = ar.vector("eigenvalues");
    rom.b = ar.vector("b");
    rom.a = ar.matrix("a");
    rom.r = static_cast<int>(rom.vorticity_modes.cols());
    const Matrix bt = ar.matrix("b_tensor");
    require(bt.rows() == rom.r && bt.cols() == rom.r * rom.r, "ArchiveCorrupt", path);
    rom.b_tensor.assign(static_cast<std::size_t>(rom.r), Matrix::Zero(rom.r, rom.r));
    for (int i = 0; i < rom.r; ++i)
        for (int m = 0; m < rom.r; ++m)
            for (int n = 0; n < rom.r; ++n)
                rom.b_tensor[static_cast<std::size_t>(i)](m, n) = bt(i, m * rom.r + n);
    const auto gdims = ar.u64("grid");
    rom.grid = Grid2D::make(static_cast<int>(gdims.at(0)), static_cast<int>(gdims.at(1)));
    rom.weights = simpson_weights(rom.grid);
    const Vector p = ar.vector("params");
    rom.params.reynolds = p(0);
    rom.params.rossby = p(1);
    if (snapshots_out && ar.has("snapshots")) *snapshots_out = ar.matrix("snapshots");
    return rom;
}

}  // namespace mfenkf::pod
