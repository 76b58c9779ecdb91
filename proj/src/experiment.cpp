#include "mfenkf/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "mfenkf/diagnostics.hpp"
#include "mfenkf/enkf.hpp"
#include "mfenkf/mfenkf.hpp"
#include "mfenkf/mlenkf.hpp"

namespace mfenkf::exp {
namespace {

namespace fs = std::filesystem;

// ------------------------------------------------------------------ config

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double parse_double(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        require(pos == v.size(), "ConfigError", "bad number for " + key);
        return d;
    } catch (const Error&) {
        throw;
    } catch (...) {
        throw Error("ConfigError", "bad number for " + key + ": " + v);
    }
}

long parse_long(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        const long d = std::stol(v, &pos);
        require(pos == v.size(), "ConfigError", "bad integer for " + key);
        return d;
    } catch (const Error&) {
        throw;
    } catch (...) {
        throw Error("ConfigError", "bad integer for " + key + ": " + v);
    }
}

std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
    std::vector<int> out;
    for (const auto& item : split_list(v)) out.push_back(static_cast<int>(parse_long(item, key)));
    require(!out.empty(), "ConfigError", "empty list for " + key);
    return out;
}

std::vector<double> parse_double_list(const std::string& v, const std::string& key) {
    std::vector<double> out;
    for (const auto& item : split_list(v)) out.push_back(parse_double(item, key));
    require(!out.empty(), "ConfigError", "empty list for " + key);
    return out;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    using Handler = std::function<void(ExperimentConfig&, const std::string&)>;
    static const std::map<std::string, Handler> handlers = {
        {"experiment.scale", [](auto& c, const auto& v) { c.scale = v; }},
        {"experiment.filter", [](auto& c, const auto& v) { c.filter = v; }},
        {"experiment.steps", [](auto& c, const auto& v) { c.steps = static_cast<int>(parse_long(v, "steps")); }},
        {"experiment.spinup", [](auto& c, const auto& v) { c.spinup = static_cast<int>(parse_long(v, "spinup")); }},
        {"experiment.runs", [](auto& c, const auto& v) { c.runs = static_cast<int>(parse_long(v, "runs")); }},
        {"experiment.seed", [](auto& c, const auto& v) { c.seed = static_cast<std::uint64_t>(parse_long(v, "seed")); }},
        {"experiment.output", [](auto& c, const auto& v) { c.output_dir = v; }},
        {"ensemble.nx", [](auto& c, const auto& v) { c.n_principal = static_cast<int>(parse_long(v, "nx")); }},
        {"ensemble.nu", [](auto& c, const auto& v) { c.n_ancillary = parse_int_list(v, "nu"); }},
        {"ensemble.r", [](auto& c, const auto& v) { c.rom_dims = parse_int_list(v, "r"); }},
        {"ensemble.inflation_x", [](auto& c, const auto& v) { c.inflation_principal = parse_double(v, "inflation_x"); }},
        {"ensemble.inflation_u", [](auto& c, const auto& v) { c.inflation_ancillary = parse_double_list(v, "inflation_u"); }},
        {"ensemble.init_spread", [](auto& c, const auto& v) { c.init_spread = parse_double(v, "init_spread"); }},
        {"noise.method", [](auto& c, const auto& v) { c.noise_method = v; }},
        {"noise.s", [](auto& c, const auto& v) { c.noise_s = parse_double(v, "s"); }},
        {"localization.radius", [](auto& c, const auto& v) { c.radius = parse_double(v, "radius"); }},
        {"observation.count", [](auto& c, const auto& v) { c.obs_count = static_cast<int>(parse_long(v, "count")); }},
        {"basis.path", [](auto& c, const auto& v) { c.basis_path = v; }},
        {"basis.snapshots", [](auto& c, const auto& v) { c.basis_snapshots = static_cast<int>(parse_long(v, "snapshots")); }},
        {"basis.spacing", [](auto& c, const auto& v) { c.basis_spacing = parse_double(v, "spacing"); }},
        {"basis.warmup", [](auto& c, const auto& v) { c.basis_warmup = parse_double(v, "warmup"); }},
        {"mf.recenter", [](auto& c, const auto& v) { c.recenter = v; }},
        {"sweep.nx", [](auto& c, const auto& v) { c.sweep_n_principal = parse_int_list(v, "sweep.nx"); }},
        {"sweep.inflation_x", [](auto& c, const auto& v) { c.sweep_inflation = parse_double_list(v, "sweep.inflation_x"); }},
        {"sweep.r", [](auto& c, const auto& v) { c.sweep_rom_dim = parse_int_list(v, "sweep.r"); }},
        {"sweep.workers", [](auto& c, const auto& v) { c.workers = static_cast<int>(parse_long(v, "workers")); }},
    };
    static const std::vector<std::string> sections = {
        "experiment", "ensemble", "noise", "localization", "observation",
        "basis",      "mf",       "sweep"};

    std::string section;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            require(line.back() == ']', "ConfigError",
                    "bad section header at line " + std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            require(std::find(sections.begin(), sections.end(), section) != sections.end(),
                    "ConfigError", "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        require(eq != std::string::npos, "ConfigError",
                "expected key = value at line " + std::to_string(lineno));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        require(!section.empty(), "ConfigError", "key outside any section: " + key);
        const auto it = handlers.find(section + "." + key);
        require(it != handlers.end(), "ConfigError",
                "unknown key " + key + " in section [" + section + "]");
        it->second(cfg, value);
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "ConfigError", "cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void ExperimentConfig::validate() const {
    static const std::vector<std::string> kinds = {"enkf",   "loc-enkf", "shr-enkf",
                                                   "mlenkf", "mfenkf",   "mfenkf-telescopic"};
    require(std::find(kinds.begin(), kinds.end(), filter) != kinds.end(), "ConfigError",
            "unknown filter kind " + filter);
    scale_preset(scale);  // validates the scale name
    require(steps > spinup, "ConfigError", "steps must exceed spinup");
    require(spinup >= 0 && runs >= 1, "ConfigError", "bad spinup/runs");
    require(n_principal >= 2, "ConfigError", "nx must be >= 2");
    require(!rom_dims.empty() && !n_ancillary.empty(), "ConfigError", "empty level lists");
    require(inflation_principal >= 1.0, "ConfigError", "inflation_x must be >= 1");
    for (double a : inflation_ancillary)
        require(a >= 1.0, "ConfigError", "inflation_u must be >= 1");
    require(noise_method == "i" || noise_method == "ii", "ConfigError",
            "noise method must be i or ii");
    require(noise_s > 0.0, "ConfigError", "noise s must be > 0");
    require(recenter == "total" || recenter == "control", "ConfigError",
            "recenter must be total or control");
    require(obs_count >= 1, "ConfigError", "need at least one observation");
    if (filter == "mfenkf-telescopic") {
        require(rom_dims.size() == n_ancillary.size(), "ConfigError",
                "r and nu lists must have equal length");
        for (std::size_t l = 1; l < rom_dims.size(); ++l)
            require(rom_dims[l] < rom_dims[l - 1], "ConfigError",
                    "telescopic dimensions must decrease");
        require(rom_dims.back() >= 1, "ConfigError", "telescopic levels need r >= 1");
        require(noise_method == "ii" || rom_dims.size() == 1, "ConfigError",
                "method (i) supports a single level only");
    } else {
        require(rom_dims.size() == 1 && n_ancillary.size() == 1, "ConfigError",
                "scalar filters take single r and nu values");
    }
    for (int nu : n_ancillary)
        require(nu >= 2 || rom_dims[0] == 0, "ConfigError", "nu must be >= 2");
    require(workers >= 1, "ConfigError", "workers must be >= 1");
}

bool ExperimentConfig::needs_basis() const {
    if (filter == "enkf" || filter == "loc-enkf") return false;
    if (filter == "shr-enkf") return true;
    return rom_dims[0] > 0;
}

ScalePreset scale_preset(const std::string& scale) {
    if (scale == "tiny")
        return {qge::Grid2D::make(31, 63), qge::Grid2D::make(15, 31), 60, 0.20, 1.0, 1.0};
    if (scale == "desk")
        return {qge::Grid2D::make(127, 255), qge::Grid2D::make(31, 63), 200, 0.25, 5.0, 6.0};
    if (scale == "paper")
        return {qge::Grid2D::make(255, 511), qge::Grid2D::make(63, 127), 700, 1.9881, 20.0,
                40.0};
    throw Error("ConfigError", "unknown scale " + scale);
}

namespace {

// ------------------------------------------------------------------ truth

struct TruthData {
    qge::Grid2D fom_grid;
    std::vector<Vector> omega_fom;  // [0] initial, [1..steps] observation times
    Matrix observations;            // m x steps (noisy)
    std::vector<int> obs_indices;
};

// Smooth seeded vorticity perturbation: Poisson-smoothed white noise scaled
// to a given max magnitude.
Vector smooth_seeded_field(const qge::PoissonSolver& solver, RngStream& rng, double scale) {
    Vector w(solver.grid().size());
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = rng.next_gaussian();
    Vector f = solver.solve(w);
    const double m = f.cwiseAbs().maxCoeff();
    if (m > 0.0) f *= scale / m;
    return f;
}

std::shared_ptr<const TruthData> make_truth(const ExperimentConfig& cfg,
                                            const ScalePreset& preset) {
    static std::map<std::string, std::shared_ptr<const TruthData>> cache;
    static std::mutex mutex;
    const std::string key = cfg.scale + "/" + std::to_string(cfg.seed) + "/" +
                            std::to_string(cfg.steps) + "/" + std::to_string(cfg.obs_count);
    {
        std::lock_guard<std::mutex> lock(mutex);
        const auto it = cache.find(key);
        if (it != cache.end()) return it->second;
    }

    auto data = std::make_shared<TruthData>();
    data->fom_grid = preset.fom_grid;
    const qge::PoissonSolver truth_solver(preset.truth_grid);
    const qge::QgeParams params;

    RngStream init_rng(cfg.seed, streams::kTruthInit);
    qge::QgeState state;
    state.omega = smooth_seeded_field(truth_solver, init_rng, 0.1);
    state.t = 0.0;
    double hint = 0.0;
    state = qge::integrate(state, params, truth_solver, preset.truth_spinup, {}, &hint);

    data->omega_fom.reserve(static_cast<std::size_t>(cfg.steps) + 1);
    data->omega_fom.push_back(
        qge::restrict_to_fom(state.omega, preset.truth_grid, preset.fom_grid));
    data->obs_indices = qge::equally_spaced_indices(preset.fom_grid.size(), cfg.obs_count);

    GaussianSampler obs_noise(Matrix::Identity(cfg.obs_count, cfg.obs_count), cfg.seed,
                              streams::kObsNoiseTruth);
    data->observations.resize(cfg.obs_count, cfg.steps);
    for (int i = 1; i <= cfg.steps; ++i) {
        state = qge::integrate(state, params, truth_solver,
                               state.t + qge::kDayTimeUnits, {}, &hint);
        Vector omega_fom =
            qge::restrict_to_fom(state.omega, preset.truth_grid, preset.fom_grid);
        qge::QgeState fom_state{omega_fom, state.t};
        data->observations.col(i - 1) =
            qge::observe(fom_state, data->obs_indices, &obs_noise);
        data->omega_fom.push_back(std::move(omega_fom));
    }

    std::lock_guard<std::mutex> lock(mutex);
    cache[key] = data;
    return data;
}

// ------------------------------------------------------------------ filters

enum class FilterKind { Enkf, LocEnkf, ShrEnkf, Mlenkf, Mfenkf, MfenkfTelescopic };

FilterKind filter_kind(const std::string& name) {
    if (name == "enkf") return FilterKind::Enkf;
    if (name == "loc-enkf") return FilterKind::LocEnkf;
    if (name == "shr-enkf") return FilterKind::ShrEnkf;
    if (name == "mlenkf") return FilterKind::Mlenkf;
    if (name == "mfenkf") return FilterKind::Mfenkf;
    return FilterKind::MfenkfTelescopic;
}

// Shared per-experiment immutable pieces.
struct ExperimentSetup {
    ExperimentConfig cfg;
    ScalePreset preset;
    std::shared_ptr<const TruthData> truth;
    std::shared_ptr<qge::PoissonSolver> fom_solver;
    ObservationModel obs;  // acts on streamfunction-form states
    FilterKind kind = FilterKind::Enkf;
    // ROM pieces (when needed)
    std::vector<pod::GalerkinRom> roms;  // one per level
    std::vector<std::shared_ptr<const ProjectionPair>> pairs;
    // localization / shrinkage pieces
    std::optional<LocalizedTaper> taper;
    std::optional<ShrinkageTarget> target;
};

// Observations act on the streamfunction-form state: H(psi) =
// gather(-lap(psi)) = vorticity at the observed indices.
ObservationModel make_psi_observation(const std::shared_ptr<qge::PoissonSolver>& solver,
                                      const std::vector<int>& indices, int m) {
    ObservationModel obs;
    obs.cov_obs = Matrix::Identity(m, m);
    const SparseMatrix& a = solver->neg_laplacian();
    obs.h = [&a, indices](const Matrix& states) {
        const Matrix omega = a * states;
        Matrix out(static_cast<Eigen::Index>(indices.size()), states.cols());
        for (std::size_t j = 0; j < indices.size(); ++j)
            out.row(static_cast<Eigen::Index>(j)) = omega.row(indices[j]);
        return out;
    };
    return obs;
}

ShrinkageTarget make_snapshot_target(const ExperimentSetup& setup, const Matrix& snapshots) {
    const auto& grid = setup.preset.fom_grid;
    const auto& solver = *setup.fom_solver;
    const int n = grid.size();
    const auto m = static_cast<int>(setup.truth->obs_indices.size());
    // streamfunction-form snapshot anomalies
    Matrix psi = solver.solve_cols(snapshots);
    const Vector mean = psi.rowwise().mean();
    psi.colwise() -= mean;
    psi /= std::sqrt(static_cast<double>(psi.cols() - 1));

    const LocalizationKernel kernel{setup.cfg.radius};
    const GridGeometry geom(grid.nx, grid.ny);
    const SparseMatrix& a = solver.neg_laplacian();

    ShrinkageTarget target;
    target.t_ht = Matrix::Zero(n, m);
    for (int j = 0; j < m; ++j) {
        const int row = setup.truth->obs_indices[static_cast<std::size_t>(j)];
        // H^T column j = A row `row`, five nonzeros
        for (SparseMatrix::InnerIterator it(a, row); it; ++it) {
            // A is symmetric so iterating column `row` visits the row entries
            const int k = static_cast<int>(it.row());
            const double coeff = it.value();
            const Vector cov_col = psi * psi.row(k).transpose();
            for (int i = 0; i < n; ++i)
                target.t_ht(i, j) += coeff * kernel(geom.distance(i, k)) * cov_col(i);
        }
    }
    const Matrix a_t_ht = a * target.t_ht;
    target.h_t_ht.resize(m, m);
    for (int i = 0; i < m; ++i)
        target.h_t_ht.row(i) = a_t_ht.row(setup.truth->obs_indices[static_cast<std::size_t>(i)]);
    target.trace = psi.squaredNorm();  // kernel(0) = 1 on the diagonal
    return target;
}

ExperimentSetup make_setup(const ExperimentConfig& cfg) {
    ExperimentSetup setup;
    setup.cfg = cfg;
    setup.preset = scale_preset(cfg.scale);
    setup.kind = filter_kind(cfg.filter);
    setup.truth = make_truth(cfg, setup.preset);
    setup.fom_solver = std::make_shared<qge::PoissonSolver>(setup.preset.fom_grid);
    setup.obs =
        make_psi_observation(setup.fom_solver, setup.truth->obs_indices, cfg.obs_count);

    if (cfg.needs_basis()) {
        require(fs::exists(cfg.basis_path), "BasisMissing",
                "basis archive not found: " + cfg.basis_path + " (run build-basis)");
        Matrix snapshots;
        pod::GalerkinRom rom = pod::load_rom(cfg.basis_path, &snapshots);
        require(rom.grid.nx == setup.preset.fom_grid.nx &&
                    rom.grid.ny == setup.preset.fom_grid.ny,
                "BasisMismatch", "basis archive grid does not match the scale");
        if (setup.kind == FilterKind::ShrEnkf) {
            require(snapshots.size() > 0, "BasisMismatch",
                    "basis archive carries no snapshots for the shrinkage target");
            setup.target = make_snapshot_target(setup, snapshots);
        } else {
            for (std::size_t l = 0; l < cfg.rom_dims.size(); ++l) {
                require(cfg.rom_dims[l] <= rom.r, "BasisMismatch",
                        "basis archive has fewer modes than requested");
                setup.roms.push_back(truncate_rom(rom, cfg.rom_dims[l]));
                if (l == 0)
                    setup.pairs.push_back(std::make_shared<ProjectionPair>(
                        pod::build_projection_pair(setup.roms[0], *setup.fom_solver)));
                else
                    setup.pairs.push_back(std::make_shared<ProjectionPair>(
                        pod::nested_coefficient_pair(cfg.rom_dims[l - 1], cfg.rom_dims[l])));
            }
        }
    }
    if (setup.kind == FilterKind::LocEnkf || setup.kind == FilterKind::Mlenkf) {
        const GridGeometry geom(setup.preset.fom_grid.nx, setup.preset.fom_grid.ny);
        setup.taper = make_taper(LocalizationKernel{cfg.radius}, &geom,
                                 setup.truth->obs_indices);
    }
    return setup;
}

// ------------------------------------------------------------------ runner

struct CsvWriter {
    std::ofstream out;
    explicit CsvWriter(const std::string& path) : out(path) {
        require(static_cast<bool>(out), "FileOpenFailed", path);
    }
    void line(const std::string& s) { out << s << '\n'; }
};

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct RankAccumulators {
    std::optional<RankHistogram> principal, control, ancillary;
    double kl_p = std::numeric_limits<double>::quiet_NaN();
    double kl_c = std::numeric_limits<double>::quiet_NaN();
    double kl_a = std::numeric_limits<double>::quiet_NaN();

    void tally(const Matrix& member_obs, const Vector& truth_obs, RngStream& rng,
               std::optional<RankHistogram>& hist) {
        if (!hist) hist.emplace(static_cast<int>(member_obs.cols()));
        for (Eigen::Index v = 0; v < truth_obs.size(); ++v)
            hist->add(rank_tally(member_obs.row(v).transpose(), truth_obs(v), rng));
    }
};

RunResult run_single(const ExperimentSetup& setup, int run_index, bool write_hist) {
    const ExperimentConfig& cfg = setup.cfg;
    const auto& grid = setup.preset.fom_grid;
    const auto& solver = *setup.fom_solver;
    const SparseMatrix& neg_lap = solver.neg_laplacian();
    const qge::QgeParams params;
    const int n = grid.size();
    const int m = cfg.obs_count;
    const std::uint64_t fseed = cfg.filter_seed();
    const auto run_sub = static_cast<std::uint64_t>(run_index);

    GaussianSampler pert_x(Matrix::Identity(m, m), fseed, streams::kObsPerturbX, run_sub);
    GaussianSampler pert_u(Matrix::Identity(m, m), fseed, streams::kObsPerturbU, run_sub);
    RngStream init_x(fseed, streams::kInitPrincipal, run_sub);
    RngStream init_u(fseed, streams::kInitAncillary, run_sub);
    RngStream tie_rng(fseed, streams::kRankTies, run_sub);

    // initial ensembles around the restricted truth, streamfunction form;
    // perturbations are white in vorticity (Poisson-smoothed in psi)
    const Vector psi_center = solver.solve(setup.truth->omega_fom[0]);
    auto draw_member = [&](RngStream& rng) {
        Vector w(n);
        for (int i = 0; i < n; ++i) w(i) = rng.next_gaussian();
        return Vector(psi_center + solver.solve(cfg.init_spread * w));
    };

    const int n_x = cfg.n_principal;
    Ensemble principal;
    principal.members.resize(n, n_x);
    for (int k = 0; k < n_x; ++k) principal.members.col(k) = draw_member(init_x);

    const bool triple_kind = setup.kind == FilterKind::Mlenkf ||
                             setup.kind == FilterKind::Mfenkf ||
                             setup.kind == FilterKind::MfenkfTelescopic;
    const bool reduced = triple_kind && !setup.pairs.empty();

    FidelityLadder ladder;
    ladder.principal = principal;
    if (reduced) {
        // fresh full-space draw projected down through the chain to level l
        auto reduced_draw = [&](std::size_t level) {
            Vector v = draw_member(init_u);
            for (std::size_t j = 0; j <= level; ++j) v = setup.pairs[j]->restrict(v);
            return v;
        };
        for (std::size_t l = 0; l < setup.pairs.size(); ++l) {
            LadderLevel lev;
            lev.proj = setup.pairs[l];
            const Matrix& parent =
                l == 0 ? ladder.principal.members : ladder.levels[l - 1].ancillary.members;
            lev.control.members = lev.proj->restrict_cols(parent);
            const int n_u = cfg.n_ancillary[l];
            lev.ancillary.members.resize(lev.proj->reduced_dim(), n_u);
            for (int k = 0; k < n_u; ++k) lev.ancillary.members.col(k) = reduced_draw(l);
            ladder.levels.push_back(std::move(lev));
        }
    }

    // propagators with per-member step hints
    std::vector<double> hint_x(static_cast<std::size_t>(n_x), 0.0);
    MemberPropagator fom = [&](const Vector& psi, int k) {
        qge::QgeState st{neg_lap * psi, 0.0};
        st = qge::integrate(st, params, solver, qge::kDayTimeUnits, {},
                            &hint_x[static_cast<std::size_t>(k)]);
        return solver.solve(st.omega);
    };
    std::vector<std::vector<double>> hint_uc(setup.roms.size()),
        hint_ua(setup.roms.size());
    std::vector<MemberPropagator> rom_control, rom_ancillary;
    for (std::size_t l = 0; l < setup.roms.size(); ++l) {
        hint_uc[l].assign(static_cast<std::size_t>(
                              l == 0 ? n_x : cfg.n_ancillary[l - 1]),
                          0.0);
        hint_ua[l].assign(static_cast<std::size_t>(cfg.n_ancillary[l]), 0.0);
        const pod::GalerkinRom& rom = setup.roms[l];
        auto make_rom_prop = [&rom](std::vector<double>& hints) {
            return MemberPropagator([&rom, &hints](const Vector& a0, int k) {
                StepController ctrl;
                if (hints[static_cast<std::size_t>(k)] > 0.0)
                    ctrl.initial_step = hints[static_cast<std::size_t>(k)];
                OdeResult res = integrate_adaptive(
                    [&rom](double, const Vector& a) { return pod::rom_rhs(a, rom); }, a0,
                    0.0, qge::kDayTimeUnits, ctrl);
                hints[static_cast<std::size_t>(k)] =
                    qge::kDayTimeUnits / std::max(1, res.accepted_steps);
                return res.y;
            });
        };
        rom_control.push_back(make_rom_prop(hint_uc[l]));
        rom_ancillary.push_back(make_rom_prop(hint_ua[l]));
    }

    const NoiseMethod method = cfg.noise_method == "i"
                                   ? NoiseMethod::method_i()
                                   : NoiseMethod::method_ii(cfg.noise_s);
    const Recenter recenter =
        cfg.recenter == "total" ? Recenter::TotalVariate : Recenter::ControlToAncillary;
    std::vector<double> alpha_u = cfg.inflation_ancillary;
    if (reduced && alpha_u.size() < setup.pairs.size())
        alpha_u.resize(setup.pairs.size(), alpha_u.back());

    fs::create_directories(cfg.output_dir);
    const std::string run_name = cfg.filter + "_run" + std::to_string(run_index);
    const std::string csv_path = (fs::path(cfg.output_dir) / (run_name + ".csv")).string();
    const std::string timing_path =
        (fs::path(cfg.output_dir) / (run_name + ".timing.csv")).string();
    CsvWriter csv(csv_path);
    CsvWriter timing(timing_path);
    csv.line("step,time,rmse,kl_principal,kl_control,kl_ancillary");
    timing.line("step,wall_ms");

    RankAccumulators ranks;
    std::vector<Vector> estimates, truths;
    estimates.reserve(static_cast<std::size_t>(cfg.steps));
    truths.reserve(static_cast<std::size_t>(cfg.steps));

    auto member_obs_values = [&](const Matrix& psi_members) {
        const Matrix omega = neg_lap * psi_members;
        Matrix out(m, psi_members.cols());
        for (int j = 0; j < m; ++j)
            out.row(j) = omega.row(setup.truth->obs_indices[static_cast<std::size_t>(j)]);
        return out;
    };
    for (int step = 1; step <= cfg.steps; ++step) {
        const auto wall_start = std::chrono::steady_clock::now();
        const Vector& omega_truth = setup.truth->omega_fom[static_cast<std::size_t>(step)];
        const Vector y = setup.truth->observations.col(step - 1);

        try {
            // forecast
            if (triple_kind && reduced) {
                telescopic_forecast(ladder, fom, rom_control, rom_ancillary);
            } else {
                propagate_members(ladder.principal.members, fom);
            }

            // analysis
            switch (setup.kind) {
                case FilterKind::Enkf:
                    ladder.principal = enkf_analysis(ladder.principal, setup.obs, y, pert_x,
                                                     cfg.inflation_principal);
                    break;
                case FilterKind::LocEnkf:
                    ladder.principal =
                        localized_enkf_analysis(ladder.principal, setup.obs, y, pert_x,
                                                cfg.inflation_principal, *setup.taper);
                    break;
                case FilterKind::ShrEnkf:
                    ladder.principal =
                        shrinkage_enkf_analysis(ladder.principal, setup.obs, y, pert_x,
                                                cfg.inflation_principal, *setup.target);
                    break;
                case FilterKind::Mlenkf: {
                    TotalVariateTriple triple =
                        triple_from_ladder(ladder, reduced ? setup.pairs[0] : nullptr);
                    triple = mlenkf_corrected_analysis(
                        triple, setup.obs, y, pert_x, pert_u,
                        {cfg.inflation_principal, alpha_u.empty() ? 1.0 : alpha_u[0]},
                        *setup.taper);
                    ladder = ladder_from_triple(triple);
                    break;
                }
                case FilterKind::Mfenkf:
                case FilterKind::MfenkfTelescopic:
                    ladder = telescopic_analysis(
                        ladder, setup.obs, y, method, pert_x, pert_u,
                        cfg.inflation_principal,
                        std::vector<double>(alpha_u.begin(),
                                            alpha_u.begin() +
                                                static_cast<long>(ladder.levels.size())),
                        recenter);
                    break;
            }
        } catch (const Error& e) {
            throw Error(e.code(), "step " + std::to_string(step) + ": " + e.what());
        }

        // state estimate and scoring (vorticity space)
        const Vector psi_estimate = total_variate_mean(ladder);
        const Vector omega_estimate = neg_lap * psi_estimate;
        estimates.push_back(omega_estimate);
        truths.push_back(omega_truth);
        const double rmse = std::sqrt((omega_estimate - omega_truth).squaredNorm() /
                                      static_cast<double>(n));

        if (step > cfg.spinup) {
            Vector truth_obs(m);
            for (int j = 0; j < m; ++j)
                truth_obs(j) = omega_truth(setup.truth->obs_indices[static_cast<std::size_t>(j)]);
            ranks.tally(member_obs_values(ladder.principal.members), truth_obs, tie_rng,
                        ranks.principal);
            ranks.kl_p = kl_to_uniform(*ranks.principal);
            if (reduced) {
                const std::vector<Matrix> lifts = ladder.accumulated_lifts();
                ranks.tally(member_obs_values(lifts[0] * ladder.levels[0].control.members),
                            truth_obs, tie_rng, ranks.control);
                ranks.tally(
                    member_obs_values(lifts[0] * ladder.levels[0].ancillary.members),
                    truth_obs, tie_rng, ranks.ancillary);
                ranks.kl_c = kl_to_uniform(*ranks.control);
                ranks.kl_a = kl_to_uniform(*ranks.ancillary);
            }
        }

        const double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                      wall_start)
                .count();
        csv.line(std::to_string(step) + "," + fmt_double(step * qge::kDayTimeUnits) + "," +
                 fmt_double(rmse) + "," + fmt_double(ranks.kl_p) + "," +
                 fmt_double(ranks.kl_c) + "," + fmt_double(ranks.kl_a));
        timing.line(std::to_string(step) + "," + fmt_double(wall_ms));
    }

    RunResult result;
    result.run_index = run_index;
    result.run_seed = fseed;
    result.aggregate_rmse = spatiotemporal_rmse(estimates, truths, cfg.spinup);
    result.kl_principal = ranks.kl_p;
    result.kl_control = ranks.kl_c;
    result.kl_ancillary = ranks.kl_a;
    result.csv_path = csv_path;

    if (write_hist) {
        auto dump = [&](const char* name, const std::optional<RankHistogram>& hist) {
            if (!hist) return;
            CsvWriter h((fs::path(cfg.output_dir) / (run_name + "_hist_" + name + ".csv"))
                            .string());
            h.line("rank,count");
            for (std::size_t b = 0; b < hist->bins.size(); ++b)
                h.line(std::to_string(b) + "," + std::to_string(hist->bins[b]));
        };
        dump("principal", ranks.principal);
        dump("control", ranks.control);
        dump("ancillary", ranks.ancillary);
    }
    return result;
}

ExperimentResult run_experiment_impl(const ExperimentConfig& cfg, bool write_hist) {
    cfg.validate();
    const ExperimentSetup setup = make_setup(cfg);
    ExperimentResult result;
    for (int run = 0; run < cfg.runs; ++run)
        result.runs.push_back(run_single(setup, run, write_hist));

    fs::create_directories(cfg.output_dir);
    const std::string summary_path =
        (fs::path(cfg.output_dir) / (cfg.filter + "_summary.csv")).string();
    CsvWriter summary(summary_path);
    summary.line("run,seed,aggregate_rmse,kl_principal,kl_control,kl_ancillary,csv");
    for (const auto& r : result.runs)
        summary.line(std::to_string(r.run_index) + "," + std::to_string(r.run_seed) + "," +
                     fmt_double(r.aggregate_rmse) + "," + fmt_double(r.kl_principal) + "," +
                     fmt_double(r.kl_control) + "," + fmt_double(r.kl_ancillary) + "," +
                     fs::path(r.csv_path).filename().string());
    result.summary_path = summary_path;
    return result;
}

}  // namespace

pod::GalerkinRom truncate_rom(const pod::GalerkinRom& rom, int r) {
    require(r >= 1 && r <= rom.r, "BasisMismatch", "truncation beyond stored modes");
    if (r == rom.r) return rom;
    pod::GalerkinRom out;
    out.r = r;
    out.vorticity_modes = rom.vorticity_modes.leftCols(r);
    out.streamfunction_modes = rom.streamfunction_modes.leftCols(r);
    out.b = rom.b.head(r);
    out.a = rom.a.topLeftCorner(r, r);
    out.b_tensor.assign(static_cast<std::size_t>(r), Matrix());
    for (int i = 0; i < r; ++i)
        out.b_tensor[static_cast<std::size_t>(i)] =
            rom.b_tensor[static_cast<std::size_t>(i)].topLeftCorner(r, r);
    out.eigenvalues = rom.eigenvalues;
    out.grid = rom.grid;
    out.weights = rom.weights;
    out.params = rom.params;
    return out;
}

void build_basis(const ExperimentConfig& cfg) {
    cfg.validate();
    const ScalePreset preset = scale_preset(cfg.scale);
    const qge::PoissonSolver solver(preset.fom_grid);
    const qge::QgeParams params;

    // snapshot trajectory unrelated to the truth: its own stream
    RngStream rng(cfg.seed, streams::kTruthInit, 0x5eedULL);
    pod::SnapshotRunSpec spec;
    spec.params = params;
    spec.initial.omega = smooth_seeded_field(solver, rng, 0.1);
    spec.initial.t = 0.0;
    spec.warmup = cfg.basis_warmup > 0.0 ? cfg.basis_warmup : preset.snapshot_warmup;
    spec.spacing = cfg.basis_spacing > 0.0 ? cfg.basis_spacing : preset.snapshot_spacing;
    spec.count = cfg.basis_snapshots > 0 ? cfg.basis_snapshots : preset.snapshots;

    const pod::SnapshotSet snaps = pod::collect_snapshots(spec, solver);
    int r_max = 1;
    for (int r : cfg.rom_dims) r_max = std::max(r_max, r);
    for (int r : cfg.sweep_rom_dim) r_max = std::max(r_max, r);
    r_max = std::min(r_max, static_cast<int>(snaps.count()));
    const pod::GalerkinRom rom = pod::build_galerkin_rom(snaps, r_max, params, solver);
    if (!cfg.basis_path.empty()) {
        const fs::path parent = fs::path(cfg.basis_path).parent_path();
        if (!parent.empty()) fs::create_directories(parent);
    }
    pod::save_rom(cfg.basis_path, rom, &snaps.snapshots);
}

ExperimentResult run_twin_experiment(const ExperimentConfig& cfg) {
    return run_experiment_impl(cfg, false);
}

ExperimentResult rank_histogram_report(const ExperimentConfig& cfg) {
    return run_experiment_impl(cfg, true);
}

SweepResult sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::vector<int> nx_list =
        cfg.sweep_n_principal.empty() ? std::vector<int>{cfg.n_principal}
                                      : cfg.sweep_n_principal;
    const std::vector<double> infl_list =
        cfg.sweep_inflation.empty() ? std::vector<double>{cfg.inflation_principal}
                                    : cfg.sweep_inflation;
    const std::vector<int> r_list =
        cfg.sweep_rom_dim.empty() ? std::vector<int>{cfg.rom_dims[0]} : cfg.sweep_rom_dim;

    SweepResult result;
    std::vector<ExperimentConfig> cells;
    std::uint64_t cell_index = 0;
    for (int nx : nx_list)
        for (double infl : infl_list)
            for (int r : r_list) {
                ExperimentConfig cell = cfg;
                cell.n_principal = nx;
                cell.inflation_principal = infl;
                cell.rom_dims = {r};
                cell.sweep_n_principal.clear();
                cell.sweep_inflation.clear();
                cell.sweep_rom_dim.clear();
                RngStream derive(cfg.seed, streams::kSweepCell, cell_index);
                cell.filter_seed_override = derive.next_u64();
                cell.output_dir = (fs::path(cfg.output_dir) /
                                   ("cell_" + std::to_string(cell_index)))
                                      .string();
                cells.push_back(std::move(cell));
                result.cells.push_back({nx, infl, r,
                                        *cells.back().filter_seed_override,
                                        std::numeric_limits<double>::quiet_NaN(),
                                        ""});
                ++cell_index;
            }

    std::mutex mtx;
    std::size_t next = 0;
    auto worker = [&] {
        for (;;) {
            std::size_t idx;
            {
                std::lock_guard<std::mutex> lock(mtx);
                if (next >= cells.size()) return;
                idx = next++;
            }
            try {
                const ExperimentResult res = run_twin_experiment(cells[idx]);
                double mean = 0.0;
                for (const auto& r : res.runs) mean += r.aggregate_rmse;
                result.cells[idx].aggregate_rmse =
                    mean / static_cast<double>(res.runs.size());
            } catch (const std::exception& e) {
                result.cells[idx].error = e.what();
            }
        }
    };
    const int workers = std::min<int>(cfg.workers, static_cast<int>(cells.size()));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    fs::create_directories(cfg.output_dir);
    const std::string table_path = (fs::path(cfg.output_dir) / "sweep.csv").string();
    CsvWriter table(table_path);
    table.line("cell,nx,inflation_x,r,cell_seed,mean_rmse,error");
    for (std::size_t i = 0; i < result.cells.size(); ++i) {
        const auto& c = result.cells[i];
        table.line(std::to_string(i) + "," + std::to_string(c.n_principal) + "," +
                   fmt_double(c.inflation) + "," + std::to_string(c.rom_dim) + "," +
                   std::to_string(c.cell_seed) + "," + fmt_double(c.aggregate_rmse) + "," +
                   c.error);
    }
    result.table_path = table_path;
    return result;
}

}  // namespace mfenkf::exp
