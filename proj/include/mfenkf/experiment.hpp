#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfenkf/pod.hpp"

namespace mfenkf::exp {

/// Twin-experiment configuration; parsed from sectioned key=value text.
/// Unknown sections or keys are errors (ConfigError).
struct ExperimentConfig {
    // [experiment]
    std::string scale = "desk";    // tiny | desk | paper
    std::string filter = "mfenkf"; // enkf | loc-enkf | shr-enkf | mlenkf |
                                   // mfenkf | mfenkf-telescopic
    int steps = 350;
    int spinup = 50;
    int runs = 3;
    std::uint64_t seed = 1;
    std::string output_dir = "runs";

    // [ensemble]
    int n_principal = 4;
    std::vector<int> n_ancillary = {40};  // per level for the telescopic filter
    std::vector<int> rom_dims = {25};     // per level
    double inflation_principal = 1.1;
    std::vector<double> inflation_ancillary = {1.1};
    double init_spread = 1.0;  // vorticity units of the initial perturbation

    // [noise]
    std::string noise_method = "i";  // i | ii
    double noise_s = 1.0;

    // [localization]
    double radius = 20.0;

    // [observation]
    int obs_count = 150;

    // [basis]
    std::string basis_path = "basis.mfb";
    int basis_snapshots = 0;     // 0 = scale default
    double basis_spacing = 0.0;  // 0 = scale default
    double basis_warmup = 0.0;   // 0 = scale default

    // [mf]
    std::string recenter = "total";  // total | control

    // [sweep]
    std::vector<int> sweep_n_principal;
    std::vector<double> sweep_inflation;
    std::vector<int> sweep_rom_dim;
    int workers = 1;

    // Derived / overrides (not config keys): stream seed for the filter; the
    // truth trajectory always follows `seed` so sweep cells share one truth.
    std::optional<std::uint64_t> filter_seed_override;
    std::uint64_t filter_seed() const {
        return filter_seed_override ? *filter_seed_override : seed;
    }

    void validate() const;  // error: ConfigError
    bool needs_basis() const;
};

ExperimentConfig parse_config_text(const std::string& text);   // error: ConfigError
ExperimentConfig parse_config_file(const std::string& path);   // error: ConfigError

/// Grid sizes and trajectory lengths per model scale.
struct ScalePreset {
    qge::Grid2D truth_grid;
    qge::Grid2D fom_grid;
    int snapshots;
    double snapshot_spacing;
    double snapshot_warmup;
    double truth_spinup;
};
ScalePreset scale_preset(const std::string& scale);  // error: ConfigError

/// Build the POD-Galerkin basis archive (FOM snapshot trajectory unrelated
/// to the truth, basis sized to the largest requested mode count), and save
/// it with the raw snapshots to cfg.basis_path.
void build_basis(const ExperimentConfig& cfg);

/// ROM truncated to its leading r modes (tensors restrict exactly).
pod::GalerkinRom truncate_rom(const pod::GalerkinRom& rom, int r);

struct RunResult {
    int run_index = 0;
    std::uint64_t run_seed = 0;
    double aggregate_rmse = 0.0;
    double kl_principal = std::numeric_limits<double>::quiet_NaN();
    double kl_control = std::numeric_limits<double>::quiet_NaN();
    double kl_ancillary = std::numeric_limits<double>::quiet_NaN();
    std::string csv_path;
};

struct ExperimentResult {
    std::vector<RunResult> runs;
    std::string summary_path;
};

/// Config-driven twin experiment: truth trajectory (DNS restricted to the
/// FOM grid), synthetic observations, filter loop, per-step CSV rows and a
/// summary file. Deterministic per master seed. Errors: numerical failures
/// propagate with step context.
ExperimentResult run_twin_experiment(const ExperimentConfig& cfg);

struct SweepCell {
    int n_principal;
    double inflation;
    int rom_dim;
    std::uint64_t cell_seed;
    double aggregate_rmse;  // mean over runs; NaN when the cell failed
    std::string error;
};

struct SweepResult {
    std::vector<SweepCell> cells;
    std::string table_path;
};

/// Cartesian sweep over the configured lists; cells run independently (up to
/// cfg.workers at a time) and per-cell failures are recorded, not fatal.
SweepResult sweep(const ExperimentConfig& cfg);

/// Run the experiment and additionally write rank-histogram bin files per
/// ensemble plus a KL summary.
ExperimentResult rank_histogram_report(const ExperimentConfig& cfg);

}  // namespace mfenkf::exp
