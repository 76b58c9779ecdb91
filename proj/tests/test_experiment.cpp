#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mfenkf/experiment.hpp"
#include "mfenkf/mfenkf.hpp"

using namespace mfenkf;
using namespace mfenkf::exp;

namespace {

namespace fs = std::filesystem;

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(static_cast<bool>(in));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const std::string kWorkDir = "/tmp/mfenkf_exp_tests";

// one shared tiny basis for every test in this file
const std::string& tiny_basis() {
    static std::string path = [] {
        fs::create_directories(kWorkDir);
        ExperimentConfig cfg;
        cfg.scale = "tiny";
        cfg.steps = 6;
        cfg.spinup = 2;
        cfg.rom_dims = {8};
        cfg.basis_path = kWorkDir + "/basis_tiny.mfb";
        cfg.seed = 2024;
        build_basis(cfg);
        return cfg.basis_path;
    }();
    return path;
}

ExperimentConfig tiny_config(const std::string& name) {
    ExperimentConfig cfg;
    cfg.scale = "tiny";
    cfg.filter = "mfenkf";
    cfg.steps = 6;
    cfg.spinup = 2;
    cfg.runs = 1;
    cfg.seed = 2024;
    cfg.n_principal = 4;
    cfg.n_ancillary = {10};
    cfg.rom_dims = {6};
    cfg.inflation_principal = 1.05;
    cfg.inflation_ancillary = {1.05};
    cfg.init_spread = 5.0;
    cfg.basis_path = tiny_basis();
    cfg.output_dir = kWorkDir + "/" + name;
    return cfg;
}

}  // namespace

TEST_CASE("config parsing: sections, defaults, unknown keys") {
    const ExperimentConfig cfg = parse_config_text(
        "# comment\n"
        "[experiment]\n"
        "scale = tiny\n"
        "filter = loc-enkf\n"
        "steps = 60\n"
        "spinup = 10\n"
        "seed = 7\n"
        "[localization]\n"
        "radius = 12.5\n");
    CHECK(cfg.scale == "tiny");
    CHECK(cfg.filter == "loc-enkf");
    CHECK(cfg.steps == 60);
    CHECK(cfg.runs == 3);        // default
    CHECK(cfg.obs_count == 150); // default
    CHECK(cfg.radius == 12.5);

    auto code_of = [](const std::string& text) {
        try {
            parse_config_text(text);
        } catch (const Error& e) {
            return e.code();
        }
        return std::string("no error");
    };
    CHECK(code_of("[experiment]\ntypo_key = 1\n") == "ConfigError");
    CHECK(code_of("[no_such_section]\nx = 1\n") == "ConfigError");
    CHECK(code_of("[experiment]\nsteps = abc\n") == "ConfigError");
    CHECK(code_of("steps = 3\n") == "ConfigError");  // key outside a section
    CHECK(code_of("[experiment]\nsteps = 5\nspinup = 9\n") == "ConfigError");
    CHECK(code_of("[experiment]\nfilter = nope\n") == "ConfigError");
    CHECK(code_of("[ensemble]\ninflation_x = 0.5\n") == "ConfigError");
}

TEST_CASE("scale presets nest the grids") {
    for (const char* name : {"tiny", "desk", "paper"}) {
        const ScalePreset p = scale_preset(name);
        CHECK((p.truth_grid.nx + 1) % (p.fom_grid.nx + 1) == 0);
        CHECK((p.truth_grid.ny + 1) % (p.fom_grid.ny + 1) == 0);
        CHECK(p.snapshots >= 2);
    }
    CHECK_THROWS_AS(scale_preset("huge"), Error);
}

TEST_CASE("missing basis archive is a configuration error") {
    ExperimentConfig cfg = tiny_config("missing_basis");
    cfg.basis_path = kWorkDir + "/does_not_exist.mfb";
    bool threw = false;
    try {
        run_twin_experiment(cfg);
    } catch (const Error& e) {
        threw = e.code() == "BasisMissing";
    }
    CHECK(threw);
}

TEST_CASE("minimal run produces one scored row and a summary") {
    ExperimentConfig cfg = tiny_config("minimal");
    cfg.steps = cfg.spinup + 1;  // single scored step
    const ExperimentResult res = run_twin_experiment(cfg);
    REQUIRE(res.runs.size() == 1);
    CHECK(std::isfinite(res.runs[0].aggregate_rmse));
    const std::string csv = slurp(res.runs[0].csv_path);
    // header + one row per step; KL columns populated only on the scored row
    CHECK(std::count(csv.begin(), csv.end(), '\n') == cfg.steps + 1);
    CHECK(csv.find("step,time,rmse,kl_principal,kl_control,kl_ancillary") == 0);
    CHECK(slurp(res.summary_path).find("aggregate_rmse") != std::string::npos);
}

TEST_CASE("re-running a config reproduces every csv byte for byte") {
    ExperimentConfig cfg = tiny_config("determinism_a");
    cfg.runs = 2;
    const ExperimentResult first = run_twin_experiment(cfg);
    cfg.output_dir = kWorkDir + "/determinism_b";
    const ExperimentResult second = run_twin_experiment(cfg);
    REQUIRE(first.runs.size() == second.runs.size());
    for (std::size_t k = 0; k < first.runs.size(); ++k)
        CHECK(slurp(first.runs[k].csv_path) == slurp(second.runs[k].csv_path));
    CHECK(slurp(first.summary_path) == slurp(second.summary_path));
}

TEST_CASE("mfenkf with r=0 matches the plain enkf output byte for byte") {
    ExperimentConfig mf = tiny_config("degenerate_mf");
    mf.rom_dims = {0};
    mf.basis_path.clear();  // no reduced space, no basis needed
    const ExperimentResult mf_res = run_twin_experiment(mf);

    ExperimentConfig en = tiny_config("degenerate_enkf");
    en.filter = "enkf";
    en.rom_dims = {0};
    en.basis_path.clear();
    const ExperimentResult en_res = run_twin_experiment(en);

    CHECK(slurp(mf_res.runs[0].csv_path) == slurp(en_res.runs[0].csv_path));
}

TEST_CASE("all filter kinds complete a short tiny-scale run") {
    for (const std::string kind :
         {std::string("enkf"), std::string("loc-enkf"), std::string("shr-enkf"),
          std::string("mlenkf"), std::string("mfenkf")}) {
        ExperimentConfig cfg = tiny_config("kind_" + kind);
        cfg.filter = kind;
        cfg.rom_dims = {6};
        const ExperimentResult res = run_twin_experiment(cfg);
        CHECK(std::isfinite(res.runs[0].aggregate_rmse));
    }
    // two-level telescopic variant
    ExperimentConfig tele = tiny_config("kind_telescopic");
    tele.filter = "mfenkf-telescopic";
    tele.rom_dims = {6, 3};
    tele.n_ancillary = {10, 20};
    tele.inflation_ancillary = {1.05, 1.05};
    tele.noise_method = "ii";
    tele.noise_s = 1.0;
    const ExperimentResult res = run_twin_experiment(tele);
    CHECK(std::isfinite(res.runs[0].aggregate_rmse));
}

TEST_CASE("sweep: distinct derived seeds, table rows, shared truth") {
    ExperimentConfig cfg = tiny_config("sweep");
    cfg.runs = 1;
    cfg.sweep_n_principal = {3, 4, 5};
    cfg.sweep_inflation = {1.02, 1.05, 1.1};
    const SweepResult res = sweep(cfg);
    REQUIRE(res.cells.size() == 9);
    for (std::size_t i = 0; i < res.cells.size(); ++i) {
        CHECK(res.cells[i].error.empty());
        CHECK(std::isfinite(res.cells[i].aggregate_rmse));
        for (std::size_t j = i + 1; j < res.cells.size(); ++j)
            CHECK(res.cells[i].cell_seed != res.cells[j].cell_seed);
    }
    const std::string table = slurp(res.table_path);
    CHECK(std::count(table.begin(), table.end(), '\n') == 10);  // header + 9 cells
}

TEST_CASE("rank histogram report writes bin files") {
    ExperimentConfig cfg = tiny_config("rankhist");
    cfg.steps = 8;
    cfg.spinup = 2;
    const ExperimentResult res = rank_histogram_report(cfg);
    CHECK(std::isfinite(res.runs[0].kl_principal));
    CHECK(fs::exists(cfg.output_dir + "/mfenkf_run0_hist_principal.csv"));
    CHECK(fs::exists(cfg.output_dir + "/mfenkf_run0_hist_control.csv"));
    CHECK(fs::exists(cfg.output_dir + "/mfenkf_run0_hist_ancillary.csv"));
    const std::string hist = slurp(cfg.output_dir + "/mfenkf_run0_hist_principal.csv");
    CHECK(hist.find("rank,count") == 0);
}

TEST_CASE("rom truncation slices the tensors exactly") {
    Matrix snaps;
    const pod::GalerkinRom rom = pod::load_rom(tiny_basis(), &snaps);
    REQUIRE(rom.r >= 5);
    const pod::GalerkinRom cut = truncate_rom(rom, 3);
    CHECK(cut.r == 3);
    CHECK((cut.vorticity_modes - rom.vorticity_modes.leftCols(3)).norm() == 0.0);
    CHECK((cut.b - rom.b.head(3)).norm() == 0.0);
    CHECK((cut.a - rom.a.topLeftCorner(3, 3)).norm() == 0.0);
    for (int i = 0; i < 3; ++i)
        CHECK((cut.b_tensor[static_cast<std::size_t>(i)] -
               rom.b_tensor[static_cast<std::size_t>(i)].topLeftCorner(3, 3))
                  .norm() == 0.0);

    // truncated rhs equals the full tensor contraction restricted by hand
    RngStream rng(5);
    Vector a3(3);
    for (int i = 0; i < 3; ++i) a3(i) = rng.next_gaussian();
    const Vector rhs = pod::rom_rhs(a3, cut);
    Vector expected = cut.b + cut.a * a3;
    for (int i = 0; i < 3; ++i)
        expected(i) -= a3.dot(cut.b_tensor[static_cast<std::size_t>(i)] * a3);
    CHECK((rhs - expected).norm() == 0.0);
}

TEST_CASE("control and ancillary reduced models share the FOM bias pattern") {
    // Remark-style check: the reduced-model bias beta = rom(proj x) -
    // proj(fom(x)) varies little across nearby states, so control and
    // ancillary biases nearly cancel in the total variate
    Matrix snaps;
    const pod::GalerkinRom rom_full = pod::load_rom(tiny_basis(), &snaps);
    const pod::GalerkinRom rom = truncate_rom(rom_full, 6);
    const qge::PoissonSolver solver(rom.grid);
    const ProjectionPair pair = pod::build_projection_pair(rom, solver);
    const qge::QgeParams params;

    auto fom_day = [&](const Vector& psi) {
        qge::QgeState st{solver.neg_laplacian() * psi, 0.0};
        st = qge::integrate(st, params, solver, qge::kDayTimeUnits);
        return solver.solve(st.omega);
    };
    auto rom_day = [&](const Vector& a0) {
        return integrate_adaptive(
                   [&](double, const Vector& a) { return pod::rom_rhs(a, rom); }, a0,
                   0.0, qge::kDayTimeUnits)
            .y;
    };

    RngStream rng(31);
    const Vector psi_base = solver.solve(snaps.col(10));
    std::vector<Vector> biases;
    for (int k = 0; k < 4; ++k) {
        Vector noise(rom.grid.size());
        for (int i = 0; i < rom.grid.size(); ++i) noise(i) = rng.next_gaussian();
        const Vector psi = psi_base + 0.02 * solver.solve(noise);
        const Vector beta = rom_day(pair.restrict(psi)) - pair.restrict(fom_day(psi));
        biases.push_back(beta);
    }
    for (std::size_t i = 1; i < biases.size(); ++i) {
        const double cosine = biases[0].dot(biases[i]) /
                              (biases[0].norm() * biases[i].norm() + 1e-300);
        CHECK(cosine > 0.9);  // same sign and magnitude pattern
        CHECK(biases[i].norm() <= 2.0 * biases[0].norm());
        CHECK(biases[i].norm() >= 0.5 * biases[0].norm());
    }
}
