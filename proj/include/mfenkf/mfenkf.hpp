#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mfenkf/enkf.hpp"
#include "mfenkf/projection.hpp"

namespace mfenkf {

/// Linked (principal, control, ancillary) ensembles representing one total
/// variate. Column k of the control pairs with column k of the principal.
/// r = 0 (empty reduced space) degenerates to a plain EnKF state.
struct TotalVariateTriple {
    Ensemble principal;  // n x N_x
    Ensemble control;    // r x N_x
    Ensemble ancillary;  // r x N_u
    std::shared_ptr<const ProjectionPair> proj;

    Eigen::Index reduced_dim() const { return proj ? proj->reduced_dim() : 0; }
    void validate() const;
};

/// Observation-perturbation scheme for the indirect observations.
struct NoiseMethod {
    enum class Kind { MethodI, MethodII };
    Kind kind = Kind::MethodI;
    double s = 1.0;  // method (ii) scaling, > 0

    static NoiseMethod method_i() { return {Kind::MethodI, 1.0}; }
    static NoiseMethod method_ii(double s);
};

/// Cov(eta_Z) = scale * R for the telescoped total variate with L levels:
/// method (i) keeps scale 1 (two-fidelity only); method (ii) gives
/// (1-s/2)^2 sum_{l<L} (s^2/4)^l + (s^2/4)^L, i.e. (1+2^(1-2L))/3 at s=1.
double noise_cov_scale(const NoiseMethod& method, int levels);

/// Raw observation-perturbation draws for one analysis (uncentered).
/// Method (i): eta_x = eta_uhat ~ N(0,R), eta_u ~ N(0,3R).
/// Method (ii): eta_uhat = s eta_x, eta_u ~ N(0, s^2 R) independent.
struct ObsPerturbations {
    Matrix eta_x;     // m x N_x
    Matrix eta_uhat;  // m x N_x
    Matrix eta_u;     // m x N_u
};
ObsPerturbations perturb_observations(const NoiseMethod& method, const Matrix& cov_obs,
                                      Eigen::Index n_x, Eigen::Index n_u,
                                      GaussianSampler& sampler_x,
                                      GaussianSampler& sampler_u);

/// Per-member model propagator; pure per member so ensembles may propagate
/// concurrently. The member index lets stateful drivers keep per-member
/// step-size hints.
using MemberPropagator = std::function<Vector(const Vector& state, int member)>;

/// Propagate every column through f; errors are rethrown as
/// ModelBlowUp(member). threads <= 1 runs serially.
void propagate_members(Matrix& members, const MemberPropagator& f, int threads = 1);

/// Forecast step: the control analysis is re-set to the projection of the
/// principal analysis, then principal/FOM and control+ancillary/ROM move
/// forward in time.
void mf_forecast(TotalVariateTriple& triple, const MemberPropagator& fom,
                 const MemberPropagator& rom_control,
                 const MemberPropagator& rom_ancillary, int threads = 1);
void mf_forecast(TotalVariateTriple& triple, const MemberPropagator& fom,
                 const MemberPropagator& rom, int threads = 1);

/// Per-member indirect-observation evaluations H(X), H_r(U^) = H(Phi U^),
/// H_r(U), plus the combined mean of the indirect operator.
struct IndirectObs {
    Matrix h_principal;               // m x N_x
    std::vector<Matrix> h_control;    // per level, m x N_parent
    std::vector<Matrix> h_ancillary;  // per level, m x N_l
    Vector combined_mean;
};

IndirectObs indirect_observation(const TotalVariateTriple& triple,
                                 const ObservationModel& obs);

/// Empirical Kalman gain for the total variate from the five covariance
/// blocks (control and ancillary treated as independent).
Matrix mf_gain(const TotalVariateTriple& triple, const IndirectObs& eval,
               const Matrix& cov_obs_z);  // error: SingularInnovation

struct MfInflation {
    double principal = 1.0;  // shared by principal and control ensembles
    double ancillary = 1.0;
};

/// Mean re-centering scheme after the analysis.
enum class Recenter {
    TotalVariate,         // all three means from mean(Z^a)
    ControlToAncillary,   // two side-by-side filters; control mean <- ancillary mean
};

/// MFEnKF analysis: principal anomalies updated with the total-variate gain,
/// ancillary anomalies updated in reduced space, control anomalies set to
/// the projected principal analysis, means re-centered.
/// Errors: SingularInnovation, DivergedAnalysis.
TotalVariateTriple mf_analysis(const TotalVariateTriple& forecast,
                               const ObservationModel& obs, const Vector& y,
                               const NoiseMethod& method, GaussianSampler& sampler_x,
                               GaussianSampler& sampler_u, const MfInflation& inflation,
                               Recenter recenter = Recenter::TotalVariate);

/// Combined mean of the total variate; the filter's state estimate.
Vector total_variate_mean(const TotalVariateTriple& triple);

/// Reconstructed total-variate ensemble Z_k = X_k - 1/2 Phi (U^_k - U_k)
/// from the first N_x ancillary members (posterior uncertainty proxy).
Ensemble total_variate_ensemble(const TotalVariateTriple& triple);

// --- telescopic extension ---------------------------------------------

/// One fidelity level of the ladder: proj maps the parent space (level l-1,
/// level 0 = principal) onto this level's reduced space.
struct LadderLevel {
    Ensemble control;    // r_l x N_{l-1}, paired with the parent ensemble
    Ensemble ancillary;  // r_l x N_l
    std::shared_ptr<const ProjectionPair> proj;
};

struct FidelityLadder {
    Ensemble principal;
    std::vector<LadderLevel> levels;

    void validate() const;  // error: DimensionChain
    /// Accumulated lifts Phibar_l = Phi_1 ... Phi_l into the principal space.
    std::vector<Matrix> accumulated_lifts() const;
    std::vector<Matrix> accumulated_restrictions() const;
};

FidelityLadder ladder_from_triple(const TotalVariateTriple& triple);
TotalVariateTriple triple_from_ladder(const FidelityLadder& ladder,
                                      std::shared_ptr<const ProjectionPair> proj);

void telescopic_forecast(FidelityLadder& ladder, const MemberPropagator& fom,
                         const std::vector<MemberPropagator>& rom_control,
                         const std::vector<MemberPropagator>& rom_ancillary,
                         int threads = 1);

FidelityLadder telescopic_analysis(const FidelityLadder& forecast,
                                   const ObservationModel& obs, const Vector& y,
                                   const NoiseMethod& method, GaussianSampler& sampler_x,
                                   GaussianSampler& sampler_u, double alpha_principal,
                                   const std::vector<double>& alpha_ancillary,
                                   Recenter recenter = Recenter::TotalVariate);

Vector total_variate_mean(const FidelityLadder& ladder);

// --- checkpointing ------------------------------------------------------

/// Resumable run state: the three ensembles, step index and RNG states.
void save_checkpoint(const std::string& path, const TotalVariateTriple& triple,
                     std::uint64_t step, const RngStream::State& rng_x,
                     const RngStream::State& rng_u);
struct Checkpoint {
    TotalVariateTriple triple;  // proj left empty; comes from the basis archive
    std::uint64_t step = 0;
    RngStream::State rng_x{};
    RngStream::State rng_u{};
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mfenkf
