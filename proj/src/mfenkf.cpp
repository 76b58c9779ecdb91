#include "mfenkf/mfenkf.hpp"

#include <cmath>
#include <cstring>
#include <thread>

#include "mfenkf/archive.hpp"

namespace mfenkf {

void TotalVariateTriple::validate() const {
    require(control.count() == principal.count(), "ShapeMismatch",
            "control members must pair with principal members");
    if (proj) {
        require(proj->full_dim() == principal.dim(), "ShapeMismatch",
                "projection full dimension");
        require(control.dim() == proj->reduced_dim() &&
                    ancillary.dim() == proj->reduced_dim(),
                "ShapeMismatch", "reduced-space dimensions");
    } else {
        require(control.dim() == 0 && ancillary.dim() == 0, "ShapeMismatch",
                "missing projection for a nontrivial reduced space");
    }
}

NoiseMethod NoiseMethod::method_ii(double s) {
    require(s > 0.0, "InvalidNoiseScale", "method (ii) needs s > 0");
    return {Kind::MethodII, s};
}

double noise_cov_scale(const NoiseMethod& method, int levels) {
    require(levels >= 0, "ShapeMismatch");
    if (levels == 0) return 1.0;
    if (method.kind == NoiseMethod::Kind::MethodI) {
        require(levels == 1, "UnsupportedNoiseMethod",
                "method (i) is defined for the two-fidelity filter only");
        return 1.0;
    }
    const double q = method.s * method.s / 4.0;
    double partial = 0.0, ql = 1.0;
    for (int l = 0; l < levels; ++l) {
        partial += ql;
        ql *= q;
    }
    const double c0 = 1.0 - method.s / 2.0;
    return c0 * c0 * partial + ql;  // ql == q^levels here
}

ObsPerturbations perturb_observations(const NoiseMethod& method, const Matrix& cov_obs,
                                      Eigen::Index n_x, Eigen::Index n_u,
                                      GaussianSampler& sampler_x,
                                      GaussianSampler& sampler_u) {
    ObsPerturbations p;
    p.eta_x = sampler_x.sample(n_x).members;
    if (method.kind == NoiseMethod::Kind::MethodI) {
        p.eta_uhat = p.eta_x;  // the identical draw supports the projection ansatz
        p.eta_u = std::sqrt(3.0) * sampler_u.sample(n_u).members;
    } else {
        p.eta_uhat = method.s * p.eta_x;
        p.eta_u = method.s * sampler_u.sample(n_u).members;
    }
    require(p.eta_x.rows() == cov_obs.rows(), "ShapeMismatch", "perturbation dim");
    return p;
}

void propagate_members(Matrix& members, const MemberPropagator& f, int threads) {
    const int count = static_cast<int>(members.cols());
    if (count == 0) return;
    auto run_range = [&](int lo, int hi, std::exception_ptr& err) {
        for (int k = lo; k < hi; ++k) {
            try {
                Vector next = f(members.col(k), k);
                require(next.size() == members.rows() && next.allFinite(),
                        "ModelBlowUp", "member " + std::to_string(k));
                members.col(k) = next;
            } catch (const Error& e) {
                err = std::make_exception_ptr(
                    Error("ModelBlowUp", "member " + std::to_string(k) + ": " + e.what()));
                return;
            }
        }
    };
    if (threads <= 1 || count == 1) {
        std::exception_ptr err;
        run_range(0, count, err);
        if (err) std::rethrow_exception(err);
        return;
    }
    const int nthreads = std::min(threads, count);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(static_cast<std::size_t>(nthreads));
    const int chunk = (count + nthreads - 1) / nthreads;
    for (int t = 0; t < nthreads; ++t) {
        const int lo = t * chunk, hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi, t] { run_range(lo, hi, errs[static_cast<std::size_t>(t)]); });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

void mf_forecast(TotalVariateTriple& triple, const MemberPropagator& fom,
                 const MemberPropagator& rom_control,
                 const MemberPropagator& rom_ancillary, int threads) {
    triple.validate();
    if (triple.reduced_dim() > 0)
        triple.control.members = triple.proj->restrict_cols(triple.principal.members);
    propagate_members(triple.principal.members, fom, threads);
    if (triple.reduced_dim() > 0) {
        propagate_members(triple.control.members, rom_control, threads);
        propagate_members(triple.ancillary.members, rom_ancillary, threads);
    }
}

void mf_forecast(TotalVariateTriple& triple, const MemberPropagator& fom,
                 const MemberPropagator& rom, int threads) {
    mf_forecast(triple, fom, rom, rom, threads);
}

namespace {

struct SplitEnsemble {
    Vector mean;
    AnomalyMatrix a;
};

SplitEnsemble split_inflated(const Ensemble& e, double alpha) {
    SplitEnsemble s;
    s.mean = empirical_mean(e);
    s.a = inflate(anomalies(e), alpha);
    return s;
}

IndirectObs eval_indirect(const Matrix& x_members, const std::vector<Matrix>& uhat_members,
                          const std::vector<Matrix>& u_members,
                          const std::vector<Matrix>& lifts, const ObservationModel& obs) {
    IndirectObs eval;
    eval.h_principal = obs.h(x_members);
    require(eval.h_principal.rows() == obs.dim(), "ShapeMismatch",
            "observation operator output");
    eval.combined_mean =
        eval.h_principal.rowwise().sum() / static_cast<double>(x_members.cols());
    double coeff = 1.0;
    for (std::size_t l = 0; l < uhat_members.size(); ++l) {
        coeff *= 0.5;
        eval.h_control.push_back(obs.h(lifts[l] * uhat_members[l]));
        eval.h_ancillary.push_back(obs.h(lifts[l] * u_members[l]));
        const Vector mh_uhat = eval.h_control.back().rowwise().sum() /
                               static_cast<double>(uhat_members[l].cols());
        const Vector mh_u = eval.h_ancillary.back().rowwise().sum() /
                            static_cast<double>(u_members[l].cols());
        eval.combined_mean -= coeff * (mh_uhat - mh_u);
    }
    return eval;
}

// Gain of the telescoped total variate from the empirical blocks; the
// control/ancillary pair at each level is treated as independent, and level
// pairings (principal with control 1, ancillary l with control l+1) carry
// the cross terms.
Matrix assemble_gain(const Matrix& ax, const Matrix& ahx, const std::vector<Matrix>& lifts,
                     const std::vector<Matrix>& a_uhat, const std::vector<Matrix>& ah_uhat,
                     const std::vector<Matrix>& a_u, const std::vector<Matrix>& ah_u,
                     const Matrix& cov_obs_z) {
    const std::size_t levels = a_uhat.size();
    Matrix cov_zh = ax * ahx.transpose();
    Matrix cov_hh = ahx * ahx.transpose();
    double coeff = 1.0;  // 2^-l
    for (std::size_t l = 0; l < levels; ++l) {
        coeff *= 0.5;
        const double sq = coeff * coeff;
        const Matrix lifted_uhat = lifts[l] * a_uhat[l];
        const Matrix lifted_u = lifts[l] * a_u[l];
        cov_zh += sq * (lifted_uhat * ah_uhat[l].transpose() +
                        lifted_u * ah_u[l].transpose());
        cov_hh += sq * (ah_uhat[l] * ah_uhat[l].transpose() +
                        ah_u[l] * ah_u[l].transpose());
        if (l == 0) {
            cov_zh -= coeff * (ax * ah_uhat[0].transpose() +
                               lifted_uhat * ahx.transpose());
            cov_hh -= coeff * (ahx * ah_uhat[0].transpose() +
                               ah_uhat[0] * ahx.transpose());
        } else {
            // pairing between level-(l-1) ancillary and level-l control
            const double cross = 2.0 * coeff * coeff;  // 2^-(2l-1) with coeff = 2^-l
            cov_zh -= cross * ((lifts[l - 1] * a_u[l - 1]) * ah_uhat[l].transpose() +
                               lifted_uhat * ah_u[l - 1].transpose());
            cov_hh -= cross * (ah_u[l - 1] * ah_uhat[l].transpose() +
                               ah_uhat[l] * ah_u[l - 1].transpose());
        }
    }
    const Matrix innovation = cov_hh + cov_obs_z;
    return solve_spd_right(innovation, cov_zh, 1e-10, "SingularInnovation");
}

}  // namespace

IndirectObs indirect_observation(const TotalVariateTriple& triple,
                                 const ObservationModel& obs) {
    triple.validate();
    if (triple.reduced_dim() == 0)
        return eval_indirect(triple.principal.members, {}, {}, {}, obs);
    return eval_indirect(triple.principal.members, {triple.control.members},
                         {triple.ancillary.members}, {triple.proj->phi()}, obs);
}

Matrix mf_gain(const TotalVariateTriple& triple, const IndirectObs& eval,
               const Matrix& cov_obs_z) {
    triple.validate();
    const Matrix ax = anomalies(triple.principal).anomalies;
    const Matrix ahx = anomalies(Ensemble{eval.h_principal}).anomalies;
    if (triple.reduced_dim() == 0)
        return assemble_gain(ax, ahx, {}, {}, {}, {}, {}, cov_obs_z);
    return assemble_gain(ax, ahx, {triple.proj->phi()},
                         {anomalies(triple.control).anomalies},
                         {anomalies(Ensemble{eval.h_control[0]}).anomalies},
                         {anomalies(triple.ancillary).anomalies},
                         {anomalies(Ensemble{eval.h_ancillary[0]}).anomalies}, cov_obs_z);
}

void FidelityLadder::validate() const {
    Eigen::Index parent_dim = principal.dim();
    Eigen::Index parent_count = principal.count();
    require(parent_count >= 2, "InsufficientMembers");
    for (std::size_t l = 0; l < levels.size(); ++l) {
        const auto& lev = levels[l];
        require(lev.proj != nullptr, "DimensionChain", "missing projection");
        require(lev.proj->full_dim() == parent_dim, "DimensionChain",
                "projection does not map the parent space");
        const Eigen::Index r = lev.proj->reduced_dim();
        require(l == 0 ? r <= parent_dim : r < parent_dim, "DimensionChain",
                "reduced dimensions must decrease down the ladder");
        require(lev.control.dim() == r && lev.ancillary.dim() == r, "ShapeMismatch");
        require(lev.control.count() == parent_count, "ShapeMismatch",
                "control members must pair with the parent ensemble");
        require(lev.ancillary.count() >= 2, "InsufficientMembers");
        parent_dim = r;
        parent_count = lev.ancillary.count();
    }
}

std::vector<Matrix> FidelityLadder::accumulated_lifts() const {
    std::vector<Matrix> lifts;
    for (std::size_t l = 0; l < levels.size(); ++l)
        lifts.push_back(l == 0 ? levels[0].proj->phi()
                               : Matrix(lifts[l - 1] * levels[l].proj->phi()));
    return lifts;
}

std::vector<Matrix> FidelityLadder::accumulated_restrictions() const {
    std::vector<Matrix> res;
    for (std::size_t l = 0; l < levels.size(); ++l)
        res.push_back(l == 0 ? levels[0].proj->phi_star()
                             : Matrix(levels[l].proj->phi_star() * res[l - 1]));
    return res;
}

FidelityLadder ladder_from_triple(const TotalVariateTriple& triple) {
    triple.validate();
    FidelityLadder ladder;
    ladder.principal = triple.principal;
    if (triple.reduced_dim() > 0)
        ladder.levels.push_back({triple.control, triple.ancillary, triple.proj});
    return ladder;
}

TotalVariateTriple triple_from_ladder(const FidelityLadder& ladder,
                                      std::shared_ptr<const ProjectionPair> proj) {
    TotalVariateTriple t;
    t.principal = ladder.principal;
    t.proj = std::move(proj);
    if (!ladder.levels.empty()) {
        t.control = ladder.levels[0].control;
        t.ancillary = ladder.levels[0].ancillary;
    } else {
        t.control.members.resize(0, t.principal.count());
        t.ancillary.members.resize(0, t.principal.count());
    }
    return t;
}

void telescopic_forecast(FidelityLadder& ladder, const MemberPropagator& fom,
                         const std::vector<MemberPropagator>& rom_control,
                         const std::vector<MemberPropagator>& rom_ancillary,
                         int threads) {
    ladder.validate();
    require(rom_control.size() == ladder.levels.size() &&
                rom_ancillary.size() == ladder.levels.size(),
            "ShapeMismatch", "one reduced model per level");
    // level-l control variates are projections of the parent analysis
    const Matrix* parent = &ladder.principal.members;
    for (auto& lev : ladder.levels) {
        lev.control.members = lev.proj->restrict_cols(*parent);
        parent = &lev.ancillary.members;
    }
    propagate_members(ladder.principal.members, fom, threads);
    for (std::size_t l = 0; l < ladder.levels.size(); ++l) {
        propagate_members(ladder.levels[l].control.members, rom_control[l], threads);
        propagate_members(ladder.levels[l].ancillary.members, rom_ancillary[l], threads);
    }
}

FidelityLadder telescopic_analysis(const FidelityLadder& forecast,
                                   const ObservationModel& obs, const Vector& y,
                                   const NoiseMethod& method, GaussianSampler& sampler_x,
                                   GaussianSampler& sampler_u, double alpha_principal,
                                   const std::vector<double>& alpha_ancillary,
                                   Recenter recenter) {
    forecast.validate();
    const std::size_t levels = forecast.levels.size();
    require(alpha_ancillary.size() == levels, "ShapeMismatch",
            "one ancillary inflation per level");

    const SplitEnsemble x = split_inflated(forecast.principal, alpha_principal);
    std::vector<SplitEnsemble> uhat(levels), u(levels);
    for (std::size_t l = 0; l < levels; ++l) {
        const double parent_alpha = l == 0 ? alpha_principal : alpha_ancillary[l - 1];
        uhat[l] = split_inflated(forecast.levels[l].control, parent_alpha);
        u[l] = split_inflated(forecast.levels[l].ancillary, alpha_ancillary[l]);
    }

    const std::vector<Matrix> lifts = forecast.accumulated_lifts();
    const std::vector<Matrix> restr = forecast.accumulated_restrictions();

    // indirect observations on the inflated ensembles
    std::vector<Matrix> uhat_members(levels), u_members(levels);
    for (std::size_t l = 0; l < levels; ++l) {
        uhat_members[l] = assemble(uhat[l].mean, uhat[l].a).members;
        u_members[l] = assemble(u[l].mean, u[l].a).members;
    }
    const IndirectObs eval = eval_indirect(assemble(x.mean, x.a).members, uhat_members,
                                           u_members, lifts, obs);

    SplitEnsemble hx{empirical_mean(Ensemble{eval.h_principal}),
                     anomalies(Ensemble{eval.h_principal})};
    std::vector<SplitEnsemble> h_uhat(levels), h_u(levels);
    for (std::size_t l = 0; l < levels; ++l) {
        h_uhat[l] = {empirical_mean(Ensemble{eval.h_control[l]}),
                     anomalies(Ensemble{eval.h_control[l]})};
        h_u[l] = {empirical_mean(Ensemble{eval.h_ancillary[l]}),
                  anomalies(Ensemble{eval.h_ancillary[l]})};
    }

    // perturbations: principal stream first, then one ancillary stream per
    // level (method (i): cov 3R; method (ii): cov s^2l R)
    const AnomalyMatrix a_eta_x =
        detail::centered_perturbations(sampler_x, forecast.principal.count());
    std::vector<AnomalyMatrix> a_eta_u(levels);
    double level_scale = 1.0;
    for (std::size_t l = 0; l < levels; ++l) {
        level_scale =
            method.kind == NoiseMethod::Kind::MethodI ? std::sqrt(3.0) : level_scale * method.s;
        AnomalyMatrix a = detail::centered_perturbations(
            sampler_u, forecast.levels[l].ancillary.count());
        a.anomalies *= level_scale;
        a_eta_u[l] = std::move(a);
    }

    std::vector<Matrix> a_uhat_m(levels), ah_uhat_m(levels), a_u_m(levels), ah_u_m(levels);
    for (std::size_t l = 0; l < levels; ++l) {
        a_uhat_m[l] = uhat[l].a.anomalies;
        ah_uhat_m[l] = h_uhat[l].a.anomalies;
        a_u_m[l] = u[l].a.anomalies;
        ah_u_m[l] = h_u[l].a.anomalies;
    }
    const Matrix cov_obs_z =
        noise_cov_scale(method, static_cast<int>(levels)) * obs.cov_obs;
    const Matrix k = assemble_gain(x.a.anomalies, hx.a.anomalies, lifts, a_uhat_m,
                                   ah_uhat_m, a_u_m, ah_u_m, cov_obs_z);

    // means of the total variate before/after the update
    Vector mean_zb = x.mean;
    Vector mean_hzb = hx.mean;
    double coeff = 1.0;
    for (std::size_t l = 0; l < levels; ++l) {
        coeff *= 0.5;
        mean_zb -= coeff * (lifts[l] * (uhat[l].mean - u[l].mean));
        mean_hzb -= coeff * (h_uhat[l].mean - h_u[l].mean);
    }
    const Vector mean_za = mean_zb - k * (mean_hzb - y);

    // anomaly updates
    FidelityLadder analysis = forecast;
    AnomalyMatrix ax_a;
    ax_a.anomalies = x.a.anomalies - k * (hx.a.anomalies - a_eta_x.anomalies);
    std::vector<AnomalyMatrix> au_a(levels), auhat_a(levels);
    for (std::size_t l = 0; l < levels; ++l) {
        au_a[l].anomalies =
            u[l].a.anomalies -
            (restr[l] * k) * (h_u[l].a.anomalies - a_eta_u[l].anomalies);
        auhat_a[l].anomalies =
            forecast.levels[l].proj->restrict_cols(l == 0 ? ax_a.anomalies
                                                          : au_a[l - 1].anomalies);
    }

    // mean re-centering
    Vector mean_x_a;
    std::vector<Vector> mean_u_a(levels), mean_uhat_a(levels);
    if (recenter == Recenter::TotalVariate) {
        mean_x_a = mean_za;
        for (std::size_t l = 0; l < levels; ++l) {
            mean_u_a[l] = restr[l] * mean_za;
            mean_uhat_a[l] = mean_u_a[l];
        }
    } else {
        mean_x_a = x.mean - k * (hx.mean - y);
        for (std::size_t l = 0; l < levels; ++l) {
            mean_u_a[l] = u[l].mean - (restr[l] * k) * (h_u[l].mean - y);
            mean_uhat_a[l] = mean_u_a[l];
        }
    }

    analysis.principal = assemble(mean_x_a, ax_a);
    require(analysis.principal.members.allFinite(), "DivergedAnalysis");
    for (std::size_t l = 0; l < levels; ++l) {
        analysis.levels[l].control = assemble(mean_uhat_a[l], auhat_a[l]);
        analysis.levels[l].ancillary = assemble(mean_u_a[l], au_a[l]);
        require(analysis.levels[l].control.members.allFinite() &&
                    analysis.levels[l].ancillary.members.allFinite(),
                "DivergedAnalysis");
    }
    return analysis;
}

TotalVariateTriple mf_analysis(const TotalVariateTriple& forecast,
                               const ObservationModel& obs, const Vector& y,
                               const NoiseMethod& method, GaussianSampler& sampler_x,
                               GaussianSampler& sampler_u, const MfInflation& inflation,
                               Recenter recenter) {
    FidelityLadder ladder = ladder_from_triple(forecast);
    const std::vector<double> alpha_u(ladder.levels.size(), inflation.ancillary);
    FidelityLadder analyzed =
        telescopic_analysis(ladder, obs, y, method, sampler_x, sampler_u,
                            inflation.principal, alpha_u, recenter);
    TotalVariateTriple out = triple_from_ladder(analyzed, forecast.proj);
    if (ladder.levels.empty()) {
        out.control = forecast.control;  // nothing in the reduced space to update
        out.ancillary = forecast.ancillary;
    }
    return out;
}

Vector total_variate_mean(const TotalVariateTriple& triple) {
    triple.validate();
    Vector mean = empirical_mean(triple.principal);
    if (triple.reduced_dim() > 0)
        mean -= 0.5 * triple.proj->lift(empirical_mean(triple.control) -
                                        empirical_mean(triple.ancillary));
    return mean;
}

Vector total_variate_mean(const FidelityLadder& ladder) {
    Vector mean = empirical_mean(ladder.principal);
    const std::vector<Matrix> lifts = ladder.accumulated_lifts();
    double coeff = 1.0;
    for (std::size_t l = 0; l < ladder.levels.size(); ++l) {
        coeff *= 0.5;
        mean -= coeff * (lifts[l] * (empirical_mean(ladder.levels[l].control) -
                                     empirical_mean(ladder.levels[l].ancillary)));
    }
    return mean;
}

Ensemble total_variate_ensemble(const TotalVariateTriple& triple) {
    triple.validate();
    if (triple.reduced_dim() == 0) return triple.principal;
    require(triple.ancillary.count() >= triple.principal.count(), "InsufficientMembers",
            "need at least N_x ancillary members");
    const auto n_x = triple.principal.count();
    Ensemble z;
    z.members = triple.principal.members -
                0.5 * (triple.proj->phi() *
                       (triple.control.members - triple.ancillary.members.leftCols(n_x)));
    return z;
}

namespace {

std::vector<std::uint64_t> pack_rng(const RngStream::State& st) {
    std::vector<std::uint64_t> v(st.s.begin(), st.s.end());
    v.push_back(st.has_cached ? 1 : 0);
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(st.cached));
    std::memcpy(&bits, &st.cached, sizeof(bits));
    v.push_back(bits);
    return v;
}

RngStream::State unpack_rng(const std::vector<std::uint64_t>& v) {
    require(v.size() == 6, "ArchiveCorrupt", "rng state size");
    RngStream::State st;
    for (int i = 0; i < 4; ++i) st.s[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)];
    st.has_cached = v[4] != 0;
    std::memcpy(&st.cached, &v[5], sizeof(st.cached));
    return st;
}

}  // namespace

void save_checkpoint(const std::string& path, const TotalVariateTriple& triple,
                     std::uint64_t step, const RngStream::State& rng_x,
                     const RngStream::State& rng_u) {
    ArrayArchive ar;
    ar.put("principal", triple.principal.members);
    ar.put("control", triple.control.members);
    ar.put("ancillary", triple.ancillary.members);
    ar.put_u64("step", {step});
    ar.put_u64("rng_x", pack_rng(rng_x));
    ar.put_u64("rng_u", pack_rng(rng_u));
    ar.save_file(path);
}

Checkpoint load_checkpoint(const std::string& path) {
    ArrayArchive ar = ArrayArchive::load_file(path);
    Checkpoint cp;
    cp.triple.principal.members = ar.matrix("principal");
    cp.triple.control.members = ar.matrix("control");
    cp.triple.ancillary.members = ar.matrix("ancillary");
    cp.step = ar.u64("step").at(0);
    cp.rng_x = unpack_rng(ar.u64("rng_x"));
    cp.rng_u = unpack_rng(ar.u64("rng_u"));
    return cp;
}

}  // namespace mfenkf
