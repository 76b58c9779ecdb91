#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "mfenkf/enkf.hpp"
#include "mfenkf/mlenkf.hpp"
#include "toy_common.hpp"

using namespace mfenkf;

namespace {

Matrix random_matrix(RngStream& rng, int rows, int cols) {
    Matrix m(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) m(i, j) = rng.next_gaussian();
    return m;
}

Matrix random_spd(RngStream& rng, int n) {
    const Matrix w = random_matrix(rng, n, n + 2);
    return w * w.transpose() / n + 0.3 * Matrix::Identity(n, n);
}

}  // namespace

TEST_CASE("scalar linear-Gaussian analysis matches the Kalman formula") {
    const double p = 2.0, h = 1.5, r = 0.7;
    const Vector mean = Vector::Constant(1, 1.0);
    const Ensemble prior = toy::exact_moment_ensemble(mean, Matrix::Constant(1, 1, p));
    const ObservationModel obs =
        ObservationModel::linear(Matrix::Constant(1, 1, h), Matrix::Constant(1, 1, r));
    const Vector y = Vector::Constant(1, 2.0);
    GaussianSampler sampler(Matrix(obs.cov_obs.llt().matrixL()), 5);
    const Ensemble analysis = enkf_analysis(prior, obs, y, sampler, 1.0);

    const double k = p * h / (h * p * h + r);
    const double expected = 1.0 + k * (2.0 - h * 1.0);
    CHECK(empirical_mean(analysis)(0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("with exact covariances the mean update is the Kalman one to machine precision") {
    RngStream rng(7);
    const int n = 4, m = 2;
    const Matrix p = random_spd(rng, n);
    const Matrix h = random_matrix(rng, m, n);
    const Matrix r = random_spd(rng, m);
    const Vector mean = random_matrix(rng, n, 1);
    const Vector y = random_matrix(rng, m, 1);

    const Ensemble prior = toy::exact_moment_ensemble(mean, p);
    const ObservationModel obs = ObservationModel::linear(h, r);
    GaussianSampler sampler(Matrix(r.llt().matrixL()), 11);
    const Ensemble analysis = enkf_analysis(prior, obs, y, sampler, 1.0);

    const Matrix k =
        (h * p * h.transpose() + r).llt().solve(h * p.transpose()).transpose();
    const Vector expected = mean + k * (y - h * mean);
    CHECK((empirical_mean(analysis) - expected).norm() <= 1e-12 * expected.norm());
}

TEST_CASE("zero gain limit: huge observation covariance leaves the prior") {
    RngStream rng(13);
    const Ensemble prior{random_matrix(rng, 3, 6)};
    const ObservationModel obs =
        ObservationModel::linear(random_matrix(rng, 2, 3), 1e14 * Matrix::Identity(2, 2));
    GaussianSampler sampler(Matrix::Identity(2, 2), 3);
    const Ensemble analysis =
        enkf_analysis(prior, obs, Vector::Zero(2), sampler, 1.0);
    CHECK((analysis.members - prior.members).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("3-variable system with 1e4 members tracks the exact Kalman filter") {
    RngStream rng(17);
    const int n = 3, m = 2, count = 10000;
    const Matrix p = random_spd(rng, n);
    const Matrix h = random_matrix(rng, m, n);
    const Matrix r = random_spd(rng, m);
    // mean well above the posterior spread so the 3% check is meaningful
    // against the 1e4-member Monte Carlo error
    const Vector mean = 5.0 * random_matrix(rng, n, 1);
    const Vector y = h * mean + Vector{{1.0, -2.0}};

    GaussianSampler prior_sampler(Matrix(p.llt().matrixL()), 19);
    Ensemble prior = prior_sampler.sample(count);
    prior.members.colwise() += mean;
    const ObservationModel obs = ObservationModel::linear(h, r);
    GaussianSampler sampler(Matrix(r.llt().matrixL()), 23);
    const Ensemble analysis = enkf_analysis(prior, obs, y, sampler, 1.0);

    const Matrix k =
        (h * p * h.transpose() + r).llt().solve(h * p.transpose()).transpose();
    const Vector mean_exact = mean + k * (y - h * mean);
    const Matrix cov_exact = (Matrix::Identity(n, n) - k * h) * p;

    CHECK((empirical_mean(analysis) - mean_exact).norm() <= 0.03 * mean_exact.norm());
    const AnomalyMatrix aa = anomalies(analysis);
    CHECK((empirical_cov(aa, aa) - cov_exact).norm() <= 0.03 * cov_exact.norm());
}

TEST_CASE("analysis trace does not exceed the prior trace (consistent gain)") {
    RngStream rng(29);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 3, m = 2, count = 500;
        const Matrix p = random_spd(rng, n);
        const Matrix h = random_matrix(rng, m, n);
        const Matrix r = random_spd(rng, m);
        GaussianSampler prior_sampler(Matrix(p.llt().matrixL()), 100 + trial);
        const Ensemble prior = prior_sampler.sample(count);
        const ObservationModel obs = ObservationModel::linear(h, r);
        GaussianSampler sampler(Matrix(r.llt().matrixL()), 200 + trial);
        const Ensemble analysis =
            enkf_analysis(prior, obs, Vector::Zero(m), sampler, 1.0);
        const AnomalyMatrix ab = anomalies(prior);
        const AnomalyMatrix aa = anomalies(analysis);
        CHECK(empirical_cov(aa, aa).trace() <= empirical_cov(ab, ab).trace() + 1e-9);
    }
}

TEST_CASE("analyses are bitwise deterministic under fixed seeds") {
    RngStream rng(31);
    const Ensemble prior{random_matrix(rng, 4, 8)};
    const ObservationModel obs =
        ObservationModel::linear(random_matrix(rng, 2, 4), random_spd(rng, 2));
    const Vector y = random_matrix(rng, 2, 1);
    auto run = [&] {
        GaussianSampler sampler(Matrix(obs.cov_obs.llt().matrixL()), 77, 1);
        return enkf_analysis(prior, obs, y, sampler, 1.05);
    };
    const Ensemble a = run(), b = run();
    CHECK(std::memcmp(a.members.data(), b.members.data(),
                      sizeof(double) * a.members.size()) == 0);
}

TEST_CASE("localization kernel matrix: symmetric, unit diagonal, monotone") {
    const GridGeometry geom(5, 4);
    const LocalizationKernel kernel{2.0};
    std::vector<int> all_idx(20);
    for (int i = 0; i < 20; ++i) all_idx[static_cast<std::size_t>(i)] = i;
    const LocalizedTaper taper = make_taper(kernel, &geom, all_idx);
    CHECK((taper.obs_obs - taper.obs_obs.transpose()).norm() == 0.0);
    for (int i = 0; i < 20; ++i) CHECK(taper.obs_obs(i, i) == 1.0);
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j) {
            CHECK(taper.obs_obs(i, j) >= 0.0);
            CHECK(taper.obs_obs(i, j) <= 1.0);
        }
    // monotone decrease along a grid row
    CHECK(taper.state_obs(0, 0) > taper.state_obs(1, 0));
    CHECK(taper.state_obs(1, 0) > taper.state_obs(2, 0));

    bool threw = false;
    try {
        make_taper(kernel, nullptr, all_idx);
    } catch (const Error& e) {
        threw = e.code() == "NoGeometry";
    }
    CHECK(threw);
}

TEST_CASE("infinite localization radius reproduces the plain analysis bitwise") {
    RngStream rng(37);
    const int n = 12, m = 3;
    const Ensemble prior{random_matrix(rng, n, 6)};
    const std::vector<int> idx = {1, 5, 9};
    Matrix h = Matrix::Zero(m, n);
    for (int j = 0; j < m; ++j) h(j, idx[static_cast<std::size_t>(j)]) = 1.0;
    const ObservationModel obs = ObservationModel::linear(h, Matrix::Identity(m, m));
    const Vector y = random_matrix(rng, m, 1);
    const RingGeometry geom(n);

    GaussianSampler s1(Matrix::Identity(m, m), 41, 2);
    const Ensemble plain = enkf_analysis(prior, obs, y, s1, 1.02);
    GaussianSampler s2(Matrix::Identity(m, m), 41, 2);
    const Ensemble localized = localized_enkf_analysis(
        prior, obs, y, s2, 1.02, LocalizationKernel{1e9}, &geom, idx);
    CHECK(std::memcmp(plain.members.data(), localized.members.data(),
                      sizeof(double) * plain.members.size()) == 0);
}

TEST_CASE("vanishing localization radius leaves a diagonal-only update") {
    RngStream rng(43);
    const int n = 10, m = 2;
    const Ensemble prior{random_matrix(rng, n, 5)};
    const std::vector<int> idx = {2, 7};
    Matrix h = Matrix::Zero(m, n);
    for (int j = 0; j < m; ++j) h(j, idx[static_cast<std::size_t>(j)]) = 1.0;
    const ObservationModel obs = ObservationModel::linear(h, Matrix::Identity(m, m));
    const RingGeometry geom(n);
    const LocalizedTaper taper = make_taper(LocalizationKernel{1e-6}, &geom, idx);

    // tapered cross covariance vanishes away from the observed locations
    const AnomalyMatrix ax = anomalies(prior);
    const Ensemble hx{obs.h(prior.members)};
    const AnomalyMatrix ah = anomalies(hx);
    const Matrix cov_xh = taper.state_obs.cwiseProduct(empirical_cov(ax, ah));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            if (i != idx[static_cast<std::size_t>(j)])
                CHECK(std::abs(cov_xh(i, j)) < 1e-12);
}

TEST_CASE("ring twin trial: localization beats the plain filter at N=5") {
    // static analysis trials on a ring with smooth truth covariance
    const int n = 40, members = 5, trials = 100;
    const RingGeometry geom(n);
    Matrix sigma(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double d = geom.distance(i, j);
            sigma(i, j) = std::exp(-d * d / 18.0);
        }
    sigma.diagonal().array() += 1e-8;
    std::vector<int> idx;
    for (int i = 0; i < n; i += 4) idx.push_back(i);
    const auto m = static_cast<int>(idx.size());
    Matrix h = Matrix::Zero(m, n);
    for (int j = 0; j < m; ++j) h(j, idx[static_cast<std::size_t>(j)]) = 1.0;
    const Matrix r_obs = 0.25 * Matrix::Identity(m, m);
    const ObservationModel obs = ObservationModel::linear(h, r_obs);
    const LocalizedTaper taper = make_taper(LocalizationKernel{4.0}, &geom, idx);

    GaussianSampler truth_sampler(Matrix(sigma.llt().matrixL()), 51);
    GaussianSampler member_sampler(Matrix(sigma.llt().matrixL()), 52);
    GaussianSampler obs_sampler(Matrix(r_obs.llt().matrixL()), 53);
    double err_plain = 0.0, err_loc = 0.0;
    for (int t = 0; t < trials; ++t) {
        const Vector truth = truth_sampler.sample_vector();
        Ensemble prior = member_sampler.sample(members);
        prior.members.colwise() += truth;  // prior centered on truth
        const Vector y = obs.h(truth).col(0) + obs_sampler.sample_vector();
        GaussianSampler pert1(Matrix(r_obs.llt().matrixL()), 54, static_cast<std::uint64_t>(t));
        GaussianSampler pert2(Matrix(r_obs.llt().matrixL()), 54, static_cast<std::uint64_t>(t));
        const Ensemble plain = enkf_analysis(prior, obs, y, pert1, 1.0);
        const Ensemble localized =
            localized_enkf_analysis(prior, obs, y, pert2, 1.0, taper);
        err_plain += (empirical_mean(plain) - truth).squaredNorm();
        err_loc += (empirical_mean(localized) - truth).squaredNorm();
    }
    CHECK(err_loc < err_plain);
}

TEST_CASE("shrinkage: gamma overrides reproduce the limiting filters") {
    RngStream rng(61);
    const int n = 6, m = 2;
    const Ensemble prior{random_matrix(rng, n, 4)};
    const Matrix h = random_matrix(rng, m, n);
    const ObservationModel obs = ObservationModel::linear(h, random_spd(rng, m));
    const Vector y = random_matrix(rng, m, 1);
    const ShrinkageTarget target = ShrinkageTarget::from_dense(random_spd(rng, n), h);

    GaussianSampler s1(Matrix(obs.cov_obs.llt().matrixL()), 63, 5);
    GaussianSampler s2(Matrix(obs.cov_obs.llt().matrixL()), 63, 5);
    const Ensemble gamma0 = shrinkage_enkf_analysis(prior, obs, y, s1, 1.0, target, 0.0);
    const Ensemble plain = enkf_analysis(prior, obs, y, s2, 1.0);
    CHECK((gamma0.members - plain.members).cwiseAbs().maxCoeff() < 1e-12);

    // gamma = 1: the gain comes purely from the normalized target
    GaussianSampler s3(Matrix(obs.cov_obs.llt().matrixL()), 63, 5);
    const Ensemble gamma1 = shrinkage_enkf_analysis(prior, obs, y, s3, 1.0, target, 1.0);
    const AnomalyMatrix ax = anomalies(prior);
    const double mu = ax.anomalies.squaredNorm() / target.trace;
    const Matrix k = (mu * target.h_t_ht + obs.cov_obs)
                         .llt()
                         .solve((mu * target.t_ht).transpose())
                         .transpose();
    const Vector mh = empirical_mean(Ensemble{obs.h(prior.members)});
    const Vector expected_mean = empirical_mean(prior) - k * (mh - y);
    CHECK((empirical_mean(gamma1) - expected_mean).norm() <= 1e-12 * expected_mean.norm());
}

TEST_CASE("rblw-shrunk covariance beats the raw sample covariance (N=4, n=40)") {
    const int n = 40, members = 4;
    GaussianSampler sampler(Matrix::Identity(n, n), 67);
    const Ensemble sample = sampler.sample(members);
    const AnomalyMatrix a = anomalies(sample);
    const double gamma = rblw_intensity(a);
    CHECK(gamma > 0.0);
    CHECK(gamma <= 1.0);
    const Matrix emp = empirical_cov(a, a);
    const Matrix truth = Matrix::Identity(n, n);
    const double mu = a.anomalies.squaredNorm() / n;  // target = identity
    const Matrix shrunk = (1.0 - gamma) * emp + gamma * mu * Matrix::Identity(n, n);
    CHECK((shrunk - truth).norm() <= (emp - truth).norm());
}

TEST_CASE("non-SPD shrinkage target is rejected") {
    Matrix bad = Matrix::Identity(3, 3);
    bad(2, 2) = -1.0;
    bool threw = false;
    try {
        ShrinkageTarget::from_dense(bad, Matrix::Identity(3, 3));
    } catch (const Error& e) {
        threw = e.code() == "TargetNotSPD";
    }
    CHECK(threw);
}

TEST_CASE("corrected MLEnKF: identical control/ancillary collapses to localized EnKF") {
    const auto toy = toy::LinearGaussianToy::make(6, 2, 3, 71);
    RngStream rng(73);
    TotalVariateTriple triple = toy.sample_triple(5, 5, rng);
    triple.ancillary = triple.control;  // signed terms cancel

    const ObservationModel obs = ObservationModel::linear(toy.h, toy.r_obs);
    const Vector y = toy.sample_observation(rng);
    // all-ones taper so the comparison is against the plain filter
    LocalizedTaper taper;
    taper.state_obs = Matrix::Ones(toy.n, toy.m);
    taper.obs_obs = Matrix::Ones(toy.m, toy.m);

    GaussianSampler sx1(Matrix(toy.r_obs.llt().matrixL()), 75, 0);
    GaussianSampler su1(Matrix(toy.r_obs.llt().matrixL()), 76, 0);
    const TotalVariateTriple out =
        mlenkf_corrected_analysis(triple, obs, y, sx1, su1, {1.0, 1.0}, taper);

    GaussianSampler sx2(Matrix(toy.r_obs.llt().matrixL()), 75, 0);
    const Ensemble plain = enkf_analysis(triple.principal, obs, y, sx2, 1.0);
    // same gain and innovations up to the cancellation roundoff; the means
    // are re-centered around the (identical) total-variate mean
    CHECK((empirical_mean(out.principal) - empirical_mean(plain)).norm() < 1e-10);
    const AnomalyMatrix aa = anomalies(out.principal);
    const AnomalyMatrix ap = anomalies(plain);
    CHECK((aa.anomalies - ap.anomalies).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("corrected MLEnKF: r=0 reduces to the localized EnKF bitwise") {
    RngStream rng(81);
    const int n = 8, m = 2;
    TotalVariateTriple triple;
    triple.principal = Ensemble{random_matrix(rng, n, 4)};
    triple.control = Ensemble{Matrix(0, 4)};
    triple.ancillary = Ensemble{Matrix(0, 4)};
    const std::vector<int> idx = {1, 6};
    Matrix h = Matrix::Zero(m, n);
    for (int j = 0; j < m; ++j) h(j, idx[static_cast<std::size_t>(j)]) = 1.0;
    const ObservationModel obs = ObservationModel::linear(h, Matrix::Identity(m, m));
    const Vector y = random_matrix(rng, m, 1);
    const RingGeometry geom(n);
    const LocalizedTaper taper = make_taper(LocalizationKernel{3.0}, &geom, idx);

    GaussianSampler sx1(Matrix::Identity(m, m), 83, 0);
    GaussianSampler su1(Matrix::Identity(m, m), 84, 0);
    const TotalVariateTriple out =
        mlenkf_corrected_analysis(triple, obs, y, sx1, su1, {1.03, 1.0}, taper);
    GaussianSampler sx2(Matrix::Identity(m, m), 83, 0);
    const Ensemble loc = localized_enkf_analysis(triple.principal, obs, y, sx2, 1.03, taper);
    CHECK(std::memcmp(out.principal.members.data(), loc.members.data(),
                      sizeof(double) * loc.members.size()) == 0);
}

TEST_CASE("corrected MLEnKF: exact covariances give the Kalman mean") {
    const auto toy = toy::LinearGaussianToy::make(5, 2, 2, 91);
    // exact-moment ensembles: the signed combination equals the principal
    // covariance, so the gain is the exact Kalman gain
    TotalVariateTriple triple;
    triple.proj = toy.proj;
    triple.principal = toy::exact_moment_ensemble(toy.truth, toy.p);
    triple.control = Ensemble{toy.proj->restrict_cols(triple.principal.members)};
    triple.ancillary =
        toy::exact_moment_ensemble(toy.proj->restrict(toy.truth), toy.cu);

    const ObservationModel obs = ObservationModel::linear(toy.h, toy.r_obs);
    RngStream rng(93);
    const Vector y = toy.sample_observation(rng);
    LocalizedTaper taper;
    taper.state_obs = Matrix::Ones(toy.n, toy.m);
    taper.obs_obs = Matrix::Ones(toy.m, toy.m);
    GaussianSampler sx(Matrix(toy.r_obs.llt().matrixL()), 95, 0);
    GaussianSampler su(Matrix(toy.r_obs.llt().matrixL()), 96, 0);
    const TotalVariateTriple out =
        mlenkf_corrected_analysis(triple, obs, y, sx, su, {1.0, 1.0}, taper);

    const Matrix k = toy.kalman_gain_x();
    const Vector expected = toy.truth + k * (y - toy.h * toy.truth);
    CHECK((empirical_mean(out.principal) - expected).norm() <= 1e-9 * expected.norm());
    // mean-consistency after re-centering
    CHECK((empirical_mean(out.control) -
           toy.proj->restrict(empirical_mean(out.principal)))
              .norm() < 1e-10);
    CHECK((empirical_mean(out.control) - empirical_mean(out.ancillary)).norm() < 1e-10);
}
