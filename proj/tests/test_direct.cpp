#include <doctest.h>

#include <cmath>

#include "gqst/direct.hpp"
#include "gqst/sequence.hpp"

using namespace gqst;

TEST_CASE("curve fit is exact on noiseless variance bins") {
    const DiagonalCovariance truth{0.2, 5.0, 1.1};
    std::vector<VarianceBin> bins;
    for (int i = 0; i < 16; ++i) {
        const double theta = (i + 0.5) * kPi / 16.0;
        bins.push_back({theta, variance_at(truth, theta), 100.0});
    }
    const DiagonalCovariance fit = fit_variance_curve(bins);
    CHECK(fit.sxx == doctest::Approx(truth.sxx).epsilon(1e-10));
    CHECK(fit.spp == doctest::Approx(truth.spp).epsilon(1e-10));
    CHECK(fit.theta0 == doctest::Approx(truth.theta0).epsilon(1e-10));
}

TEST_CASE("binned variances require enough populated bins") {
    QuadratureSequence tiny;
    for (int i = 0; i < 20; ++i)
        tiny.points.push_back({0.1 * i, 0.01});  // all in one bin
    CHECK_THROWS_AS(binned_variances(tiny, 32), estimation_error);
}

TEST_CASE("large-sample recovery of a mixed state") {
    const StateParams params{db_to_r(10.0), 0.2, 1.8, 0.03};
    const auto seq =
        generate_sequence(params, 1 << 19, PhaseScheme::UniformRandom, 21);
    const CovEstimate est = estimate_direct(seq, 32);
    const DiagonalCovariance truth = diagonalize(mixture_covariance(params));
    const SqAsq got = sq_asq(est.diag), want = sq_asq(truth);
    CHECK(std::abs(got.sq_db - want.sq_db) < 0.4);
    CHECK(std::abs(got.asq_db - want.asq_db) < 0.4);
    CHECK(std::abs(est.diag.theta0 - truth.theta0) < 0.02);
    CHECK(est.bins_used == 32);
    CHECK(est.residual < 0.5);
    CHECK(is_physical(est.diag));
}

TEST_CASE("estimate is equivariant under a phase shift of the state") {
    const StateParams base{db_to_r(8.0), 0.1, 0.6, 0.0};
    const StateParams shifted{base.r, base.n, base.phi + 1.0, 0.0};
    const auto sa = generate_sequence(base, 1 << 17,
                                      PhaseScheme::UniformRandom, 3);
    const auto sb = generate_sequence(shifted, 1 << 17,
                                      PhaseScheme::UniformRandom, 3);
    const DiagonalCovariance ea = estimate_direct(sa, 32).diag;
    const DiagonalCovariance eb = estimate_direct(sb, 32).diag;
    CHECK(std::abs(ea.sxx - eb.sxx) < 0.03 * ea.spp);
    CHECK(std::abs(ea.spp - eb.spp) < 0.03 * ea.spp);
    const double dtheta = fold_angle(eb.theta0 - ea.theta0);
    CHECK(std::min(dtheta, kPi - dtheta) ==
          doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("vacuum estimates are projected to the physical set") {
    // Finite vacuum samples often land at det < 1; projection must fix it.
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto seq = generate_sequence({0, 0, 0, 0}, 4096,
                                           PhaseScheme::UniformRandom, seed);
        const DiagonalCovariance est = estimate_direct(seq, 16).diag;
        CHECK(is_physical(est));
        CHECK(est.det() >= 1.0);
    }
}

TEST_CASE("projection rescales only unphysical estimates") {
    const DiagonalCovariance ok{0.5, 3.0, 0.2};
    const DiagonalCovariance same = project_physical(ok);
    CHECK(same.sxx == ok.sxx);
    CHECK(same.spp == ok.spp);

    const DiagonalCovariance bad{0.4, 2.0, 0.2};  // det 0.8
    const DiagonalCovariance fixed = project_physical(bad);
    CHECK(fixed.det() == doctest::Approx(1.0 + 1e-9));
    CHECK(fixed.spp / fixed.sxx == doctest::Approx(bad.spp / bad.sxx));
    CHECK(fixed.theta0 == bad.theta0);
}
