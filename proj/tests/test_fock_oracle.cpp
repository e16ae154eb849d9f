#include <doctest.h>

#include <cmath>

#include "fock_oracle.hpp"
#include "gqst/gaussian.hpp"

using namespace gqst;

TEST_CASE("number-basis states are well formed") {
    const auto rho = fock::squeezed_thermal_density(0.8, 0.4, 1.2, 64);
    CHECK(rho.trace().real() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((rho - rho.adjoint()).cwiseAbs().maxCoeff() < 1e-12);

    const auto s = fock::squeeze_operator(0.6, 0.3, 48);
    // Unitary away from the truncation corner.
    const auto u = (s * s.adjoint()).topLeftCorner(24, 24).eval();
    CHECK((u - Eigen::MatrixXcd::Identity(24, 24)).cwiseAbs().maxCoeff() <
          1e-6);
}

TEST_CASE("uhlmann fidelity reproduces closed-form values") {
    const int dim = 96;
    const auto vac = fock::squeezed_thermal_density(0, 0, 0, dim);
    const auto th = fock::thermal_density(1.0, dim);
    CHECK(fock::uhlmann_fidelity(vac, th) == doctest::Approx(0.5).epsilon(1e-6));

    const auto sq = fock::squeezed_thermal_density(1.0, 0, 0, dim);
    CHECK(fock::uhlmann_fidelity(vac, sq) ==
          doctest::Approx(1.0 / std::cosh(1.0)).epsilon(1e-6));

    CHECK(fock::uhlmann_fidelity(sq, sq) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("fock oracle agrees with the covariance formula on a sample pair") {
    const StateParams p1{0.9, 0.5, 0.7, 0.0};
    const StateParams p2{0.4, 0.2, 2.1, 0.0};
    const int dim = std::max(fock::trace_cutoff(p1.r, p1.n, p1.phi),
                             fock::trace_cutoff(p2.r, p2.n, p2.phi));
    const double ff = fock::uhlmann_fidelity(
        fock::squeezed_thermal_density(p1.r, p1.n, p1.phi, dim),
        fock::squeezed_thermal_density(p2.r, p2.n, p2.phi, dim));
    const double fg = gaussian_fidelity(squeezed_thermal_covariance(p1),
                                        squeezed_thermal_covariance(p2));
    CHECK(std::abs(ff - fg) < 1e-3);
}
