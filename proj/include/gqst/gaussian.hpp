#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>

// Closed-form single-mode Gaussian state math. Convention: dimensionless
// sigma with vacuum = identity, so the Heisenberg bound is det(sigma) >= 1
// and the sampled quadrature variance at phase theta is V(theta)/2.

namespace gqst {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kPhysTol = 1e-12;

/// Real symmetric 2x2 second-moment matrix; only the three independent
/// entries are stored, so symmetry holds by construction.
struct CovarianceMatrix {
    double xx = 1.0;
    double pp = 1.0;
    double xp = 0.0;

    double det() const { return xx * pp - xp * xp; }
    double trace() const { return xx + pp; }
};

/// Diagonal form plus the alignment angle theta0 in [0, pi).
/// sxx is the minimum variance, spp the maximum.
struct DiagonalCovariance {
    double sxx = 1.0;
    double spp = 1.0;
    double theta0 = 0.0;

    double det() const { return sxx * spp; }
};

/// (r, n, phi, epsilon): squeezing parameter, mean thermal photon number,
/// squeezing phase, and the weight of the thermal component in the
/// two-component mixture.
struct StateParams {
    double r = 0.0;
    double n = 0.0;
    double phi = 0.0;
    double epsilon = 0.0;

    double theta0() const { return 0.5 * phi; }
    bool valid() const {
        return r >= 0.0 && n >= 0.0 && phi >= 0.0 && phi <= kPi &&
               epsilon >= 0.0 && epsilon <= 0.5;
    }
};

/// Lower-triangular factor L of the shifted matrix tau = L L^T.
struct TauFactor {
    double l11 = 1.0;
    double l21 = 0.0;
    double l22 = 1.0;
};

/// Symmetric 2x2 shifted matrix tau = sigma + A.
struct TauMatrix {
    double xx = 0.0;
    double pp = 2.0;
    double xp = 0.0;

    double det() const { return xx * pp - xp * xp; }
};

/// Covariance of the squeezed thermal component: the diagonal
/// (2n+1)*diag(e^{-2r}, e^{2r}) rotated to alignment angle phi/2.
/// The mixture weight epsilon is ignored here.
CovarianceMatrix squeezed_thermal_covariance(const StateParams& params);

/// Second-moment covariance of the zero-mean two-component mixture:
/// (1-eps)*sigma_S + eps*(2n+1)*I.
CovarianceMatrix mixture_covariance(const StateParams& params);

/// sigma -> R(theta) sigma R(theta)^T with R = [[cos,-sin],[sin,cos]].
/// rotate_covariance(diag, theta0) reconstructs the state whose
/// minimum-variance phase is theta0; determinant is preserved.
CovarianceMatrix rotate_covariance(const CovarianceMatrix& sigma, double theta);

/// Inverse of rotate_covariance on diagonal matrices: eigenvalues ordered
/// sxx <= spp and the minimum-variance angle folded into [0, pi).
/// Isotropic input gives theta0 = 0.
DiagonalCovariance diagonalize(const CovarianceMatrix& sigma);

/// rotate_covariance(diag(sxx, spp), theta0).
CovarianceMatrix to_covariance(const DiagonalCovariance& diag);

/// Theta-dependent variance of the mixture in the sigma convention:
/// (1-eps)(2n+1)[e^{-2r} cos^2(theta - theta0) + e^{2r} sin^2(theta - theta0)]
///   + eps(2n+1).
double variance_curve(const StateParams& params, double theta);

/// Variance at measurement phase theta for a diagonalized state:
/// sxx cos^2(theta - theta0) + spp sin^2(theta - theta0).
double variance_at(const DiagonalCovariance& diag, double theta);

/// Heisenberg test: xx > 0, pp > 0 and det >= 1 - kPhysTol.
bool is_physical(const CovarianceMatrix& sigma);
bool is_physical(const DiagonalCovariance& diag);

/// tau = sigma + A with A = diag(-(xx+1)/(pp+1), 1).
/// Identity: det(tau) = det(sigma) - 1.
TauMatrix sigma_to_tau(const CovarianceMatrix& sigma);

/// Inverse of sigma_to_tau. Requires tau_pp > 1 + kPhysTol; throws
/// std::domain_error otherwise (out-of-domain network output).
CovarianceMatrix tau_to_sigma(const TauMatrix& tau);

/// tau = L L^T followed by tau_to_sigma. Requires l21^2 + l22^2 > 1.
CovarianceMatrix cholesky_to_sigma(const TauFactor& factor);

struct SqAsq {
    double sq_db = 0.0;
    double asq_db = 0.0;
};

/// SQ = 10 log10(sxx), ASQ = 10 log10(spp); vacuum gives (0, 0).
SqAsq sq_asq(const DiagonalCovariance& diag);

/// p = det(sigma)^{-1/2}, in (0, 1] for physical states.
double purity(const CovarianceMatrix& sigma);
double purity(const DiagonalCovariance& diag);

/// Squared-overlap fidelity of two zero-mean single-mode Gaussian states:
/// F = 2 / (sqrt(Delta + delta) - sqrt(delta)),
/// Delta = det(sigma + sigma0), delta = (det sigma - 1)(det sigma0 - 1).
/// Throws std::invalid_argument if either input fails is_physical.
double gaussian_fidelity(const CovarianceMatrix& sigma,
                         const CovarianceMatrix& sigma0);

/// Squeezing level in dB <-> dimensionless r; a pure state with parameter
/// db_to_r(L) has ASQ = +L dB and SQ = -L dB.
double db_to_r(double level_db);
double r_to_db(double r);

/// Fold an angle into [0, pi).
double fold_angle(double theta);

}  // namespace gqst
