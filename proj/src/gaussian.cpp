#include "gqst/gaussian.hpp"

#include <algorithm>

namespace gqst {

double fold_angle(double theta) {
    double t = std::fmod(theta, kPi);
    if (t < 0.0) t += kPi;
    if (t >= kPi) t = 0.0;  // fmod rounding at the seam
    return t;
}

CovarianceMatrix squeezed_thermal_covariance(const StateParams& params) {
    if (!params.valid()) throw std::invalid_argument("invalid state parameters");
    const double occ = 2.0 * params.n + 1.0;
    DiagonalCovariance d{occ * std::exp(-2.0 * params.r),
                         occ * std::exp(2.0 * params.r), params.theta0()};
    return to_covariance(d);
}

CovarianceMatrix mixture_covariance(const StateParams& params) {
    CovarianceMatrix s = squeezed_thermal_covariance(params);
    const double occ = 2.0 * params.n + 1.0;
    const double w = params.epsilon;
    return {(1.0 - w) * s.xx + w * occ, (1.0 - w) * s.pp + w * occ,
            (1.0 - w) * s.xp};
}

CovarianceMatrix rotate_covariance(const CovarianceMatrix& sigma, double theta) {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    // R sigma R^T expanded for the three independent entries.
    return {c * c * sigma.xx - 2.0 * c * s * sigma.xp + s * s * sigma.pp,
            s * s * sigma.xx + 2.0 * c * s * sigma.xp + c * c * sigma.pp,
            c * s * (sigma.xx - sigma.pp) + (c * c - s * s) * sigma.xp};
}

CovarianceMatrix to_covariance(const DiagonalCovariance& diag) {
    return rotate_covariance({diag.sxx, diag.spp, 0.0}, diag.theta0);
}

DiagonalCovariance diagonalize(const CovarianceMatrix& sigma) {
    const double mean = 0.5 * (sigma.xx + sigma.pp);
    const double half = 0.5 * (sigma.xx - sigma.pp);
    const double amp = std::hypot(half, sigma.xp);
    if (amp <= 1e-14 * std::abs(mean)) return {mean, mean, 0.0};
    const double theta0 = fold_angle(0.5 * std::atan2(-sigma.xp, -half));
    return {mean - amp, mean + amp, theta0};
}

double variance_curve(const StateParams& params, double theta) {
    if (!params.valid()) throw std::invalid_argument("invalid state parameters");
    const double occ = 2.0 * params.n + 1.0;
    const double c = std::cos(theta - params.theta0());
    const double s = std::sin(theta - params.theta0());
    const double squeezed =
        occ * (std::exp(-2.0 * params.r) * c * c + std::exp(2.0 * params.r) * s * s);
    return (1.0 - params.epsilon) * squeezed + params.epsilon * occ;
}

double variance_at(const DiagonalCovariance& diag, double theta) {
    const double c = std::cos(theta - diag.theta0);
    const double s = std::sin(theta - diag.theta0);
    return diag.sxx * c * c + diag.spp * s * s;
}

bool is_physical(const CovarianceMatrix& sigma) {
    return sigma.xx > 0.0 && sigma.pp > 0.0 && sigma.det() >= 1.0 - kPhysTol;
}

bool is_physical(const DiagonalCovariance& diag) {
    return diag.sxx > 0.0 && diag.spp > 0.0 && diag.det() >= 1.0 - kPhysTol;
}

TauMatrix sigma_to_tau(const CovarianceMatrix& sigma) {
    if (sigma.pp <= -1.0) throw std::invalid_argument("sigma_pp must exceed -1");
    return {sigma.xx - (sigma.xx + 1.0) / (sigma.pp + 1.0), sigma.pp + 1.0,
            sigma.xp};
}

CovarianceMatrix tau_to_sigma(const TauMatrix& tau) {
    if (tau.pp <= 1.0 + kPhysTol)
        throw std::domain_error("tau_pp <= 1: shifted matrix not invertible");
    return {(tau.xx * tau.pp + 1.0) / (tau.pp - 1.0), tau.pp - 1.0, tau.xp};
}

CovarianceMatrix cholesky_to_sigma(const TauFactor& factor) {
    if (factor.l11 <= 0.0 || factor.l22 <= 0.0)
        throw std::invalid_argument("Cholesky diagonal must be positive");
    const TauMatrix tau{factor.l11 * factor.l11,
                        factor.l21 * factor.l21 + factor.l22 * factor.l22,
                        factor.l11 * factor.l21};
    return tau_to_sigma(tau);
}

SqAsq sq_asq(const DiagonalCovariance& diag) {
    return {10.0 * std::log10(diag.sxx), 10.0 * std::log10(diag.spp)};
}

double purity(const CovarianceMatrix& sigma) {
    return 1.0 / std::sqrt(sigma.det());
}

double purity(const DiagonalCovariance& diag) {
    return 1.0 / std::sqrt(diag.det());
}

double gaussian_fidelity(const CovarianceMatrix& sigma,
                         const CovarianceMatrix& sigma0) {
    if (!is_physical(sigma) || !is_physical(sigma0))
        throw std::invalid_argument("gaussian_fidelity requires physical inputs");
    const CovarianceMatrix sum{sigma.xx + sigma0.xx, sigma.pp + sigma0.pp,
                               sigma.xp + sigma0.xp};
    const double big = sum.det();
    // Roundoff at the pure-state boundary can push delta slightly negative.
    const double small =
        std::max(0.0, (sigma.det() - 1.0) * (sigma0.det() - 1.0));
    return 2.0 / (std::sqrt(big + small) - std::sqrt(small));
}

double db_to_r(double level_db) { return level_db * std::log(10.0) / 20.0; }

double r_to_db(double r) { return 20.0 * r / std::log(10.0); }

}  // namespace gqst
