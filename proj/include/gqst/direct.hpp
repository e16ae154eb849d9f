#pragma once

#include <cstddef>
#include <vector>

#include "gqst/errors.hpp"
#include "gqst/estimator.hpp"

namespace gqst {

/// One phase bin of doubled sample variances (sigma convention).
struct VarianceBin {
    double theta_center = 0.0;
    double variance2 = 0.0;  // 2 * unbiased sample variance
    double weight = 0.0;     // bin population
};

struct CovEstimate {
    DiagonalCovariance diag;
    double residual = 0.0;  // rms fit residual over bins, sigma units
    std::size_t bins_used = 0;
};

/// Equal-width bins over [0, pi]; bins with fewer than 8 points are
/// dropped. Throws estimation_error if fewer than 4 bins survive.
std::vector<VarianceBin> binned_variances(const QuadratureSequence& seq,
                                          std::size_t n_bins);

/// Weighted least squares of V(theta) = u + a cos 2theta + b sin 2theta;
/// exact on noiseless curves. theta0 is the minimum-variance angle.
DiagonalCovariance fit_variance_curve(const std::vector<VarianceBin>& bins);

/// Scales both eigenvalues by sqrt((1 + margin) / det) when det < 1, so the
/// result lands just inside the physical set; theta0 and spp/sxx are kept.
DiagonalCovariance project_physical(const DiagonalCovariance& diag,
                                    double margin = 1e-9);

CovEstimate estimate_direct(const QuadratureSequence& seq,
                            std::size_t n_bins = 32);

class DirectEstimator final : public Estimator {
public:
    explicit DirectEstimator(std::size_t n_bins = 32) : n_bins_(n_bins) {}

    DiagonalCovariance estimate(const QuadratureSequence& seq) const override {
        return estimate_direct(seq, n_bins_).diag;
    }
    const char* name() const override { return "direct"; }

private:
    std::size_t n_bins_;
};

}  // namespace gqst
