#include "gqst/direct.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace gqst {

std::vector<VarianceBin> binned_variances(const QuadratureSequence& seq,
                                          std::size_t n_bins) {
    if (n_bins == 0) throw estimation_error("n_bins must be positive");
    const double width = kPi / static_cast<double>(n_bins);
    std::vector<double> sum(n_bins, 0.0), sumsq(n_bins, 0.0);
    std::vector<std::size_t> count(n_bins, 0);
    for (const auto& pt : seq.points) {
        auto k = static_cast<std::size_t>(pt.theta / width);
        if (k >= n_bins) k = n_bins - 1;  // theta == pi
        sum[k] += pt.x;
        sumsq[k] += pt.x * pt.x;
        ++count[k];
    }
    std::vector<VarianceBin> bins;
    for (std::size_t k = 0; k < n_bins; ++k) {
        if (count[k] < 8) continue;
        const double m = static_cast<double>(count[k]);
        const double var = (sumsq[k] - sum[k] * sum[k] / m) / (m - 1.0);
        bins.push_back({(static_cast<double>(k) + 0.5) * width, 2.0 * var, m});
    }
    if (bins.size() < 4)
        throw estimation_error("fewer than 4 usable phase bins");
    return bins;
}

DiagonalCovariance fit_variance_curve(const std::vector<VarianceBin>& bins) {
    if (bins.size() < 4) throw estimation_error("need at least 4 bins");
    Eigen::Matrix3d normal = Eigen::Matrix3d::Zero();
    Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
    for (const auto& bin : bins) {
        const Eigen::Vector3d row(1.0, std::cos(2.0 * bin.theta_center),
                                  std::sin(2.0 * bin.theta_center));
        normal += bin.weight * row * row.transpose();
        rhs += bin.weight * bin.variance2 * row;
    }
    Eigen::FullPivLU<Eigen::Matrix3d> lu(normal);
    if (!lu.isInvertible())
        throw estimation_error("singular variance-curve fit");
    const Eigen::Vector3d coef = lu.solve(rhs);
    const double amp = std::hypot(coef[1], coef[2]);
    DiagonalCovariance diag;
    diag.sxx = coef[0] - amp;
    diag.spp = coef[0] + amp;
    diag.theta0 = amp > 0.0
                      ? fold_angle(0.5 * std::atan2(-coef[2], -coef[1]))
                      : 0.0;
    return diag;
}

DiagonalCovariance project_physical(const DiagonalCovariance& diag,
                                    double margin) {
    if (diag.sxx <= 0.0 || diag.spp <= 0.0)
        throw estimation_error("non-positive variance in projection");
    const double det = diag.sxx * diag.spp;
    if (det >= 1.0) return diag;
    const double k = std::sqrt((1.0 + margin) / det);
    return {k * diag.sxx, k * diag.spp, diag.theta0};
}

CovEstimate estimate_direct(const QuadratureSequence& seq,
                            std::size_t n_bins) {
    const auto bins = binned_variances(seq, n_bins);
    DiagonalCovariance diag = fit_variance_curve(bins);

    // Averaging V(theta) over a bin of width w attenuates the cos/sin
    // amplitude by sinc(w) while leaving the offset alone; deconvolve so
    // the min/max variances are unbiased for phases uniform within bins.
    const double w = kPi / static_cast<double>(n_bins);
    const double sinc = std::sin(w) / w;
    const double mid = 0.5 * (diag.sxx + diag.spp);
    const double amp = 0.5 * (diag.spp - diag.sxx) / sinc;
    diag.sxx = mid - amp;
    diag.spp = mid + amp;

    // Sampling noise (or degenerate data such as a constant record) can fit
    // to a non-positive floor on deeply squeezed states. Clamp the squeezed
    // variance to the minimum-uncertainty value 1/spp instead of an arbitrary
    // tiny floor: it is the nearest physical point, and it keeps the aspect
    // ratio mild enough that the rotated matrix stays physical despite
    // floating-point cancellation in the det test.
    // The fit always yields sxx <= spp, and any physical matrix with
    // sxx <= spp has spp >= 1, so flooring spp at the vacuum level first
    // also maps an all-constant record to the vacuum state.
    diag.spp = std::max(diag.spp, 1.0);
    diag.sxx = std::clamp(diag.sxx, 1.0 / diag.spp, diag.spp);
    diag = project_physical(diag);

    double wsum = 0.0, rss = 0.0;
    for (const auto& bin : bins) {
        const double model =
            variance_at(diag, bin.theta_center);
        rss += bin.weight * (bin.variance2 - model) * (bin.variance2 - model);
        wsum += bin.weight;
    }
    return {diag, std::sqrt(rss / wsum), bins.size()};
}

}  // namespace gqst
