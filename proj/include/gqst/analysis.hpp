#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gqst/estimator.hpp"
#include "gqst/sequence.hpp"

namespace gqst {

struct BootstrapReport {
    std::size_t replicate_count = 0;
    std::size_t points_per_replicate = 0;
    std::vector<double> sq, asq, purity;  // per replicate, dB / dimensionless
    double sq_mean = 0, sq_std = 0;
    double asq_mean = 0, asq_std = 0;
    double purity_mean = 0, purity_std = 0;
};

/// M uniform down-samples of `record` (without replacement within a
/// replicate unless with_replacement), each estimated independently.
/// Replicate i derives its seed from (seed, i), so results are
/// order-independent. Throws estimation_error if the record is shorter
/// than N.
BootstrapReport bootstrap(const QuadratureSequence& record, std::size_t M,
                          std::size_t N, const Estimator& estimator,
                          std::uint64_t seed, bool with_replacement = false);

struct CurvePoint {
    double asq = 0, sq = 0, purity = 0;        // estimated means, dB / -
    double asq_std = 0, sq_std = 0, purity_std = 0;
    double asq_true = 0, sq_true = 0, purity_true = 0;  // analytic overlay
};

/// Per state: `replicates` independent sequences of `points` each,
/// estimated and aggregated; the analytic truth comes from the closed-form
/// mixture covariance only.
std::vector<CurvePoint> degradation_curve(const Estimator& estimator,
                                          const std::vector<StateParams>& states,
                                          std::size_t points,
                                          std::size_t replicates,
                                          std::uint64_t seed);

/// Same sweep viewed through purity; identical rows.
std::vector<CurvePoint> purity_curve(const Estimator& estimator,
                                     const std::vector<StateParams>& states,
                                     std::size_t points, std::size_t replicates,
                                     std::uint64_t seed);

struct SqAsqList {
    double epsilon = 0;
    std::vector<SqAsq> points;
};

struct SelectionResult {
    std::vector<double> epsilon_grid;
    std::vector<double> mse_values;  // dB^2
    double best_epsilon = 0;
};

/// MSE over both coordinates in dB^2, argmin selection, ties broken toward
/// smaller epsilon. Throws std::invalid_argument on length mismatch.
SelectionResult select_epsilon(const std::vector<SqAsqList>& predictions,
                               const std::vector<SqAsq>& reference);

/// Selection from an already-computed MSE row.
SelectionResult select_from_mse(const std::vector<double>& grid,
                                const std::vector<double>& mse);

struct BenchmarkResult {
    double mean_fidelity = 0;
    double var_fidelity = 0;
    std::vector<double> fidelities;       // per state
    std::vector<std::size_t> histogram;   // 50 bins over [0, 1]
};

/// `count` independently generated two-component states; per state one
/// sequence of `points`, the estimate, and the Gaussian fidelity against
/// the analytic mixture covariance.
BenchmarkResult fidelity_benchmark(const Estimator& estimator,
                                   std::size_t count,
                                   const ParamRanges& ranges,
                                   std::size_t points, std::uint64_t seed);

// CSV/JSON emission with the documented column names.
void write_bootstrap_csv(const std::string& path, const BootstrapReport& r);
void write_bootstrap_json(const std::string& path, const BootstrapReport& r);
void write_curve_csv(const std::string& path,
                     const std::vector<CurvePoint>& curve);
void write_curve_json(const std::string& path,
                      const std::vector<CurvePoint>& curve);
void write_selection_csv(const std::string& path, const SelectionResult& r);
void write_selection_json(const std::string& path, const SelectionResult& r);
void write_benchmark_csv(const std::string& path, const BenchmarkResult& r);
void write_benchmark_json(const std::string& path, const BenchmarkResult& r);

}  // namespace gqst
