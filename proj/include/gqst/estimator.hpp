#pragma once

#include "gqst/gaussian.hpp"
#include "gqst/sequence.hpp"

namespace gqst {

/// Common surface for covariance estimators. Implementations must be
/// safe for concurrent const calls.
class Estimator {
public:
    virtual ~Estimator() = default;

    virtual DiagonalCovariance estimate(const QuadratureSequence& seq) const = 0;

    /// Labeled-state entry point used by the analysis pipeline. The default
    /// ignores the label; oracle estimators may use it.
    virtual DiagonalCovariance estimate(const LabeledState& state) const {
        return estimate(state.sequence);
    }

    virtual const char* name() const = 0;
};

/// Returns the analytic diagonalized mixture covariance, ignoring the
/// measured sequence. Reference point for benchmark sanity checks.
class OracleEstimator final : public Estimator {
public:
    DiagonalCovariance estimate(const QuadratureSequence&) const override {
        throw std::logic_error("OracleEstimator needs a labeled state");
    }
    DiagonalCovariance estimate(const LabeledState& state) const override {
        return state.target;
    }
    const char* name() const override { return "oracle"; }
};

}  // namespace gqst
