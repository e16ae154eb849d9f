#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "gqst/gaussian.hpp"
#include "gqst/random.hpp"

namespace gqst {

struct QuadPoint {
    double x = 0.0;
    double theta = 0.0;
};

/// Ordered measurement record: (x, theta) pairs sorted ascending by theta,
/// theta in [0, pi].
struct QuadratureSequence {
    std::vector<QuadPoint> points;

    std::size_t size() const { return points.size(); }
};

enum class PhaseScheme { UniformRandom, LinearSweep };

/// Uniform sampling box for dataset generation. Squeezing is drawn in dB
/// and converted with db_to_r.
struct ParamRanges {
    double r_db_min = 0.0, r_db_max = 15.0;
    double n_min = 0.0, n_max = 1.0;
    double phi_min = 0.0, phi_max = kPi;
    double eps_min = 0.0, eps_max = 0.05;

    bool valid() const;
};

struct LabeledState {
    StateParams params;
    DiagonalCovariance target;  // diagonalize(mixture_covariance(params))
    QuadratureSequence sequence;
};

/// One homodyne draw at phase theta: picks the thermal component with
/// probability epsilon, otherwise the squeezed-thermal one, and returns a
/// zero-mean normal sample with variance V(theta)/2.
double sample_point(const StateParams& params, double theta,
                    std::mt19937_64& rng);

/// Deterministic in (params, n_points, scheme, seed). LinearSweep places
/// phases at the midpoints (i + 0.5) * pi / n_points.
QuadratureSequence generate_sequence(const StateParams& params,
                                     std::size_t n_points, PhaseScheme scheme,
                                     std::uint64_t seed);

StateParams draw_params(const ParamRanges& ranges, std::mt19937_64& rng);

LabeledState generate_state(const ParamRanges& ranges, std::size_t points,
                            std::uint64_t state_seed);

/// Streams `count` labeled states; state i uses derive_seed(seed, i), so
/// the output does not depend on evaluation order.
void generate_dataset(const ParamRanges& ranges, std::uint64_t count,
                      std::size_t points_per_state, std::uint64_t seed,
                      const std::function<void(std::uint64_t, const LabeledState&)>& sink);

}  // namespace gqst
