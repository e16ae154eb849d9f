#include "gqst/sequence.hpp"

#include <algorithm>
#include <stdexcept>

namespace gqst {

bool ParamRanges::valid() const {
    return r_db_min >= 0.0 && r_db_min <= r_db_max && n_min >= 0.0 &&
           n_min <= n_max && phi_min >= 0.0 && phi_min <= phi_max &&
           phi_max <= kPi && eps_min >= 0.0 && eps_min <= eps_max &&
           eps_max <= 0.5;
}

double sample_point(const StateParams& params, double theta,
                    std::mt19937_64& rng) {
    const double occ = 2.0 * params.n + 1.0;
    double variance;
    std::bernoulli_distribution thermal(params.epsilon);
    if (params.epsilon > 0.0 && thermal(rng)) {
        variance = occ;
    } else {
        const double c = std::cos(theta - params.theta0());
        const double s = std::sin(theta - params.theta0());
        variance = occ * (std::exp(-2.0 * params.r) * c * c +
                          std::exp(2.0 * params.r) * s * s);
    }
    std::normal_distribution<double> gauss(0.0, std::sqrt(0.5 * variance));
    return gauss(rng);
}

QuadratureSequence generate_sequence(const StateParams& params,
                                     std::size_t n_points, PhaseScheme scheme,
                                     std::uint64_t seed) {
    if (!params.valid()) throw std::invalid_argument("invalid state parameters");
    if (n_points < 2) throw std::invalid_argument("need at least 2 points");
    auto rng = make_rng(seed);

    std::vector<double> thetas(n_points);
    if (scheme == PhaseScheme::UniformRandom) {
        std::uniform_real_distribution<double> uni(0.0, kPi);
        for (auto& t : thetas) t = uni(rng);
        std::sort(thetas.begin(), thetas.end());
    } else {
        for (std::size_t i = 0; i < n_points; ++i)
            thetas[i] = (static_cast<double>(i) + 0.5) * kPi /
                        static_cast<double>(n_points);
    }

    QuadratureSequence seq;
    seq.points.resize(n_points);
    for (std::size_t i = 0; i < n_points; ++i)
        seq.points[i] = {sample_point(params, thetas[i], rng), thetas[i]};
    return seq;
}

StateParams draw_params(const ParamRanges& ranges, std::mt19937_64& rng) {
    auto uni = [&rng](double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(rng);
    };
    StateParams p;
    p.r = db_to_r(uni(ranges.r_db_min, ranges.r_db_max));
    p.n = uni(ranges.n_min, ranges.n_max);
    p.phi = uni(ranges.phi_min, ranges.phi_max);
    p.epsilon = uni(ranges.eps_min, ranges.eps_max);
    return p;
}

LabeledState generate_state(const ParamRanges& ranges, std::size_t points,
                            std::uint64_t state_seed) {
    auto rng = make_rng(state_seed);
    LabeledState state;
    state.params = draw_params(ranges, rng);
    state.target = diagonalize(mixture_covariance(state.params));
    state.sequence = generate_sequence(state.params, points,
                                       PhaseScheme::UniformRandom, rng());
    return state;
}

void generate_dataset(
    const ParamRanges& ranges, std::uint64_t count, std::size_t points_per_state,
    std::uint64_t seed,
    const std::function<void(std::uint64_t, const LabeledState&)>& sink) {
    if (!ranges.valid()) throw std::invalid_argument("invalid parameter ranges");
    if (count == 0) throw std::invalid_argument("count must be positive");
    for (std::uint64_t i = 0; i < count; ++i)
        sink(i, generate_state(ranges, points_per_state, derive_seed(seed, i)));
}

}  // namespace gqst
