#include "gqst/analysis.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include "gqst/errors.hpp"
#include "gqst/random.hpp"

namespace gqst {

namespace {

struct Moments {
    double mean = 0, stddev = 0;
};

Moments moments(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0;
    for (double x : v) mean += x;
    mean /= n;
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0};
}

void atomic_write(const std::string& path, const std::string& body) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw io_error("cannot open for writing: " + path);
        out << body;
        if (!out) throw io_error("write failed: " + path);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw io_error("rename failed: " + path);
}

}  // namespace

BootstrapReport bootstrap(const QuadratureSequence& record, std::size_t M,
                          std::size_t N, const Estimator& estimator,
                          std::uint64_t seed, bool with_replacement) {
    if (M < 1) throw std::invalid_argument("need at least one replicate");
    if (record.size() < N)
        throw estimation_error("record shorter than replicate size");

    BootstrapReport report;
    report.replicate_count = M;
    report.points_per_replicate = N;
    report.sq.reserve(M);
    report.asq.reserve(M);
    report.purity.reserve(M);

    const std::size_t total = record.size();
    for (std::size_t rep = 0; rep < M; ++rep) {
        auto rng = make_rng(derive_seed(seed, rep));
        QuadratureSequence sub;
        sub.points.reserve(N);
        if (with_replacement) {
            std::uniform_int_distribution<std::size_t> pick(0, total - 1);
            for (std::size_t i = 0; i < N; ++i)
                sub.points.push_back(record.points[pick(rng)]);
        } else {
            // Floyd's distinct sampling.
            std::unordered_set<std::size_t> chosen;
            chosen.reserve(N * 2);
            for (std::size_t j = total - N; j < total; ++j) {
                std::uniform_int_distribution<std::size_t> pick(0, j);
                const std::size_t idx = pick(rng);
                if (!chosen.insert(idx).second) chosen.insert(j);
            }
            for (std::size_t idx : chosen)
                sub.points.push_back(record.points[idx]);
        }
        std::sort(sub.points.begin(), sub.points.end(),
                  [](const QuadPoint& a, const QuadPoint& b) {
                      return a.theta < b.theta;
                  });
        const DiagonalCovariance est = estimator.estimate(sub);
        const SqAsq levels = sq_asq(est);
        report.sq.push_back(levels.sq_db);
        report.asq.push_back(levels.asq_db);
        report.purity.push_back(purity(est));
    }
    const Moments msq = moments(report.sq);
    const Moments masq = moments(report.asq);
    const Moments mpur = moments(report.purity);
    report.sq_mean = msq.mean;
    report.sq_std = msq.stddev;
    report.asq_mean = masq.mean;
    report.asq_std = masq.stddev;
    report.purity_mean = mpur.mean;
    report.purity_std = mpur.stddev;
    return report;
}

std::vector<CurvePoint> degradation_curve(const Estimator& estimator,
                                          const std::vector<StateParams>& states,
                                          std::size_t points,
                                          std::size_t replicates,
                                          std::uint64_t seed) {
    std::vector<CurvePoint> curve;
    curve.reserve(states.size());
    for (std::size_t s = 0; s < states.size(); ++s) {
        const StateParams& params = states[s];
        if (!params.valid())
            throw std::invalid_argument("invalid state parameters in sweep");
        std::vector<double> sq, asq, pur;
        for (std::size_t rep = 0; rep < replicates; ++rep) {
            LabeledState state;
            state.params = params;
            state.target = diagonalize(mixture_covariance(params));
            state.sequence = generate_sequence(
                params, points, PhaseScheme::UniformRandom,
                derive_seed(seed, s * replicates + rep));
            const DiagonalCovariance est = estimator.estimate(state);
            const SqAsq levels = sq_asq(est);
            sq.push_back(levels.sq_db);
            asq.push_back(levels.asq_db);
            pur.push_back(purity(est));
        }
        const DiagonalCovariance truth = diagonalize(mixture_covariance(params));
        const SqAsq true_levels = sq_asq(truth);
        CurvePoint pt;
        const Moments msq = moments(sq), masq = moments(asq), mpur = moments(pur);
        pt.sq = msq.mean;
        pt.sq_std = msq.stddev;
        pt.asq = masq.mean;
        pt.asq_std = masq.stddev;
        pt.purity = mpur.mean;
        pt.purity_std = mpur.stddev;
        pt.sq_true = true_levels.sq_db;
        pt.asq_true = true_levels.asq_db;
        pt.purity_true = purity(truth);
        curve.push_back(pt);
    }
    return curve;
}

std::vector<CurvePoint> purity_curve(const Estimator& estimator,
                                     const std::vector<StateParams>& states,
                                     std::size_t points, std::size_t replicates,
                                     std::uint64_t seed) {
    return degradation_curve(estimator, states, points, replicates, seed);
}

SelectionResult select_from_mse(const std::vector<double>& grid,
                                const std::vector<double>& mse) {
    if (grid.size() != mse.size() || grid.empty())
        throw std::invalid_argument("grid/mse length mismatch");
    SelectionResult result{grid, mse, grid[0]};
    double best = mse[0];
    for (std::size_t i = 1; i < mse.size(); ++i) {
        if (mse[i] < best ||
            (mse[i] == best && grid[i] < result.best_epsilon)) {
            best = mse[i];
            result.best_epsilon = grid[i];
        }
    }
    return result;
}

SelectionResult select_epsilon(const std::vector<SqAsqList>& predictions,
                               const std::vector<SqAsq>& reference) {
    if (predictions.empty())
        throw std::invalid_argument("no model predictions");
    std::vector<double> grid, mse;
    for (const auto& model : predictions) {
        if (model.points.size() != reference.size())
            throw std::invalid_argument("prediction/reference length mismatch");
        double acc = 0;
        for (std::size_t i = 0; i < reference.size(); ++i) {
            const double dsq = model.points[i].sq_db - reference[i].sq_db;
            const double dasq = model.points[i].asq_db - reference[i].asq_db;
            acc += dsq * dsq + dasq * dasq;
        }
        grid.push_back(model.epsilon);
        mse.push_back(acc / (2.0 * static_cast<double>(reference.size())));
    }
    return select_from_mse(grid, mse);
}

BenchmarkResult fidelity_benchmark(const Estimator& estimator,
                                   std::size_t count, const ParamRanges& ranges,
                                   std::size_t points, std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("count must be positive");
    if (!ranges.valid()) throw std::invalid_argument("invalid parameter ranges");
    BenchmarkResult result;
    result.fidelities.reserve(count);
    result.histogram.assign(50, 0);
    double sum = 0, sumsq = 0;
    for (std::size_t i = 0; i < count; ++i) {
        const LabeledState state =
            generate_state(ranges, points, derive_seed(seed, i));
        const DiagonalCovariance est = estimator.estimate(state);
        const double f = gaussian_fidelity(to_covariance(est),
                                           mixture_covariance(state.params));
        result.fidelities.push_back(f);
        sum += f;
        sumsq += f * f;
        auto bin = static_cast<std::size_t>(f * 50.0);
        if (bin >= 50) bin = 49;
        ++result.histogram[bin];
    }
    const double n = static_cast<double>(count);
    result.mean_fidelity = sum / n;
    result.var_fidelity =
        count > 1 ? (sumsq - sum * sum / n) / (n - 1.0) : 0.0;
    return result;
}

// ---------------------------------------------------------------------------
// Emission

void write_bootstrap_csv(const std::string& path, const BootstrapReport& r) {
    std::string body = "SQ,ASQ,purity\n";
    char line[128];
    for (std::size_t i = 0; i < r.sq.size(); ++i) {
        std::snprintf(line, sizeof(line), "%.10g,%.10g,%.10g\n", r.sq[i],
                      r.asq[i], r.purity[i]);
        body += line;
    }
    atomic_write(path, body);
}

void write_bootstrap_json(const std::string& path, const BootstrapReport& r) {
    nlohmann::json j{{"replicate_count", r.replicate_count},
                     {"points_per_replicate", r.points_per_replicate},
                     {"SQ", {{"mean", r.sq_mean}, {"std", r.sq_std}}},
                     {"ASQ", {{"mean", r.asq_mean}, {"std", r.asq_std}}},
                     {"purity", {{"mean", r.purity_mean}, {"std", r.purity_std}}}};
    atomic_write(path, j.dump(2) + "\n");
}

void write_curve_csv(const std::string& path,
                     const std::vector<CurvePoint>& curve) {
    std::string body = "ASQ,SQ,SQ_std,purity,purity_std,ASQ_true,SQ_true\n";
    char line[256];
    for (const auto& p : curve) {
        std::snprintf(line, sizeof(line),
                      "%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", p.asq,
                      p.sq, p.sq_std, p.purity, p.purity_std, p.asq_true,
                      p.sq_true);
        body += line;
    }
    atomic_write(path, body);
}

void write_curve_json(const std::string& path,
                      const std::vector<CurvePoint>& curve) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& p : curve)
        rows.push_back({{"ASQ", p.asq},
                        {"SQ", p.sq},
                        {"SQ_std", p.sq_std},
                        {"purity", p.purity},
                        {"purity_std", p.purity_std},
                        {"ASQ_true", p.asq_true},
                        {"SQ_true", p.sq_true}});
    atomic_write(path, rows.dump(2) + "\n");
}

void write_selection_csv(const std::string& path, const SelectionResult& r) {
    std::string body = "epsilon,mse\n";
    char line[64];
    for (std::size_t i = 0; i < r.epsilon_grid.size(); ++i) {
        std::snprintf(line, sizeof(line), "%.10g,%.10g\n", r.epsilon_grid[i],
                      r.mse_values[i]);
        body += line;
    }
    atomic_write(path, body);
}

void write_selection_json(const std::string& path, const SelectionResult& r) {
    nlohmann::json j{{"epsilon", r.epsilon_grid},
                     {"mse", r.mse_values},
                     {"best_epsilon", r.best_epsilon}};
    atomic_write(path, j.dump(2) + "\n");
}

void write_benchmark_csv(const std::string& path, const BenchmarkResult& r) {
    std::string body = "state,fidelity\n";
    char line[64];
    for (std::size_t i = 0; i < r.fidelities.size(); ++i) {
        std::snprintf(line, sizeof(line), "%zu,%.10g\n", i, r.fidelities[i]);
        body += line;
    }
    atomic_write(path, body);
}

void write_benchmark_json(const std::string& path, const BenchmarkResult& r) {
    nlohmann::json j{{"mean_F", r.mean_fidelity},
                     {"var_F", r.var_fidelity},
                     {"count", r.fidelities.size()},
                     {"histogram", r.histogram}};
    atomic_write(path, j.dump(2) + "\n");
}

}  // namespace gqst
