#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "gqst/analysis.hpp"
#include "gqst/direct.hpp"

using namespace gqst;

TEST_CASE("bootstrap is deterministic with positive spread") {
    // Moderate squeezing: the minimum variance stays resolvable at a few
    // thousand points per replicate.
    const StateParams params{db_to_r(5.0), 0.5, 1.0, 0.02};
    const auto record =
        generate_sequence(params, 200000, PhaseScheme::UniformRandom, 33);
    DirectEstimator estimator(16);
    const BootstrapReport a = bootstrap(record, 50, 4096, estimator, 77);
    const BootstrapReport b = bootstrap(record, 50, 4096, estimator, 77);
    CHECK(a.sq_mean == b.sq_mean);
    CHECK(a.asq_std == b.asq_std);
    CHECK(a.sq_std > 0.0);
    CHECK(a.asq_std > 0.0);
    CHECK(a.purity_std > 0.0);
    REQUIRE(a.sq.size() == 50);

    const BootstrapReport c = bootstrap(record, 50, 4096, estimator, 78);
    CHECK(c.sq_mean != a.sq_mean);

    const SqAsq truth = sq_asq(diagonalize(mixture_covariance(params)));
    CHECK(std::abs(a.sq_mean - truth.sq_db) < 1.5);
    CHECK(std::abs(a.asq_mean - truth.asq_db) < 1.5);

    CHECK_THROWS_AS(bootstrap(record, 5, 300000, estimator, 1),
                    estimation_error);
}

TEST_CASE("degradation curve carries analytic overlays") {
    OracleEstimator oracle;
    std::vector<StateParams> states;
    for (int i = 0; i < 5; ++i)
        states.push_back({db_to_r(4.0 + 2.0 * i), 0.1, 0.8, 0.01 * i});
    const auto curve = degradation_curve(oracle, states, 256, 3, 5);
    REQUIRE(curve.size() == 5);
    for (std::size_t i = 0; i < curve.size(); ++i) {
        const SqAsq truth = sq_asq(diagonalize(mixture_covariance(states[i])));
        CHECK(curve[i].sq_true == doctest::Approx(truth.sq_db));
        CHECK(curve[i].asq_true == doctest::Approx(truth.asq_db));
        // Oracle estimates coincide with the truth, spread collapses to 0.
        CHECK(curve[i].sq == doctest::Approx(truth.sq_db));
        CHECK(curve[i].sq_std == doctest::Approx(0.0));
        CHECK(curve[i].purity ==
              doctest::Approx(purity(mixture_covariance(states[i]))));
    }
}

TEST_CASE("epsilon selection from an MSE table") {
    const std::vector<double> grid{0.0, 0.01, 0.02, 0.03, 0.04, 0.05};
    const std::vector<double> mse{0.94, 0.49, 1.17, 6.53, 4.64, 3.91};
    const SelectionResult r = select_from_mse(grid, mse);
    CHECK(r.best_epsilon == 0.01);
    CHECK(r.mse_values == mse);

    // Ties resolve toward the smaller epsilon, in any grid order.
    const SelectionResult tie =
        select_from_mse({0.03, 0.01}, {0.5, 0.5});
    CHECK(tie.best_epsilon == 0.01);
}

TEST_CASE("select_epsilon averages dB errors over both coordinates") {
    const std::vector<SqAsq> reference{{-3.0, 5.0}, {-6.0, 8.0}};
    std::vector<SqAsqList> predictions;
    predictions.push_back({0.00, {{-4.0, 6.0}, {-7.0, 9.0}}});  // mse 1
    predictions.push_back({0.01, {{-3.0, 5.0}, {-6.0, 8.0}}});  // mse 0
    const SelectionResult r = select_epsilon(predictions, reference);
    CHECK(r.mse_values[0] == doctest::Approx(1.0));
    CHECK(r.mse_values[1] == doctest::Approx(0.0));
    CHECK(r.best_epsilon == 0.01);

    predictions[0].points.pop_back();
    CHECK_THROWS_AS(select_epsilon(predictions, reference),
                    std::invalid_argument);
}

TEST_CASE("oracle benchmark yields unit fidelity") {
    OracleEstimator oracle;
    const BenchmarkResult r =
        fidelity_benchmark(oracle, 40, ParamRanges{}, 128, 4242);
    REQUIRE(r.fidelities.size() == 40);
    CHECK(r.mean_fidelity == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.var_fidelity == doctest::Approx(0.0));
    CHECK(r.histogram.size() == 50);
    CHECK(r.histogram.back() == 40);  // everything in the top bin
}

TEST_CASE("emitters write the documented headers") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path();
    OracleEstimator oracle;
    std::vector<StateParams> states{{0.5, 0.1, 0.4, 0.01}};
    const auto curve = degradation_curve(oracle, states, 64, 2, 9);

    const auto curve_csv = (dir / "gqst_curve.csv").string();
    write_curve_csv(curve_csv, curve);
    std::ifstream f(curve_csv);
    std::string header;
    std::getline(f, header);
    CHECK(header == "ASQ,SQ,SQ_std,purity,purity_std,ASQ_true,SQ_true");
    fs::remove(curve_csv);

    const auto sel_json = (dir / "gqst_sel.json").string();
    write_selection_json(sel_json, select_from_mse({0.0, 0.01}, {2.0, 1.0}));
    std::ifstream g(sel_json);
    std::string body((std::istreambuf_iterator<char>(g)),
                     std::istreambuf_iterator<char>());
    CHECK(body.find("best_epsilon") != std::string::npos);
    fs::remove(sel_json);
}
