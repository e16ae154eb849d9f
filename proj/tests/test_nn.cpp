#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "gqst/nn.hpp"

using namespace gqst;

namespace {

NetworkConfig tiny_config() {
    NetworkConfig config;
    config.input_length = 32;
    config.blocks = {3, 5};
    return config;
}

std::vector<LabeledState> tiny_states(std::size_t count, std::uint64_t seed) {
    std::vector<LabeledState> states;
    for (std::size_t i = 0; i < count; ++i)
        states.push_back(generate_state(ParamRanges{}, 32, derive_seed(seed, i)));
    return states;
}

std::vector<const LabeledState*> as_ptrs(const std::vector<LabeledState>& v) {
    std::vector<const LabeledState*> p;
    for (const auto& s : v) p.push_back(&s);
    return p;
}

}  // namespace

TEST_CASE("output map always yields physical states") {
    auto rng = make_rng(2);
    std::normal_distribution<double> wide(0.0, 10.0);
    for (int i = 0; i < 5000; ++i) {
        const RawOutput raw{wide(rng), wide(rng), wide(rng)};
        const DiagonalCovariance d = raw_to_diagonal(raw);
        CHECK(d.sxx <= d.spp);
        CHECK(d.theta0 >= 0.0);
        CHECK(d.theta0 < kPi);
        CHECK(is_physical(d));
        CHECK(d.det() >= 1.0);
    }
}

TEST_CASE("parameter budget and flat round trip") {
    const NetworkConfig def;
    CHECK(parameter_count(def) < 500000);

    Network net(tiny_config());
    net.initialize(3);
    CHECK(net.num_params() == parameter_count(tiny_config()));
    const Eigen::VectorXd flat = net.get_params();
    Network other(tiny_config());
    other.set_params(flat);
    CHECK((other.get_params() - flat).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward is deterministic and validates input length") {
    Network net(tiny_config());
    net.initialize(4);
    const LabeledState s = generate_state(ParamRanges{}, 32, 5);
    const RawOutput a = net.forward(s.sequence);
    const RawOutput b = net.forward(s.sequence);
    CHECK(a.a == b.a);
    CHECK(a.b == b.b);
    CHECK(a.c == b.c);
    CHECK(is_physical(net.predict_sigma(s.sequence)));

    const LabeledState wrong = generate_state(ParamRanges{}, 16, 5);
    CHECK_THROWS_AS(net.forward(wrong.sequence), std::invalid_argument);
}

TEST_CASE("analytic gradient matches finite differences on a subset") {
    Network net(tiny_config());
    net.initialize(6);
    const auto states = tiny_states(3, 60);
    const auto batch = as_ptrs(states);

    Eigen::VectorXd grad;
    net.loss_and_gradient(batch, grad);
    REQUIRE(grad.size() == static_cast<Eigen::Index>(net.num_params()));

    Eigen::VectorXd params = net.get_params();
    auto rng = make_rng(8);
    std::uniform_int_distribution<Eigen::Index> pick(0, params.size() - 1);
    const double h = 1e-5;
    int checked = 0, good = 0;
    for (int trial = 0; trial < 80; ++trial) {
        const Eigen::Index j = pick(rng);
        Eigen::VectorXd p = params;
        Eigen::VectorXd scratch;
        p(j) = params(j) + h;
        net.set_params(p);
        const double lp = net.loss_and_gradient(batch, scratch);
        p(j) = params(j) - h;
        net.set_params(p);
        const double lm = net.loss_and_gradient(batch, scratch);
        const double fd = (lp - lm) / (2.0 * h);
        ++checked;
        // Both effectively zero (dead ReLU path): finite differences only
        // see rounding noise there.
        if (std::abs(fd) < 1e-6 && std::abs(grad(j)) < 1e-6) {
            ++good;
            continue;
        }
        const double denom = std::max(std::abs(fd), std::abs(grad(j)));
        if (std::abs(fd - grad(j)) / denom < 1e-4) ++good;
    }
    net.set_params(params);
    CHECK(good == checked);
}

TEST_CASE("training is deterministic and reduces the loss") {
    // Moderate targets so a short run can visibly converge.
    ParamRanges ranges;
    ranges.r_db_max = 6.0;
    ranges.n_max = 0.3;
    std::vector<LabeledState> states;
    for (std::size_t i = 0; i < 12; ++i)
        states.push_back(generate_state(ranges, 32, derive_seed(700, i)));
    const auto ptrs = as_ptrs(states);
    TrainHyper hyper;
    hyper.epochs = 40;
    hyper.batch_size = 4;
    hyper.learning_rate = 1e-2;
    hyper.seed = 17;

    Network a(tiny_config()), b(tiny_config());
    a.initialize(hyper.seed);
    b.initialize(hyper.seed);
    const TrainingRun run_a = a.train(ptrs, hyper);
    const TrainingRun run_b = b.train(ptrs, hyper);

    CHECK((a.get_params() - b.get_params()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(run_a.final_loss == run_b.final_loss);
    REQUIRE(run_a.loss_history.size() == hyper.epochs);
    CHECK(run_a.final_loss < 0.5 * run_a.loss_history.front());
}

TEST_CASE("default config memorizes a 10-state dataset") {
    std::vector<LabeledState> states;
    for (std::size_t i = 0; i < 10; ++i)
        states.push_back(generate_state(ParamRanges{}, 64, derive_seed(903, i)));
    const auto ptrs = as_ptrs(states);
    NetworkConfig config;
    config.input_length = 64;
    TrainHyper hyper;
    hyper.epochs = 500;
    hyper.batch_size = 10;
    hyper.learning_rate = 2e-3;
    hyper.seed = 6;
    hyper.phase_augment = false;  // capacity check: memorize fixed data

    Network net(config);
    net.initialize(hyper.seed);
    const TrainingRun run = net.train(ptrs, hyper);
    CHECK(run.final_loss < 0.5);
    CHECK(run.final_loss < 0.01 * run.loss_history.front());
}

TEST_CASE("model save/load round trip") {
    const auto path =
        (std::filesystem::temp_directory_path() / "gqst_model.gqnn").string();
    Network net(tiny_config());
    net.initialize(9);
    const auto states = tiny_states(6, 42);
    TrainHyper hyper;
    hyper.epochs = 2;
    hyper.batch_size = 3;
    net.train(as_ptrs(states), hyper);
    net.save(path);

    Network loaded = Network::load(path);
    CHECK(loaded.config() == net.config());
    CHECK((loaded.get_params() - net.get_params()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(loaded.metadata().epochs == 2);
    CHECK(loaded.metadata().loss_history.size() == 2);

    const LabeledState probe = generate_state(ParamRanges{}, 32, 1);
    const RawOutput x = net.forward(probe.sequence);
    const RawOutput y = loaded.forward(probe.sequence);
    CHECK(x.a == y.a);
    CHECK(x.b == y.b);
    CHECK(x.c == y.c);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(Network::load("/nonexistent/model.gqnn"), io_error);
}

TEST_CASE("loading a non-model file reports a format error") {
    const auto path =
        (std::filesystem::temp_directory_path() / "gqst_bogus.gqnn").string();
    {
        std::FILE* f = std::fopen(path.c_str(), "wb");
        REQUIRE(f);
        std::fputs("not a model file at all, just text", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(Network::load(path), format_error);
    std::filesystem::remove(path);
}
