// Command-line surface for the covariance-matrix tomography pipeline.
// Exit codes: 0 ok, 2 usage, 3 I/O or file format, 4 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <sstream>

#include "gqst/analysis.hpp"
#include "gqst/dataset_io.hpp"
#include "gqst/direct.hpp"
#include "gqst/errors.hpp"
#include "gqst/nn.hpp"

namespace {

using namespace gqst;

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::uint64_t resolve_seed(std::optional<std::uint64_t> seed) {
    if (seed) return *seed;
    std::random_device rd;
    const std::uint64_t s =
        (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    std::printf("seed=%llu (auto-generated)\n",
                static_cast<unsigned long long>(s));
    return s;
}

/// Resolved-config sidecar next to every output artifact.
void write_sidecar(const std::string& out_path,
                   const std::vector<std::pair<std::string, std::string>>& kv) {
    std::ofstream f(out_path + ".config");
    if (!f) throw io_error("cannot write sidecar config: " + out_path);
    f << "# resolved configuration\n";
    for (const auto& [k, v] : kv) f << k << "=" << v << "\n";
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

ParamRanges& add_range_flags(CLI::App* cmd, ParamRanges defaults) {
    // One instance per subcommand, alive for the whole program run.
    static std::vector<std::unique_ptr<ParamRanges>> store;
    store.push_back(std::make_unique<ParamRanges>(defaults));
    ParamRanges& r = *store.back();
    cmd->add_option("--r-db-min", r.r_db_min, "Min squeezing level [dB]");
    cmd->add_option("--r-db-max", r.r_db_max, "Max squeezing level [dB]");
    cmd->add_option("--n-min", r.n_min, "Min thermal photon number");
    cmd->add_option("--n-max", r.n_max, "Max thermal photon number");
    cmd->add_option("--phi-min", r.phi_min, "Min squeezing phase [rad]");
    cmd->add_option("--phi-max", r.phi_max, "Max squeezing phase [rad]");
    cmd->add_option("--eps-min", r.eps_min, "Min thermal mixture weight");
    cmd->add_option("--eps-max", r.eps_max, "Max thermal mixture weight");
    return r;
}

QuadratureSequence load_record(const std::string& path, std::uint64_t index) {
    if (path.ends_with(".csv")) return read_sequence_csv(path);
    DatasetReader reader(path);
    return reader.read(index).sequence;
}

std::unique_ptr<Network> g_model;

const Estimator& make_estimator(const std::string& method,
                                const std::string& model_path,
                                std::size_t bins) {
    static DirectEstimator direct(32);
    static std::unique_ptr<NetworkEstimator> nn_est;
    if (method == "direct") {
        direct = DirectEstimator(bins);
        return direct;
    }
    if (method == "nn") {
        if (model_path.empty())
            throw UsageError("--method nn requires --model");
        g_model = std::make_unique<Network>(Network::load(model_path));
        nn_est = std::make_unique<NetworkEstimator>(*g_model);
        return *nn_est;
    }
    throw UsageError("unknown method: " + method);
}

nlohmann::json report_json(const DiagonalCovariance& diag) {
    const CovarianceMatrix sigma = to_covariance(diag);
    const SqAsq levels = sq_asq(diag);
    return {{"sigma", {{"xx", sigma.xx}, {"pp", sigma.pp}, {"xp", sigma.xp}}},
            {"sxx", diag.sxx},
            {"spp", diag.spp},
            {"theta0", diag.theta0},
            {"SQ_db", levels.sq_db},
            {"ASQ_db", levels.asq_db},
            {"purity", purity(diag)}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gqst: homodyne simulation and covariance-matrix estimation "
                 "for squeezed vacuum states"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Flat key=value config file; flags override");
    app.allow_config_extras(CLI::config_extras_mode::error);
    int threads = 1;
    app.add_option("--threads", threads, "Reserved; modules run serially")
        ->check(CLI::PositiveNumber);

    std::optional<std::uint64_t> seed_opt;
    std::string out_path;

    // generate -------------------------------------------------------------
    auto* gen = app.add_subcommand("generate", "Write a labeled dataset");
    std::uint64_t gen_count = 0;
    std::size_t gen_points = 2048;
    gen->add_option("--count", gen_count, "Number of states")->required();
    gen->add_option("--points", gen_points, "Points per state");
    gen->add_option("--seed", seed_opt, "Base RNG seed");
    gen->add_option("--out", out_path, "Output .gqst path")->required();
    const ParamRanges& gen_ranges = add_range_flags(gen, ParamRanges{});
    gen->callback([&] {
        const std::uint64_t seed = resolve_seed(seed_opt);
        if (!gen_ranges.valid()) throw UsageError("invalid parameter ranges");
        DatasetHeader header;
        header.count = gen_count;
        header.points_per_state = static_cast<std::uint32_t>(gen_points);
        header.base_seed = seed;
        header.ranges = gen_ranges;
        DatasetWriter writer(out_path, header);
        generate_dataset(gen_ranges, gen_count, gen_points, seed,
                         [&](std::uint64_t, const LabeledState& s) {
                             writer.append(s);
                         });
        writer.close();
        write_sidecar(out_path,
                      {{"subcommand", "generate"},
                       {"count", std::to_string(gen_count)},
                       {"points", std::to_string(gen_points)},
                       {"seed", std::to_string(seed)},
                       {"r_db_min", fmt(gen_ranges.r_db_min)},
                       {"r_db_max", fmt(gen_ranges.r_db_max)},
                       {"n_min", fmt(gen_ranges.n_min)},
                       {"n_max", fmt(gen_ranges.n_max)},
                       {"phi_min", fmt(gen_ranges.phi_min)},
                       {"phi_max", fmt(gen_ranges.phi_max)},
                       {"eps_min", fmt(gen_ranges.eps_min)},
                       {"eps_max", fmt(gen_ranges.eps_max)}});
        std::printf("wrote %llu states to %s\n",
                    static_cast<unsigned long long>(gen_count),
                    out_path.c_str());
    });

    // train ----------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "Train the network estimator");
    std::string train_data, loss_csv, blocks_spec = "16,32,64,128";
    TrainHyper hyper;
    train_cmd->add_option("--data", train_data, "Training dataset (.gqst)")
        ->required();
    train_cmd->add_option("--out", out_path, "Output model (.gqnn)")->required();
    std::uint64_t train_limit = 0;
    train_cmd->add_option("--epochs", hyper.epochs, "Training epochs");
    train_cmd->add_option("--states", train_limit,
                          "Use only the first N states (0 = all)");
    train_cmd->add_option("--batch", hyper.batch_size, "Minibatch size");
    train_cmd->add_option("--lr", hyper.learning_rate, "Adam learning rate");
    train_cmd->add_option("--seed", seed_opt, "Training seed");
    train_cmd->add_option("--loss-csv", loss_csv, "Loss history CSV path");
    train_cmd->add_option("--blocks", blocks_spec, "Residual block filters");
    train_cmd->callback([&] {
        hyper.seed = resolve_seed(seed_opt);
        if (loss_csv.empty()) loss_csv = out_path + ".loss.csv";
        auto [header, states] = read_dataset(train_data);
        if (train_limit > 0 && train_limit < states.size())
            states.resize(train_limit);
        NetworkConfig config;
        config.input_length = header.points_per_state;
        config.blocks.clear();
        std::istringstream bl(blocks_spec);
        std::string tok;
        while (std::getline(bl, tok, ','))
            config.blocks.push_back(std::stoul(tok));
        Network net(config);
        net.initialize(hyper.seed);
        std::vector<const LabeledState*> ptrs;
        ptrs.reserve(states.size());
        for (const auto& s : states) ptrs.push_back(&s);
        std::ofstream loss_out(loss_csv);
        if (!loss_out) throw io_error("cannot write loss CSV: " + loss_csv);
        loss_out << "epoch,mean_loss\n";
        const TrainingRun run =
            net.train(ptrs, hyper, [&](std::size_t epoch, double loss) {
                loss_out << epoch << "," << fmt(loss) << "\n";
                loss_out.flush();
                std::printf("epoch %zu: loss %.6g\n", epoch, loss);
            });
        net.save(out_path);
        write_sidecar(out_path, {{"subcommand", "train"},
                                 {"data", train_data},
                                 {"epochs", std::to_string(hyper.epochs)},
                                 {"batch", std::to_string(hyper.batch_size)},
                                 {"lr", fmt(hyper.learning_rate)},
                                 {"seed", std::to_string(hyper.seed)},
                                 {"blocks", blocks_spec},
                                 {"optimizer", run.optimizer},
                                 {"final_loss", fmt(run.final_loss)}});
    });

    // estimate --------------------------------------------------------------
    auto* est = app.add_subcommand("estimate", "Estimate one covariance matrix");
    std::string est_in, method = "direct", model_path;
    std::uint64_t est_index = 0;
    std::size_t bins = 32;
    est->add_option("--in", est_in, "Sequence CSV or dataset .gqst")->required();
    est->add_option("--index", est_index, "Record index for .gqst input");
    est->add_option("--method", method, "direct | nn");
    est->add_option("--model", model_path, "Model file for --method nn");
    est->add_option("--bins", bins, "Phase bins for the direct method");
    est->add_option("--out", out_path, "Report JSON path (default stdout)");
    est->callback([&] {
        const Estimator& estimator = make_estimator(method, model_path, bins);
        const QuadratureSequence seq = load_record(est_in, est_index);
        const nlohmann::json report = report_json(estimator.estimate(seq));
        if (out_path.empty()) {
            std::cout << report.dump(2) << "\n";
        } else {
            std::ofstream f(out_path);
            if (!f) throw io_error("cannot write report: " + out_path);
            f << report.dump(2) << "\n";
            write_sidecar(out_path, {{"subcommand", "estimate"},
                                     {"in", est_in},
                                     {"index", std::to_string(est_index)},
                                     {"method", method},
                                     {"model", model_path},
                                     {"bins", std::to_string(bins)}});
        }
    });

    // bootstrap --------------------------------------------------------------
    auto* boot = app.add_subcommand("bootstrap",
                                    "Sub-sample interval estimation");
    std::string boot_in;
    std::size_t replicates = 1000, boot_points = 2048, record_points = 0;
    bool with_replacement = false;
    double synth_r_db = 10.0, synth_n = 0.1, synth_phi = kPi, synth_eps = 0.01;
    boot->add_option("--in", boot_in, "Record CSV or .gqst (else synthetic)");
    boot->add_option("--record-points", record_points,
                     "Synthesize a record of this many points");
    boot->add_option("--synth-r-db", synth_r_db, "Synthetic squeezing [dB]");
    boot->add_option("--synth-n", synth_n, "Synthetic thermal photon number");
    boot->add_option("--synth-phi", synth_phi, "Synthetic squeezing phase");
    boot->add_option("--synth-eps", synth_eps, "Synthetic mixture weight");
    boot->add_option("--replicates", replicates, "Number of replicates");
    boot->add_option("--points", boot_points, "Points per replicate");
    boot->add_flag("--with-replacement", with_replacement,
                   "Classic bootstrap resampling");
    boot->add_option("--method", method, "direct | nn");
    boot->add_option("--model", model_path, "Model file for --method nn");
    boot->add_option("--bins", bins, "Phase bins for the direct method");
    boot->add_option("--seed", seed_opt, "Replicate seed");
    boot->add_option("--out", out_path, "Output prefix")->required();
    boot->callback([&] {
        const std::uint64_t seed = resolve_seed(seed_opt);
        QuadratureSequence record;
        if (!boot_in.empty()) {
            record = load_record(boot_in, 0);
        } else {
            if (record_points == 0)
                throw UsageError("need --in or --record-points");
            StateParams params{db_to_r(synth_r_db), synth_n, synth_phi,
                               synth_eps};
            record = generate_sequence(params, record_points,
                                       PhaseScheme::UniformRandom,
                                       derive_seed(seed, 0xB007));
        }
        const Estimator& estimator = make_estimator(method, model_path, bins);
        const BootstrapReport report = bootstrap(
            record, replicates, boot_points, estimator, seed, with_replacement);
        write_bootstrap_csv(out_path + ".csv", report);
        write_bootstrap_json(out_path + ".json", report);
        write_sidecar(out_path + ".json",
                      {{"subcommand", "bootstrap"},
                       {"in", boot_in},
                       {"replicates", std::to_string(replicates)},
                       {"points", std::to_string(boot_points)},
                       {"with_replacement", with_replacement ? "1" : "0"},
                       {"method", method},
                       {"seed", std::to_string(seed)}});
        std::printf("SQ %.4f +- %.4f dB, ASQ %.4f +- %.4f dB, purity %.4f +- %.4f\n",
                    report.sq_mean, report.sq_std, report.asq_mean,
                    report.asq_std, report.purity_mean, report.purity_std);
    });

    // curves -----------------------------------------------------------------
    auto* curves = app.add_subcommand("curves",
                                      "Degradation and purity curves");
    std::size_t curve_count = 20, curve_points = 2048, curve_reps = 8;
    curves->add_option("--count", curve_count, "Number of states");
    curves->add_option("--points", curve_points, "Points per sequence");
    curves->add_option("--replicates", curve_reps, "Sequences per state");
    curves->add_option("--method", method, "direct | nn");
    curves->add_option("--model", model_path, "Model file for --method nn");
    curves->add_option("--bins", bins, "Phase bins for the direct method");
    curves->add_option("--seed", seed_opt, "Sweep seed");
    curves->add_option("--out", out_path, "Output prefix")->required();
    const ParamRanges& curve_ranges = add_range_flags(curves, ParamRanges{});
    curves->callback([&] {
        const std::uint64_t seed = resolve_seed(seed_opt);
        if (!curve_ranges.valid()) throw UsageError("invalid parameter ranges");
        const Estimator& estimator = make_estimator(method, model_path, bins);
        auto rng = make_rng(derive_seed(seed, 0xC0));
        std::vector<StateParams> states;
        for (std::size_t i = 0; i < curve_count; ++i)
            states.push_back(draw_params(curve_ranges, rng));
        const auto curve = degradation_curve(estimator, states, curve_points,
                                             curve_reps, derive_seed(seed, 0xC1));
        write_curve_csv(out_path + ".csv", curve);
        write_curve_json(out_path + ".json", curve);
        write_sidecar(out_path + ".csv",
                      {{"subcommand", "curves"},
                       {"count", std::to_string(curve_count)},
                       {"points", std::to_string(curve_points)},
                       {"replicates", std::to_string(curve_reps)},
                       {"method", method},
                       {"seed", std::to_string(seed)}});
    });

    // select -----------------------------------------------------------------
    auto* sel = app.add_subcommand("select",
                                   "Pick the best noise weight from an MSE table");
    std::string sel_in;
    sel->add_option("--in", sel_in, "CSV with columns epsilon,mse")->required();
    sel->add_option("--out", out_path, "Output prefix (optional)");
    sel->callback([&] {
        std::ifstream f(sel_in);
        if (!f) throw io_error("cannot open: " + sel_in);
        std::string line;
        if (!std::getline(f, line)) throw format_error("empty table: " + sel_in);
        std::vector<double> grid, mse;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            double e, m;
            if (std::sscanf(line.c_str(), "%lf,%lf", &e, &m) != 2)
                throw format_error("malformed table row: " + sel_in);
            grid.push_back(e);
            mse.push_back(m);
        }
        const SelectionResult result = select_from_mse(grid, mse);
        for (std::size_t i = 0; i < grid.size(); ++i)
            std::printf("epsilon=%.4g  mse=%.6g\n", grid[i], mse[i]);
        std::printf("best_epsilon=%.4g\n", result.best_epsilon);
        if (!out_path.empty()) {
            write_selection_csv(out_path + ".csv", result);
            write_selection_json(out_path + ".json", result);
        }
    });

    // benchmark ----------------------------------------------------------------
    auto* bench = app.add_subcommand("benchmark",
                                     "Fidelity benchmark on generated states");
    std::size_t bench_count = 6000, bench_points = 2048;
    bench->add_option("--count", bench_count, "Number of states");
    bench->add_option("--points", bench_points, "Points per sequence");
    bench->add_option("--method", method, "direct | nn");
    bench->add_option("--model", model_path, "Model file for --method nn");
    bench->add_option("--bins", bins, "Phase bins for the direct method");
    bench->add_option("--seed", seed_opt, "Benchmark seed");
    bench->add_option("--out", out_path, "Output prefix")->required();
    const ParamRanges& bench_ranges = add_range_flags(bench, ParamRanges{});
    bench->callback([&] {
        const std::uint64_t seed = resolve_seed(seed_opt);
        if (!bench_ranges.valid()) throw UsageError("invalid parameter ranges");
        const Estimator& estimator = make_estimator(method, model_path, bins);
        const BenchmarkResult result = fidelity_benchmark(
            estimator, bench_count, bench_ranges, bench_points, seed);
        write_benchmark_csv(out_path + ".csv", result);
        write_benchmark_json(out_path + ".json", result);
        write_sidecar(out_path + ".json",
                      {{"subcommand", "benchmark"},
                       {"count", std::to_string(bench_count)},
                       {"points", std::to_string(bench_points)},
                       {"method", method},
                       {"seed", std::to_string(seed)}});
        std::printf("mean_F=%.6f var_F=%.3g over %zu states\n",
                    result.mean_fidelity, result.var_fidelity,
                    result.fidelities.size());
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const io_error& e) {
        std::fprintf(stderr, "I/O error: %s\n", e.what());
        return kExitIo;
    } catch (const format_error& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return kExitIo;
    } catch (const estimation_error& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitNumeric;
    }
    return 0;
}
