#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "gqst/errors.hpp"
#include "gqst/estimator.hpp"
#include "gqst/gaussian.hpp"
#include "gqst/sequence.hpp"

namespace gqst {

/// Residual 1-D convolutional regressor. Every convolution has kernel 7 and
/// stride 2 except the 1-wide skip projections (stride 2 as well); batch
/// normalization and ReLU follow each block. The head is a fully connected
/// layer emitting 3 raw outputs.
struct NetworkConfig {
    std::size_t input_length = 2048;
    std::size_t in_channels = 2;
    std::size_t kernel_size = 7;
    std::size_t stride = 2;
    std::vector<std::size_t> blocks = {16, 32, 64, 128};
    std::size_t head_outputs = 3;

    bool operator==(const NetworkConfig&) const = default;
};

/// Trainable parameter count implied by a config (conv + batch-norm
/// affine + head; running statistics excluded).
std::size_t parameter_count(const NetworkConfig& config);

/// Pre-activation network output.
struct RawOutput {
    double a = 0.0;  // for tau_xx
    double b = 0.0;  // for tau_pp
    double c = 0.0;  // for theta0
};

/// Output map that makes every raw triple a valid state:
///   tau_xx = min(softplus(a), 1e4) + 1e-6,
///   tau_pp = 1 + min(softplus(b), 1e4) + 1e-3,
///   theta0 = pi * logistic(c).
/// The ceiling and the tau_pp slack bound the covariance entries so that
/// det(sigma) > 1 holds in double precision even for untrained weights.
/// The resulting diagonal TauFactor always satisfies the tau_to_sigma
/// domain, so det(sigma) > 1 for all inputs.
std::pair<TauFactor, double> raw_to_state(const RawOutput& raw);

/// Raw outputs mapped through raw_to_state as a DiagonalCovariance with
/// sxx <= spp (swapping rotates theta0 by pi/2).
DiagonalCovariance raw_to_diagonal(const RawOutput& raw);

/// Mean squared difference over the three independent entries (xx, pp, xp).
double covariance_loss(const CovarianceMatrix& predicted,
                       const CovarianceMatrix& target);

struct TrainHyper {
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    std::uint64_t seed = 1;
    double bn_momentum = 0.9;
    /// Shift each training sequence by a random phase offset (mod pi,
    /// re-sorted) with the label angle shifted to match.  The generative
    /// model is exactly equivariant under this shift, so augmented batches
    /// are distributed identically to freshly sampled states.  Helps only
    /// when the dataset is small enough to overfit; off by default.
    bool phase_augment = false;
};

struct TrainingRun {
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    double learning_rate = 0.0;
    double final_loss = 0.0;
    std::string optimizer = "adam+cosine";
    std::vector<double> loss_history;  // epoch-mean losses
};

class Network {
public:
    explicit Network(const NetworkConfig& config);

    /// He-initialized weights, gamma = 1, beta = 0, deterministic in seed.
    void initialize(std::uint64_t seed);

    const NetworkConfig& config() const { return config_; }
    const TrainingRun& metadata() const { return metadata_; }

    std::size_t num_params() const;
    Eigen::VectorXd get_params() const;
    void set_params(const Eigen::VectorXd& flat);

    /// Inference-mode forward (batch-norm running statistics); pure in
    /// (weights, input). Throws std::invalid_argument on length mismatch.
    RawOutput forward(const QuadratureSequence& seq) const;

    /// Physical covariance prediction: rotate(raw_to_diagonal, theta0).
    CovarianceMatrix predict_sigma(const QuadratureSequence& seq) const;

    /// Mean batch loss and its exact reverse-mode gradient with respect to
    /// every trainable parameter (training-mode batch norm; running
    /// statistics are not updated).
    double loss_and_gradient(const std::vector<const LabeledState*>& batch,
                             Eigen::VectorXd& grad);

    /// Minibatch Adam with cosine learning-rate decay. Deterministic for a
    /// fixed seed. Throws std::runtime_error on divergence (NaN loss).
    TrainingRun train(const std::vector<const LabeledState*>& states,
                      const TrainHyper& hyper,
                      const std::function<void(std::size_t, double)>&
                          epoch_callback = nullptr);

    void save(const std::string& path) const;
    static Network load(const std::string& path);

private:
    struct Impl;
    friend struct Impl;

    struct Conv {
        std::size_t cin = 0, cout = 0, kernel = 1, pad = 0;
        Eigen::MatrixXd weight;  // cout x (cin * kernel)
        Eigen::VectorXd bias;
    };
    struct BatchNorm {
        Eigen::VectorXd gamma, beta, run_mean, run_var;
    };
    struct Block {
        Conv conv;      // kernel 7, pad 3
        BatchNorm bn;
        Conv skip;      // kernel 1, pad 0
        BatchNorm skip_bn;
        std::size_t in_len = 0, out_len = 0;
    };

    NetworkConfig config_;
    std::vector<Block> blocks_;
    Eigen::MatrixXd head_weight_;  // head_outputs x flattened
    Eigen::VectorXd head_bias_;
    TrainingRun metadata_;
    std::size_t flat_dim_ = 0;

    void build();
    Eigen::MatrixXd input_matrix(const QuadratureSequence& seq) const;
    double compute(const std::vector<const LabeledState*>& batch,
                   Eigen::VectorXd& grad, bool update_stats, double momentum,
                   double saturation_penalty = 0.0,
                   std::vector<signed char>* wrap_modes = nullptr,
                   double edge = 4.0, double aux_log_weight = 0.0);
};

class NetworkEstimator final : public Estimator {
public:
    explicit NetworkEstimator(const Network& net) : net_(&net) {}

    DiagonalCovariance estimate(const QuadratureSequence& seq) const override {
        return raw_to_diagonal(net_->forward(seq));
    }
    const char* name() const override { return "nn"; }

private:
    const Network* net_;
};

}  // namespace gqst
