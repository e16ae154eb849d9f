#include "gqst/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <memory>
#include <numeric>
#include <sstream>

#include "gqst/random.hpp"

namespace gqst {

namespace {

constexpr double kTauMargin = 1e-6;
// Floor on tau_pp - 1. Together with the 1e4 softplus ceiling it bounds the
// covariance entries so that the rotated matrix keeps det > 1 in double
// precision for arbitrary (untrained) weights; -30 dB is far below any
// reachable variance, so the trained domain is unaffected.
constexpr double kTauPpSlack = 1e-3;
constexpr double kTauCap = 1e4;
// Training-time bound on the raw angle output: past this the logistic gives
// < ~1e-3 rad of extra range but exponentially vanishing gradients.

constexpr double kBnEps = 1e-5;

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double capped_softplus(double x) { return std::min(softplus(x), kTauCap); }

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

std::size_t halved(std::size_t len) { return (len - 1) / 2 + 1; }

/// Loss of one sample through the output chain
/// raw -> tau -> sigma_diag -> rotation -> entry MSE, with optional
/// gradients with respect to the raw triple.
double chain_loss(const RawOutput& raw, const CovarianceMatrix& target,
                  double* da, double* db, double* dc) {
    const double tau_xx = capped_softplus(raw.a) + kTauMargin;
    const double tau_pp = 1.0 + capped_softplus(raw.b) + kTauPpSlack;
    const double sxx = (tau_xx * tau_pp + 1.0) / (tau_pp - 1.0);
    const double spp = tau_pp - 1.0;
    const double lg = logistic(raw.c);
    const double theta = kPi * lg;

    const double u = 0.5 * (sxx + spp);
    const double h = 0.5 * (sxx - spp);
    const double c2 = std::cos(2.0 * theta);
    const double s2 = std::sin(2.0 * theta);
    const double xx = u + h * c2;
    const double pp = u - h * c2;
    const double xp = h * s2;

    const double exx = xx - target.xx;
    const double epp = pp - target.pp;
    const double exp_ = xp - target.xp;
    const double loss = (exx * exx + epp * epp + exp_ * exp_) / 3.0;
    if (!da) return loss;

    const double gxx = 2.0 * exx / 3.0;
    const double gpp = 2.0 * epp / 3.0;
    const double gxp = 2.0 * exp_ / 3.0;
    const double gu = gxx + gpp;
    const double gh = (gxx - gpp) * c2 + gxp * s2;
    const double gtheta = 2.0 * h * (-(gxx - gpp) * s2 + gxp * c2);
    const double gsxx = 0.5 * gu + 0.5 * gh;
    const double gspp = 0.5 * gu - 0.5 * gh;

    const double dsxx_dtxx = tau_pp / (tau_pp - 1.0);
    const double dsxx_dtpp =
        -(tau_xx + 1.0) / ((tau_pp - 1.0) * (tau_pp - 1.0));
    const double gtau_xx = gsxx * dsxx_dtxx;
    const double gtau_pp = gsxx * dsxx_dtpp + gspp;

    *da = softplus(raw.a) < kTauCap ? gtau_xx * logistic(raw.a) : 0.0;
    *db = softplus(raw.b) < kTauCap ? gtau_pp * logistic(raw.b) : 0.0;
    *dc = gtheta * kPi * lg * (1.0 - lg);
    return loss;
}

}  // namespace

std::pair<TauFactor, double> raw_to_state(const RawOutput& raw) {
    const double tau_xx = capped_softplus(raw.a) + kTauMargin;
    const double tau_pp = 1.0 + capped_softplus(raw.b) + kTauPpSlack;
    TauFactor factor{std::sqrt(tau_xx), 0.0, std::sqrt(tau_pp)};
    return {factor, kPi * logistic(raw.c)};
}

DiagonalCovariance raw_to_diagonal(const RawOutput& raw) {
    const auto [factor, theta0] = raw_to_state(raw);
    const CovarianceMatrix diag = cholesky_to_sigma(factor);
    if (diag.xx <= diag.pp) return {diag.xx, diag.pp, theta0};
    return {diag.pp, diag.xx, fold_angle(theta0 + 0.5 * kPi)};
}

double covariance_loss(const CovarianceMatrix& predicted,
                       const CovarianceMatrix& target) {
    const double dxx = predicted.xx - target.xx;
    const double dpp = predicted.pp - target.pp;
    const double dxp = predicted.xp - target.xp;
    return (dxx * dxx + dpp * dpp + dxp * dxp) / 3.0;
}

std::size_t parameter_count(const NetworkConfig& config) {
    std::size_t total = 0;
    std::size_t cin = config.in_channels;
    std::size_t len = config.input_length;
    for (std::size_t cout : config.blocks) {
        total += cout * cin * config.kernel_size + cout + 2 * cout;  // conv+bn
        total += cout * cin + cout + 2 * cout;                       // skip+bn
        cin = cout;
        len = halved(len);
    }
    total += config.head_outputs * cin * len + config.head_outputs;
    return total;
}

Network::Network(const NetworkConfig& config) : config_(config) { build(); }

void Network::build() {
    if (config_.kernel_size != 7 || config_.stride != 2)
        throw std::invalid_argument("convolutions are fixed at kernel 7, stride 2");
    if (config_.blocks.empty())
        throw std::invalid_argument("need at least one residual block");
    blocks_.clear();
    std::size_t cin = config_.in_channels;
    std::size_t len = config_.input_length;
    for (std::size_t cout : config_.blocks) {
        Block blk;
        blk.in_len = len;
        blk.out_len = halved(len);
        blk.conv = {cin, cout, config_.kernel_size, (config_.kernel_size - 1) / 2,
                    Eigen::MatrixXd::Zero(cout, cin * config_.kernel_size),
                    Eigen::VectorXd::Zero(cout)};
        blk.skip = {cin, cout, 1, 0, Eigen::MatrixXd::Zero(cout, cin),
                    Eigen::VectorXd::Zero(cout)};
        for (auto* bn : {&blk.bn, &blk.skip_bn}) {
            bn->gamma = Eigen::VectorXd::Ones(cout);
            bn->beta = Eigen::VectorXd::Zero(cout);
            bn->run_mean = Eigen::VectorXd::Zero(cout);
            bn->run_var = Eigen::VectorXd::Ones(cout);
        }
        blocks_.push_back(std::move(blk));
        cin = cout;
        len = blk.out_len;
    }
    flat_dim_ = cin * len;
    head_weight_ = Eigen::MatrixXd::Zero(config_.head_outputs, flat_dim_);
    head_bias_ = Eigen::VectorXd::Zero(config_.head_outputs);
}

void Network::initialize(std::uint64_t seed) {
    auto rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto fill = [&](Eigen::MatrixXd& w, std::size_t fan_in) {
        const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j)
                w(i, j) = scale * gauss(rng);
    };
    for (auto& blk : blocks_) {
        fill(blk.conv.weight, blk.conv.cin * blk.conv.kernel);
        fill(blk.skip.weight, blk.skip.cin);
        blk.conv.bias.setZero();
        blk.skip.bias.setZero();
        for (auto* bn : {&blk.bn, &blk.skip_bn}) {
            bn->gamma.setOnes();
            bn->beta.setZero();
            bn->run_mean.setZero();
            bn->run_var.setOnes();
        }
    }
    fill(head_weight_, flat_dim_);
    head_bias_.setZero();
    // Start the head at a typical squeezed state in the same orientation the
    // labels use: squeezed variance in the x slot (tau_xx ~ 0.2 -> sxx ~ 0.6),
    // anti-squeezed in p (tau_pp ~ 4 -> spp ~ 3), angle at pi/4.  The default
    // raw = 0 output corresponds to the swapped orientation, whose equivalent
    // rotation angle lies outside the reachable (0, pi) interval for many
    // labels; states that fail to flip orientation during training saturate
    // the logistic angle output at a boundary and stop learning.
    if (config_.head_outputs >= 3) head_bias_[2] = std::log(1.0 / 3.0);
    metadata_ = TrainingRun{};
    metadata_.seed = seed;
}

std::size_t Network::num_params() const { return parameter_count(config_); }

Eigen::VectorXd Network::get_params() const {
    Eigen::VectorXd flat(num_params());
    Eigen::Index at = 0;
    auto put_mat = [&](const Eigen::MatrixXd& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) flat[at++] = m(i, j);
    };
    auto put_vec = [&](const Eigen::VectorXd& v) {
        flat.segment(at, v.size()) = v;
        at += v.size();
    };
    for (const auto& blk : blocks_) {
        put_mat(blk.conv.weight);
        put_vec(blk.conv.bias);
        put_vec(blk.bn.gamma);
        put_vec(blk.bn.beta);
        put_mat(blk.skip.weight);
        put_vec(blk.skip.bias);
        put_vec(blk.skip_bn.gamma);
        put_vec(blk.skip_bn.beta);
    }
    put_mat(head_weight_);
    put_vec(head_bias_);
    return flat;
}

void Network::set_params(const Eigen::VectorXd& flat) {
    if (static_cast<std::size_t>(flat.size()) != num_params())
        throw format_error("parameter vector has wrong length");
    Eigen::Index at = 0;
    auto get_mat = [&](Eigen::MatrixXd& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = flat[at++];
    };
    auto get_vec = [&](Eigen::VectorXd& v) {
        v = flat.segment(at, v.size());
        at += v.size();
    };
    for (auto& blk : blocks_) {
        get_mat(blk.conv.weight);
        get_vec(blk.conv.bias);
        get_vec(blk.bn.gamma);
        get_vec(blk.bn.beta);
        get_mat(blk.skip.weight);
        get_vec(blk.skip.bias);
        get_vec(blk.skip_bn.gamma);
        get_vec(blk.skip_bn.beta);
    }
    get_mat(head_weight_);
    get_vec(head_bias_);
}

Eigen::MatrixXd Network::input_matrix(const QuadratureSequence& seq) const {
    if (seq.size() != config_.input_length)
        throw std::invalid_argument("sequence length does not match network");
    Eigen::MatrixXd input(config_.in_channels, config_.input_length);
    for (std::size_t i = 0; i < seq.size(); ++i) {
        input(0, static_cast<Eigen::Index>(i)) = seq.points[i].x;
        input(1, static_cast<Eigen::Index>(i)) = seq.points[i].theta;
    }
    return input;
}

// ---------------------------------------------------------------------------
// Batched training-mode forward/backward

struct Network::Impl {
    struct BlockCache {
        Eigen::MatrixXd patches;       // cin*k x batch*out_len
        Eigen::MatrixXd skip_patches;  // cin   x batch*out_len
        Eigen::MatrixXd xhat_main, xhat_skip;
        Eigen::VectorXd istd_main, istd_skip;
        Eigen::MatrixXd output;  // post-ReLU
    };

    static Eigen::MatrixXd im2col(const Eigen::MatrixXd& act,
                                  const Network::Block& blk,
                                  std::size_t batch) {
        const auto cin = static_cast<Eigen::Index>(blk.conv.cin);
        const auto k = static_cast<Eigen::Index>(blk.conv.kernel);
        const auto pad = static_cast<Eigen::Index>(blk.conv.pad);
        const auto in_len = static_cast<Eigen::Index>(blk.in_len);
        const auto out_len = static_cast<Eigen::Index>(blk.out_len);
        Eigen::MatrixXd patches =
            Eigen::MatrixXd::Zero(cin * k, static_cast<Eigen::Index>(batch) * out_len);
        for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(batch); ++b)
            for (Eigen::Index t = 0; t < out_len; ++t) {
                const Eigen::Index col = b * out_len + t;
                for (Eigen::Index kk = 0; kk < k; ++kk) {
                    const Eigen::Index j = 2 * t + kk - pad;
                    if (j < 0 || j >= in_len) continue;
                    patches.block(kk * cin, col, cin, 1).noalias() =
                        act.block(0, b * in_len + j, cin, 1);
                }
            }
        return patches;
    }

    static void col2im_add(const Eigen::MatrixXd& dpatches,
                           const Network::Block& blk, std::size_t batch,
                           Eigen::MatrixXd& dact) {
        const auto cin = static_cast<Eigen::Index>(blk.conv.cin);
        const auto k = static_cast<Eigen::Index>(blk.conv.kernel);
        const auto pad = static_cast<Eigen::Index>(blk.conv.pad);
        const auto in_len = static_cast<Eigen::Index>(blk.in_len);
        const auto out_len = static_cast<Eigen::Index>(blk.out_len);
        for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(batch); ++b)
            for (Eigen::Index t = 0; t < out_len; ++t) {
                const Eigen::Index col = b * out_len + t;
                for (Eigen::Index kk = 0; kk < k; ++kk) {
                    const Eigen::Index j = 2 * t + kk - pad;
                    if (j < 0 || j >= in_len) continue;
                    dact.block(0, b * in_len + j, cin, 1).noalias() +=
                        dpatches.block(kk * cin, col, cin, 1);
                }
            }
    }

    static Eigen::MatrixXd gather_skip(const Eigen::MatrixXd& act,
                                       const Network::Block& blk,
                                       std::size_t batch) {
        const auto cin = static_cast<Eigen::Index>(blk.conv.cin);
        const auto in_len = static_cast<Eigen::Index>(blk.in_len);
        const auto out_len = static_cast<Eigen::Index>(blk.out_len);
        Eigen::MatrixXd out(cin, static_cast<Eigen::Index>(batch) * out_len);
        for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(batch); ++b)
            for (Eigen::Index t = 0; t < out_len; ++t)
                out.col(b * out_len + t) = act.col(b * in_len + 2 * t);
        return out;
    }

    static void scatter_skip_add(const Eigen::MatrixXd& dout,
                                 const Network::Block& blk, std::size_t batch,
                                 Eigen::MatrixXd& dact) {
        const auto in_len = static_cast<Eigen::Index>(blk.in_len);
        const auto out_len = static_cast<Eigen::Index>(blk.out_len);
        for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(batch); ++b)
            for (Eigen::Index t = 0; t < out_len; ++t)
                dact.col(b * in_len + 2 * t) += dout.col(b * out_len + t);
    }

    /// Training-mode batch norm: normalizes rows in place into xhat,
    /// returns the affine output; optionally folds batch statistics into
    /// the running ones.
    static Eigen::MatrixXd bn_forward(const Eigen::MatrixXd& pre,
                                      Network::BatchNorm& bn,
                                      Eigen::MatrixXd& xhat,
                                      Eigen::VectorXd& istd, bool update_stats,
                                      double momentum) {
        const double n = static_cast<double>(pre.cols());
        const Eigen::VectorXd mean = pre.rowwise().mean();
        const Eigen::VectorXd var =
            (pre.colwise() - mean).array().square().rowwise().sum() / n;
        istd = (var.array() + kBnEps).rsqrt();
        xhat = (pre.colwise() - mean).array().colwise() * istd.array();
        if (update_stats) {
            bn.run_mean = momentum * bn.run_mean + (1.0 - momentum) * mean;
            bn.run_var = momentum * bn.run_var + (1.0 - momentum) * var;
        }
        return (xhat.array().colwise() * bn.gamma.array()).array().colwise() +
               bn.beta.array();
    }

    /// Reverse of bn_forward; returns the gradient with respect to the
    /// pre-normalization input and accumulates dgamma/dbeta.
    static Eigen::MatrixXd bn_backward(const Eigen::MatrixXd& dz,
                                       const Eigen::MatrixXd& xhat,
                                       const Eigen::VectorXd& istd,
                                       const Eigen::VectorXd& gamma,
                                       Eigen::VectorXd& dgamma,
                                       Eigen::VectorXd& dbeta) {
        const double n = static_cast<double>(dz.cols());
        dgamma = (dz.array() * xhat.array()).rowwise().sum();
        dbeta = dz.rowwise().sum();
        const Eigen::VectorXd m1 = dz.rowwise().mean();
        const Eigen::VectorXd m2 = dgamma / n;
        Eigen::MatrixXd dy =
            (dz.colwise() - m1).array() - xhat.array().colwise() * m2.array();
        return dy.array().colwise() * (gamma.array() * istd.array());
    }
};

double Network::loss_and_gradient(const std::vector<const LabeledState*>& batch,
                                  Eigen::VectorXd& grad) {
    return compute(batch, grad, false, 0.0);
}

double Network::compute(const std::vector<const LabeledState*>& batch,
                        Eigen::VectorXd& grad, bool update_stats,
                        double momentum, double saturation_penalty,
                        std::vector<signed char>* wrap_modes, double edge,
                        double aux_log_weight) {
    const std::size_t nb = batch.size();
    if (nb == 0) throw std::invalid_argument("empty batch");

    // Assemble batch input (channels x batch*len).
    Eigen::MatrixXd act(config_.in_channels,
                        static_cast<Eigen::Index>(nb * config_.input_length));
    for (std::size_t b = 0; b < nb; ++b)
        act.block(0, static_cast<Eigen::Index>(b * config_.input_length),
                  config_.in_channels, config_.input_length) =
            input_matrix(batch[b]->sequence);

    std::vector<Impl::BlockCache> caches(blocks_.size());
    const Eigen::MatrixXd* cur = &act;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        auto& blk = blocks_[i];
        auto& cache = caches[i];
        cache.patches = Impl::im2col(*cur, blk, nb);
        Eigen::MatrixXd pre = blk.conv.weight * cache.patches;
        pre.colwise() += blk.conv.bias;
        Eigen::MatrixXd z = Impl::bn_forward(pre, blk.bn, cache.xhat_main,
                                             cache.istd_main, update_stats,
                                             momentum);
        cache.skip_patches = Impl::gather_skip(*cur, blk, nb);
        Eigen::MatrixXd pre_s = blk.skip.weight * cache.skip_patches;
        pre_s.colwise() += blk.skip.bias;
        z += Impl::bn_forward(pre_s, blk.skip_bn, cache.xhat_skip,
                              cache.istd_skip, update_stats, momentum);
        cache.output = z.cwiseMax(0.0);
        cur = &cache.output;
    }

    // Head + per-sample output chain.
    const auto& last_blk = blocks_.back();
    const auto llen = static_cast<Eigen::Index>(last_blk.out_len);
    const auto lch = static_cast<Eigen::Index>(last_blk.conv.cout);
    Eigen::MatrixXd flat(flat_dim_, nb);
    for (std::size_t b = 0; b < nb; ++b)
        for (Eigen::Index c = 0; c < lch; ++c)
            flat.block(c * llen, static_cast<Eigen::Index>(b), llen, 1) =
                cur->block(c, static_cast<Eigen::Index>(b) * llen, 1, llen)
                    .transpose();
    Eigen::MatrixXd raw = head_weight_ * flat;
    raw.colwise() += head_bias_;

    double loss = 0.0;
    Eigen::MatrixXd draw(3, nb);
    for (std::size_t b = 0; b < nb; ++b) {
        const CovarianceMatrix target = to_covariance(batch[b]->target);
        double da, db, dc;
        loss += chain_loss({raw(0, static_cast<Eigen::Index>(b)),
                            raw(1, static_cast<Eigen::Index>(b)),
                            raw(2, static_cast<Eigen::Index>(b))},
                           target, &da, &db, &dc);
        if (aux_log_weight > 0.0) {
            // Training-only shaping term (excluded from the reported loss):
            // squared log-ratio between predicted and target covariance
            // eigenvalues, matched by sort order so it is invariant to which
            // diagonal slot the network uses.  The covariance-entry MSE above
            // barely feels relative errors in the squeezed (small) eigenvalue,
            // yet squeezing in dB is exactly its log; this term supplies that
            // missing pressure.
            const double a_raw = raw(0, static_cast<Eigen::Index>(b));
            const double b_raw = raw(1, static_cast<Eigen::Index>(b));
            const double tau_xx = capped_softplus(a_raw) + kTauMargin;
            const double tau_pp = 1.0 + capped_softplus(b_raw) + kTauPpSlack;
            const double sxx_d = (tau_xx * tau_pp + 1.0) / (tau_pp - 1.0);
            const double spp_d = tau_pp - 1.0;
            const double t_lo = std::min(batch[b]->target.sxx,
                                         batch[b]->target.spp);
            const double t_hi = std::max(batch[b]->target.sxx,
                                         batch[b]->target.spp);
            const bool xx_is_lo = sxx_d <= spp_d;
            // Clamp the log-ratio so gross early-training errors exert a
            // bounded, steady pull instead of spiking the batch gradient.
            const double e_xx = std::clamp(
                std::log(sxx_d / (xx_is_lo ? t_lo : t_hi)), -2.0, 2.0);
            const double e_pp = std::clamp(
                std::log(spp_d / (xx_is_lo ? t_hi : t_lo)), -2.0, 2.0);
            const double g_sxx = 2.0 * aux_log_weight * e_xx / sxx_d;
            const double g_spp = 2.0 * aux_log_weight * e_pp / spp_d;
            const double dsxx_dtxx = tau_pp / (tau_pp - 1.0);
            const double dsxx_dtpp =
                -(tau_xx + 1.0) / ((tau_pp - 1.0) * (tau_pp - 1.0));
            if (softplus(a_raw) < kTauCap)
                da += g_sxx * dsxx_dtxx * logistic(a_raw);
            if (softplus(b_raw) < kTauCap)
                db += (g_sxx * dsxx_dtpp + g_spp) * logistic(b_raw);
        }
        if (saturation_penalty > 0.0) {
            const double c = raw(2, static_cast<Eigen::Index>(b));
            // The rotation is pi-periodic, so the two logistic saturation
            // limits of the angle output describe the same covariance.  A
            // sample pinned against one limit with its gradient still pointing
            // outward has its true optimum on the far side of the interval;
            // drive its raw angle across (overpowering the intervening ridge)
            // until the plain gradient pulls the same way, then hand back.
            if (wrap_modes != nullptr) {
                signed char& mode = (*wrap_modes)[b];
                if (mode == 0) {
                    if (c <= -edge && dc > 0.0)
                        mode = 1;
                    else if (c >= edge && dc < 0.0)
                        mode = -1;
                }
                if (mode == 1) {
                    if (dc < 0.0 && c > -edge)
                        mode = 0;
                    else
                        dc = -(1.5 * std::abs(dc) + 0.01);
                } else if (mode == -1) {
                    if (dc > 0.0 && c < edge)
                        mode = 0;
                    else
                        dc = 1.5 * std::abs(dc) + 0.01;
                }
            }
            // Training-only guard (excluded from the reported loss): push the
            // raw angle output back toward the responsive range of the
            // logistic.  Beyond the edge the angle gradient scales by
            // exp(-|c|), and a sample whose angle head drifts deep into
            // saturation would otherwise stop learning its rotation angle.
            const double over = std::abs(c) - edge;
            if (over > 0.0)
                dc += saturation_penalty * 2.0 * over * (c > 0.0 ? 1.0 : -1.0);
        }
        draw.col(static_cast<Eigen::Index>(b)) << da, db, dc;
    }
    loss /= static_cast<double>(nb);
    draw /= static_cast<double>(nb);

    // Backward pass.
    grad.resize(num_params());
    Eigen::Index at = static_cast<Eigen::Index>(num_params());
    auto store_vec = [&](const Eigen::VectorXd& v) {
        at -= v.size();
        grad.segment(at, v.size()) = v;
    };
    auto store_mat = [&](const Eigen::MatrixXd& m) {
        at -= m.size();
        Eigen::Index p = at;
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) grad[p++] = m(i, j);
    };

    store_vec(draw.rowwise().sum());               // head bias
    store_mat(draw * flat.transpose());            // head weight
    Eigen::MatrixXd dflat = head_weight_.transpose() * draw;

    Eigen::MatrixXd dact(lch, static_cast<Eigen::Index>(nb) * llen);
    for (std::size_t b = 0; b < nb; ++b)
        for (Eigen::Index c = 0; c < lch; ++c)
            dact.block(c, static_cast<Eigen::Index>(b) * llen, 1, llen) =
                dflat.block(c * llen, static_cast<Eigen::Index>(b), llen, 1)
                    .transpose();

    for (std::size_t i = blocks_.size(); i-- > 0;) {
        auto& blk = blocks_[i];
        auto& cache = caches[i];
        const Eigen::MatrixXd dsum =
            (cache.output.array() > 0.0).select(dact, 0.0);

        Eigen::VectorXd dgamma, dbeta, dgamma_s, dbeta_s;
        const Eigen::MatrixXd dpre = Impl::bn_backward(
            dsum, cache.xhat_main, cache.istd_main, blk.bn.gamma, dgamma, dbeta);
        const Eigen::MatrixXd dpre_s =
            Impl::bn_backward(dsum, cache.xhat_skip, cache.istd_skip,
                              blk.skip_bn.gamma, dgamma_s, dbeta_s);

        const std::size_t prev_cols =
            nb * (i == 0 ? config_.input_length : blocks_[i - 1].out_len);
        const std::size_t prev_rows =
            i == 0 ? config_.in_channels : blocks_[i - 1].conv.cout;
        Eigen::MatrixXd dprev = Eigen::MatrixXd::Zero(
            static_cast<Eigen::Index>(prev_rows),
            static_cast<Eigen::Index>(prev_cols));

        store_vec(dbeta_s);
        store_vec(dgamma_s);
        store_vec(dpre_s.rowwise().sum());
        store_mat(dpre_s * cache.skip_patches.transpose());
        Impl::scatter_skip_add(blk.skip.weight.transpose() * dpre_s, blk, nb,
                               dprev);

        store_vec(dbeta);
        store_vec(dgamma);
        store_vec(dpre.rowwise().sum());
        store_mat(dpre * cache.patches.transpose());
        Impl::col2im_add(blk.conv.weight.transpose() * dpre, blk, nb, dprev);

        dact = std::move(dprev);
    }
    if (at != 0) throw std::logic_error("gradient layout mismatch");
    return loss;
}

RawOutput Network::forward(const QuadratureSequence& seq) const {
    Eigen::MatrixXd act = input_matrix(seq);
    for (const auto& blk : blocks_) {
        const Eigen::MatrixXd patches = Impl::im2col(act, blk, 1);
        Eigen::MatrixXd pre = blk.conv.weight * patches;
        pre.colwise() += blk.conv.bias;
        auto norm = [](Eigen::MatrixXd& m, const BatchNorm& bn) {
            const Eigen::VectorXd istd = (bn.run_var.array() + kBnEps).rsqrt();
            m = ((m.colwise() - bn.run_mean).array().colwise() *
                 (istd.array() * bn.gamma.array()))
                    .array()
                    .colwise() +
                bn.beta.array();
        };
        norm(pre, blk.bn);
        Eigen::MatrixXd pre_s = blk.skip.weight * Impl::gather_skip(act, blk, 1);
        pre_s.colwise() += blk.skip.bias;
        norm(pre_s, blk.skip_bn);
        act = (pre + pre_s).cwiseMax(0.0);
    }
    const auto& last = blocks_.back();
    const auto llen = static_cast<Eigen::Index>(last.out_len);
    Eigen::VectorXd flat(flat_dim_);
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(last.conv.cout); ++c)
        flat.segment(c * llen, llen) = act.row(c).transpose();
    const Eigen::VectorXd raw = head_weight_ * flat + head_bias_;
    return {raw[0], raw[1], raw[2]};
}

CovarianceMatrix Network::predict_sigma(const QuadratureSequence& seq) const {
    return to_covariance(raw_to_diagonal(forward(seq)));
}

TrainingRun Network::train(
    const std::vector<const LabeledState*>& states, const TrainHyper& hyper,
    const std::function<void(std::size_t, double)>& epoch_callback) {
    if (states.empty()) throw std::invalid_argument("empty training set");
    for (const auto* s : states)
        if (!is_physical(s->target))
            throw std::invalid_argument("non-physical training label");

    TrainingRun run;
    run.seed = hyper.seed;
    run.epochs = hyper.epochs;
    run.batch_size = hyper.batch_size;
    run.learning_rate = hyper.learning_rate;
    if (hyper.phase_augment) run.optimizer += "+phase-aug";

    auto rng = make_rng(hyper.seed);
    std::vector<std::size_t> order(states.size());
    std::iota(order.begin(), order.end(), 0);

    const std::size_t n_params = num_params();
    Eigen::VectorXd m = Eigen::VectorXd::Zero(n_params);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n_params);
    Eigen::VectorXd grad(n_params);
    const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    std::size_t step = 0;
    // Per-state angle wrap-assist bookkeeping; see compute().
    std::vector<signed char> wrap_state(states.size(), 0);
    std::vector<signed char> wrap_batch;
    std::vector<LabeledState> aug;
    std::uniform_real_distribution<double> shift_dist(0.0, kPi);

    const std::size_t steps_per_epoch =
        (states.size() + hyper.batch_size - 1) / hyper.batch_size;
    const std::size_t total_steps =
        std::max<std::size_t>(1, hyper.epochs * steps_per_epoch);
    const std::size_t warmup_steps =
        std::max<std::size_t>(1, total_steps / 10);

    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);

        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size();
             start += hyper.batch_size) {
            const std::size_t stop =
                std::min(order.size(), start + hyper.batch_size);
            std::vector<const LabeledState*> batch;
            batch.reserve(stop - start);
            for (std::size_t k = start; k < stop; ++k)
                batch.push_back(states[order[k]]);

            if (hyper.phase_augment) {
                aug.clear();
                for (const LabeledState* src : batch) {
                    LabeledState s = *src;
                    const double d = shift_dist(rng);
                    auto& pts = s.sequence.points;
                    const std::size_t n = pts.size();
                    // Sorted input stays sorted under theta -> theta + d
                    // (mod pi): points pushed past pi wrap to the front.
                    const std::size_t split = static_cast<std::size_t>(
                        std::lower_bound(pts.begin(), pts.end(), kPi - d,
                                         [](const QuadPoint& p, double v) {
                                             return p.theta < v;
                                         }) -
                        pts.begin());
                    std::vector<QuadPoint> rotated;
                    rotated.reserve(n);
                    for (std::size_t i = split; i < n; ++i)
                        rotated.push_back(
                            {pts[i].x, std::max(0.0, pts[i].theta + d - kPi)});
                    for (std::size_t i = 0; i < split; ++i)
                        rotated.push_back({pts[i].x, pts[i].theta + d});
                    pts = std::move(rotated);
                    s.target.theta0 = fold_angle(s.target.theta0 + d);
                    aug.push_back(std::move(s));
                }
                for (std::size_t k = 0; k < aug.size(); ++k)
                    batch[k] = &aug[k];
            }

            // Step-based schedule: linear warmup over the first tenth of the
            // run, then cosine decay down to 5% of the base rate.  The warmup
            // keeps the large initial residuals from slamming the bounded
            // angle output against its saturation limits before the diagonal
            // entries are roughly right.
            const double frac =
                total_steps > 1 ? static_cast<double>(step) /
                                      static_cast<double>(total_steps - 1)
                                : 0.0;
            double lr = hyper.learning_rate *
                        (0.05 + 0.95 * 0.5 * (1.0 + std::cos(kPi * frac)));
            if (step < warmup_steps)
                lr *= static_cast<double>(step + 1) /
                      static_cast<double>(warmup_steps);
            // The angle guard edge widens late in training: a tight edge
            // keeps early wall-stuck samples recoverable, while the final
            // phase needs the extra logistic range to resolve angles close
            // to 0 or pi.  Wrap assistance is disabled for the final stretch
            // so samples whose optimum genuinely sits near a wall settle
            // instead of ping-ponging across it.
            const double edge =
                4.0 + 4.0 * std::clamp((frac - 0.5) / 0.4, 0.0, 1.0);
            const bool wrap_on = frac < 0.7;
            wrap_batch.resize(batch.size());
            for (std::size_t k = start; k < stop; ++k)
                wrap_batch[k - start] = wrap_state[order[k]];
            const double loss =
                compute(batch, grad, true, hyper.bn_momentum, 1.0,
                        wrap_on ? &wrap_batch : nullptr, edge, 1.0);
            for (std::size_t k = start; k < stop; ++k)
                wrap_state[order[k]] = wrap_batch[k - start];
            if (!std::isfinite(loss))
                throw std::runtime_error(
                    "training diverged: non-finite loss at epoch " +
                    std::to_string(epoch));
            epoch_loss += loss * static_cast<double>(batch.size());
            seen += batch.size();

            ++step;
            // Global-norm clipping: a single pathological batch early in
            // training otherwise poisons Adam's second-moment estimate for
            // hundreds of subsequent steps.
            const double gnorm = grad.norm();
            if (gnorm > 100.0) grad *= 100.0 / gnorm;
            if (std::getenv("GQST_DEBUG_GNORM") != nullptr &&
                step % 25 == 1)
                std::fprintf(stderr, "step %zu gnorm %.3f\n", step, gnorm);
            m = beta1 * m + (1.0 - beta1) * grad;
            v = beta2 * v.array() + (1.0 - beta2) * grad.array().square();
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            Eigen::VectorXd params = get_params();
            params.array() -= lr * (m.array() / bc1) /
                              ((v.array() / bc2).sqrt() + adam_eps);
            set_params(params);
        }
        run.loss_history.push_back(epoch_loss / static_cast<double>(seen));
        if (epoch_callback) epoch_callback(epoch, run.loss_history.back());
    }
    run.final_loss = run.loss_history.back();
    metadata_ = run;
    return run;
}

// ---------------------------------------------------------------------------
// Persistence: magic "GQNN0001", version, canonical config text, float64
// trainables in declared layer order, running statistics, metadata.

namespace {

constexpr char kModelMagic[9] = "GQNN0001";

void mput(std::FILE* f, const void* p, std::size_t n, const std::string& path) {
    if (std::fwrite(p, 1, n, f) != n) throw io_error("write failed: " + path);
}

void mget(std::FILE* f, void* p, std::size_t n, const std::string& path) {
    if (std::fread(p, 1, n, f) != n)
        throw format_error("truncated model file: " + path);
}

std::string config_text(const NetworkConfig& c) {
    std::ostringstream out;
    out << "input_length=" << c.input_length << "\nchannels=" << c.in_channels
        << "\nkernel=" << c.kernel_size << "\nstride=" << c.stride
        << "\nblocks=";
    for (std::size_t i = 0; i < c.blocks.size(); ++i)
        out << (i ? "," : "") << c.blocks[i];
    out << "\nhead=" << c.head_outputs << "\n";
    return out.str();
}

NetworkConfig parse_config_text(const std::string& text,
                                const std::string& path) {
    NetworkConfig c;
    c.blocks.clear();
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw format_error("malformed config line in model: " + path);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "input_length") c.input_length = std::stoul(val);
        else if (key == "channels") c.in_channels = std::stoul(val);
        else if (key == "kernel") c.kernel_size = std::stoul(val);
        else if (key == "stride") c.stride = std::stoul(val);
        else if (key == "head") c.head_outputs = std::stoul(val);
        else if (key == "blocks") {
            std::istringstream bl(val);
            std::string tok;
            while (std::getline(bl, tok, ',')) c.blocks.push_back(std::stoul(tok));
        } else {
            throw format_error("unknown config key in model: " + path);
        }
    }
    return c;
}

}  // namespace

void Network::save(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw io_error("cannot open for writing: " + path);
    try {
        mput(f, kModelMagic, 8, tmp);
        const std::uint32_t version = 1;
        mput(f, &version, 4, tmp);
        const std::string cfg = config_text(config_);
        const auto cfg_len = static_cast<std::uint32_t>(cfg.size());
        mput(f, &cfg_len, 4, tmp);
        mput(f, cfg.data(), cfg.size(), tmp);

        const Eigen::VectorXd params = get_params();
        const auto n_params = static_cast<std::uint64_t>(params.size());
        mput(f, &n_params, 8, tmp);
        mput(f, params.data(), params.size() * 8, tmp);

        std::vector<double> stats;
        for (const auto& blk : blocks_)
            for (const auto* bn : {&blk.bn, &blk.skip_bn}) {
                stats.insert(stats.end(), bn->run_mean.data(),
                             bn->run_mean.data() + bn->run_mean.size());
                stats.insert(stats.end(), bn->run_var.data(),
                             bn->run_var.data() + bn->run_var.size());
            }
        const auto n_stats = static_cast<std::uint64_t>(stats.size());
        mput(f, &n_stats, 8, tmp);
        mput(f, stats.data(), stats.size() * 8, tmp);

        const std::uint64_t seed = metadata_.seed;
        const auto epochs = static_cast<std::uint64_t>(metadata_.epochs);
        const auto batch = static_cast<std::uint64_t>(metadata_.batch_size);
        mput(f, &seed, 8, tmp);
        mput(f, &epochs, 8, tmp);
        mput(f, &batch, 8, tmp);
        mput(f, &metadata_.learning_rate, 8, tmp);
        mput(f, &metadata_.final_loss, 8, tmp);
        const auto opt_len = static_cast<std::uint32_t>(metadata_.optimizer.size());
        mput(f, &opt_len, 4, tmp);
        mput(f, metadata_.optimizer.data(), opt_len, tmp);
        const auto hist = static_cast<std::uint64_t>(metadata_.loss_history.size());
        mput(f, &hist, 8, tmp);
        mput(f, metadata_.loss_history.data(), hist * 8, tmp);
    } catch (...) {
        std::fclose(f);
        std::remove(tmp.c_str());
        throw;
    }
    if (std::fclose(f) != 0) throw io_error("close failed: " + path);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw io_error("rename failed: " + path);
}

Network Network::load(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw io_error("cannot open for reading: " + path);
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> guard(f, std::fclose);

    char magic[8];
    mget(f, magic, 8, path);
    if (std::memcmp(magic, kModelMagic, 8) != 0)
        throw format_error("bad model magic: " + path);
    std::uint32_t version = 0;
    mget(f, &version, 4, path);
    if (version != 1) throw format_error("unsupported model version: " + path);
    std::uint32_t cfg_len = 0;
    mget(f, &cfg_len, 4, path);
    if (cfg_len > 4096) throw format_error("oversized config block: " + path);
    std::string cfg(cfg_len, '\0');
    mget(f, cfg.data(), cfg_len, path);

    Network net(parse_config_text(cfg, path));
    std::uint64_t n_params = 0;
    mget(f, &n_params, 8, path);
    if (n_params != net.num_params())
        throw format_error("parameter count does not match config: " + path);
    Eigen::VectorXd params(static_cast<Eigen::Index>(n_params));
    mget(f, params.data(), n_params * 8, path);
    net.set_params(params);

    std::uint64_t n_stats = 0;
    mget(f, &n_stats, 8, path);
    std::vector<double> stats(n_stats);
    mget(f, stats.data(), n_stats * 8, path);
    std::size_t at = 0;
    for (auto& blk : net.blocks_)
        for (auto* bn : {&blk.bn, &blk.skip_bn}) {
            const auto c = static_cast<std::size_t>(bn->run_mean.size());
            if (at + 2 * c > n_stats)
                throw format_error("running statistics shape mismatch: " + path);
            for (std::size_t i = 0; i < c; ++i) bn->run_mean[i] = stats[at++];
            for (std::size_t i = 0; i < c; ++i) bn->run_var[i] = stats[at++];
        }
    if (at != n_stats)
        throw format_error("running statistics shape mismatch: " + path);

    std::uint64_t epochs = 0, batch = 0, hist = 0;
    mget(f, &net.metadata_.seed, 8, path);
    mget(f, &epochs, 8, path);
    mget(f, &batch, 8, path);
    mget(f, &net.metadata_.learning_rate, 8, path);
    mget(f, &net.metadata_.final_loss, 8, path);
    net.metadata_.epochs = epochs;
    net.metadata_.batch_size = batch;
    std::uint32_t opt_len = 0;
    mget(f, &opt_len, 4, path);
    if (opt_len > 256) throw format_error("oversized metadata: " + path);
    net.metadata_.optimizer.assign(opt_len, '\0');
    mget(f, net.metadata_.optimizer.data(), opt_len, path);
    mget(f, &hist, 8, path);
    net.metadata_.loss_history.assign(hist, 0.0);
    mget(f, net.metadata_.loss_history.data(), hist * 8, path);
    return net;
}

}  // namespace gqst
