#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "copytrace/supervision.hpp"

namespace copytrace {

/// Shared loss defaults. Temperature applies to every softmax dot
/// product; the auxiliary weight defaults differ per objective family.
struct LossConfig {
    double tau = 1.0 / 16.0;
    double w_nce = 3.0;

    static LossConfig matcher() { return LossConfig{1.0 / 16.0, 3.0}; }
    static LossConfig descriptor() { return LossConfig{1.0 / 16.0, 5.0}; }
};

inline constexpr double kKoleoWeight = 5.0;

/// Scalar loss plus analytic gradients, one matrix per differentiable
/// input in the operation's documented order. All gradients are taken
/// w.r.t. the RAW (pre-normalization) token entries.
struct LossResult {
    double value = 0.0;
    std::vector<Eigen::MatrixXd> grads;
    double kl = 0.0;             // cross-entropy minus target entropy
    double target_entropy = 0.0; // mean target entropy over unmasked rows
};

/// Row-stochastic softmax affinity p(j|i) = softmax_j(cos(q_i, r_j)/tau),
/// computed with per-row max subtraction. Inputs are raw tokens; cosines
/// are taken after internal row normalization. Throws ParamError for
/// tau <= 0 and NumericError for non-finite input or zero rows.
Eigen::MatrixXd affinity(const Eigen::MatrixXd& tokens_q, const Eigen::MatrixXd& tokens_r, double tau);

/// Per-query Shannon entropy (natural log) of the affinity rows.
Eigen::VectorXd affinity_entropy(const Eigen::MatrixXd& tokens_q, const Eigen::MatrixXd& tokens_r, double tau);

/// Directional prior-matching loss: mean over unmasked rows of the
/// cross-entropy -sum_j q(j|i) log p(j|i). The target-entropy constant is
/// excluded from gradients and reported separately, so `kl` carries the
/// divergence form. grads = [grad_tokens_q, grad_tokens_r]. Throws
/// NumericError when every row is masked.
LossResult copynce_directional(const Eigen::MatrixXd& tokens_q, const Eigen::MatrixXd& tokens_r,
                               const TargetDistribution& targets, double tau);

/// Symmetric form: half the sum of the two directions.
/// grads = [grad_tokens_q, grad_tokens_r].
LossResult copynce_symmetric(const Eigen::MatrixXd& tokens_q, const Eigen::MatrixXd& tokens_r,
                             const TargetDistribution& targets_qr, const TargetDistribution& targets_rq,
                             double tau);

/// -log[ exp(cos(a,p)/tau) / sum_j exp(cos(a,x_j)/tau) ] with the sum over
/// the noise set only — the caller includes the positive there. grads =
/// [grad_anchor (1xd), grad_positive (1xd), grad_noise (nxd)]. Throws
/// ParamError on an empty noise set.
LossResult infonce(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                   const Eigen::MatrixXd& noise_set, double tau);

/// Numerically stable binary cross-entropy on sigmoid(logit);
/// grads = [1x1 gradient w.r.t. the logit].
LossResult bce_matcher(double logit, int label);

/// Nearest-neighbor spreading penalty -(1/n) sum_i log d_i with d_i the
/// Euclidean distance from normalized row i to its nearest distinct
/// neighbor (ties to the lowest index), clamped below at 1e-8 with zero
/// gradient in the clamped regime. grads = [grad_tokens]. Throws
/// ParamError for n < 2.
LossResult koleo(const Eigen::MatrixXd& tokens);

/// Weighted combinations. Gradients are the components' gradients scaled
/// by their weights and concatenated in component order; `kl` and
/// `target_entropy` are carried through from the prior-matching part.
LossResult objective_matcher(const LossResult& bce, const LossResult& copynce, double w_nce);
LossResult objective_descriptor(const LossResult& infonce, const LossResult& koleo, const LossResult& copynce,
                                double w_nce, double w_koleo = kKoleoWeight);

using LossFn = std::function<LossResult(const std::vector<Eigen::MatrixXd>&)>;

struct GradCheckReport {
    bool pass = false;
    double max_rel_err = 0.0;
    std::size_t entries_checked = 0;
    int worst_input = -1;   // index into the inputs vector
    long worst_row = -1;
    long worst_col = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Central finite differences on every entry of every input (or a
/// deterministic subsample of at least 200 entries when max_entries > 0
/// and the total exceeds it). Relative error per entry is
/// |a - f| / max(|a|, |f|, 1e-6). Throws ParamError for eps outside
/// [1e-7, 1e-3] and NumericError on non-finite perturbed values.
GradCheckReport grad_check(const LossFn& fn, const std::vector<Eigen::MatrixXd>& inputs, double eps,
                           double tolerance, std::size_t max_entries = 0, std::uint64_t seed = 0);

} // namespace copytrace
