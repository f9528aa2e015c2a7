#include "copytrace/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "copytrace/errors.hpp"
#include "copytrace/rng.hpp"
#include "copytrace/tokens.hpp"

namespace copytrace {

namespace {

constexpr double kDistanceClamp = 1e-8;

void check_finite(const Eigen::MatrixXd& m, const char* what) {
    if (!m.allFinite()) throw NumericError(std::string(what) + ": non-finite input");
}

void check_tau(double tau) {
    if (!(tau > 0)) throw ParamError("tau must be positive");
}

/// Chains a gradient w.r.t. normalized rows back to the raw rows:
/// u = z/||z||  =>  dL/dz = (g - (g.u) u) / ||z||.
Eigen::MatrixXd chain_through_normalization(const Eigen::MatrixXd& raw, const Eigen::MatrixXd& normalized,
                                            const Eigen::MatrixXd& grad_normalized) {
    Eigen::MatrixXd out(raw.rows(), raw.cols());
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
        const double norm = raw.row(i).norm();
        const double dot = grad_normalized.row(i).dot(normalized.row(i));
        out.row(i) = (grad_normalized.row(i) - dot * normalized.row(i)) / norm;
    }
    return out;
}

/// Row-stable softmax of `scores`; also writes each row's log-partition
/// (relative to the row max) so log-probabilities stay exact.
Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& scores, Eigen::VectorXd* log_norm = nullptr,
                            Eigen::VectorXd* row_max = nullptr) {
    Eigen::MatrixXd p(scores.rows(), scores.cols());
    if (log_norm) log_norm->resize(scores.rows());
    if (row_max) row_max->resize(scores.rows());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const double m = scores.row(i).maxCoeff();
        const Eigen::ArrayXd e = (scores.row(i).array() - m).exp();
        const double z = e.sum();
        p.row(i) = (e / z).matrix();
        if (log_norm) (*log_norm)(i) = std::log(z);
        if (row_max) (*row_max)(i) = m;
    }
    return p;
}

void check_targets(const TargetDistribution& targets, Eigen::Index n_q, Eigen::Index n_r, const char* what) {
    if (targets.matrix.rows() != n_q || targets.matrix.cols() != n_r) {
        throw ParamError(std::string(what) + ": target shape differs from token counts");
    }
    if (targets.row_mask.size() != static_cast<std::size_t>(n_q)) {
        throw ParamError(std::string(what) + ": target mask length differs from query count");
    }
    for (Eigen::Index i = 0; i < n_q; ++i) {
        if (!targets.row_mask[static_cast<std::size_t>(i)]) continue;
        const double s = targets.matrix.row(i).sum();
        if (std::abs(s - 1.0) > 1e-5) {
            throw ParamError(std::string(what) + ": unmasked target row " + std::to_string(i) +
                             " sums to " + std::to_string(s) + ", expected 1");
        }
    }
}

} // namespace

Eigen::MatrixXd affinity(const Eigen::MatrixXd& tokens_q, const Eigen::MatrixXd& tokens_r, double tau) {
    check_tau(tau);
    check_finite(tokens_q, "affinity");
    check_finite(tokens_r, "affinity");
    if (tokens_q.cols() != tokens_r.cols()) throw ParamError("affinity: feature dims differ");
    const Eigen::MatrixXd cos = normalize_rows(tokens_q) * normalize_rows(tokens_r).transpose();
    return row_softmax(cos / tau);
}

Eigen::VectorXd affinity_entropy(const Eigen::MatrixXd& tokens_q, const Eigen::MatrixXd& tokens_r, double tau) {
    const Eigen::MatrixXd p = affinity(tokens_q, tokens_r, tau);
    Eigen::VectorXd h(p.rows());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
            const double v = p(i, j);
            if (v > 0) acc -= v * std::log(v);
        }
        h(i) = acc;
    }
    return h;
}

LossResult copynce_directional(const Eigen::MatrixXd& tokens_q, const Eigen::MatrixXd& tokens_r,
                               const TargetDistribution& targets, double tau) {
    check_tau(tau);
    check_finite(tokens_q, "copynce");
    check_finite(tokens_r, "copynce");
    if (tokens_q.cols() != tokens_r.cols()) throw ParamError("copynce: feature dims differ");
    check_targets(targets, tokens_q.rows(), tokens_r.rows(), "copynce");

    int unmasked = 0;
    for (auto m : targets.row_mask) unmasked += m ? 1 : 0;
    if (unmasked == 0) throw NumericError("copynce: every target row is masked; the loss is undefined");

    const Eigen::MatrixXd u = normalize_rows(tokens_q);
    const Eigen::MatrixXd v = normalize_rows(tokens_r);
    const Eigen::MatrixXd scores = (u * v.transpose()) / tau;

    Eigen::VectorXd log_norm;
    Eigen::VectorXd row_max;
    const Eigen::MatrixXd p = row_softmax(scores, &log_norm, &row_max);

    LossResult out;
    double ce_sum = 0.0;
    double h_sum = 0.0;
    Eigen::MatrixXd grad_scores = Eigen::MatrixXd::Zero(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        if (!targets.row_mask[static_cast<std::size_t>(i)]) continue;
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
            const double t = targets.matrix(i, j);
            if (t > 0) {
                const double log_p = scores(i, j) - row_max(i) - log_norm(i);
                ce_sum -= t * log_p;
                h_sum -= t * std::log(t);
            }
        }
        grad_scores.row(i) = (p.row(i) - targets.matrix.row(i)) / unmasked;
    }
    out.value = ce_sum / unmasked;
    out.target_entropy = h_sum / unmasked;
    out.kl = out.value - out.target_entropy;

    const Eigen::MatrixXd grad_cos = grad_scores / tau;
    out.grads.push_back(chain_through_normalization(tokens_q, u, grad_cos * v));
    out.grads.push_back(chain_through_normalization(tokens_r, v, grad_cos.transpose() * u));
    return out;
}

LossResult copynce_symmetric(const Eigen::MatrixXd& tokens_q, const Eigen::MatrixXd& tokens_r,
                             const TargetDistribution& targets_qr, const TargetDistribution& targets_rq,
                             double tau) {
    const LossResult fwd = copynce_directional(tokens_q, tokens_r, targets_qr, tau);
    const LossResult bwd = copynce_directional(tokens_r, tokens_q, targets_rq, tau);
    LossResult out;
    out.value = 0.5 * (fwd.value + bwd.value);
    out.kl = 0.5 * (fwd.kl + bwd.kl);
    out.target_entropy = 0.5 * (fwd.target_entropy + bwd.target_entropy);
    out.grads.push_back(0.5 * (fwd.grads[0] + bwd.grads[1]));
    out.grads.push_back(0.5 * (fwd.grads[1] + bwd.grads[0]));
    return out;
}

LossResult infonce(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                   const Eigen::MatrixXd& noise_set, double tau) {
    check_tau(tau);
    if (noise_set.rows() == 0) throw ParamError("infonce: empty noise set");
    if (anchor.size() != positive.size() || anchor.size() != noise_set.cols()) {
        throw ParamError("infonce: feature dims differ");
    }
    check_finite(anchor, "infonce");
    check_finite(positive, "infonce");
    check_finite(noise_set, "infonce");

    const Eigen::MatrixXd a_raw = anchor.transpose();
    const Eigen::MatrixXd p_raw = positive.transpose();
    const Eigen::MatrixXd a = normalize_rows(a_raw);
    const Eigen::MatrixXd p = normalize_rows(p_raw);
    const Eigen::MatrixXd x = normalize_rows(noise_set);

    const double s_pos = (a * p.transpose())(0, 0) / tau;
    const Eigen::VectorXd s_noise = (x * a.transpose()).col(0) / tau;

    const double m = s_noise.maxCoeff();
    const Eigen::ArrayXd e = (s_noise.array() - m).exp();
    const double z = e.sum();
    const Eigen::VectorXd w = (e / z).matrix(); // softmax weights over the noise set

    LossResult out;
    out.value = -s_pos + m + std::log(z);

    // d value / d s_pos = -1; d value / d s_noise_j = w_j.
    Eigen::MatrixXd grad_a_hat = (-1.0 / tau) * p;
    grad_a_hat += (w.transpose() * x) / tau;
    const Eigen::MatrixXd grad_p_hat = (-1.0 / tau) * a;
    const Eigen::MatrixXd grad_x_hat = (w / tau) * a;

    out.grads.push_back(chain_through_normalization(a_raw, a, grad_a_hat));
    out.grads.push_back(chain_through_normalization(p_raw, p, grad_p_hat));
    out.grads.push_back(chain_through_normalization(noise_set, x, grad_x_hat));
    return out;
}

LossResult bce_matcher(double logit, int label) {
    if (label != 0 && label != 1) throw ParamError("bce: label must be 0 or 1");
    if (!std::isfinite(logit)) throw NumericError("bce: non-finite logit");
    // softplus(x) = log(1 + e^x) evaluated stably.
    const double softplus = std::max(logit, 0.0) + std::log1p(std::exp(-std::abs(logit)));
    LossResult out;
    out.value = softplus - label * logit;
    const double sigmoid = 1.0 / (1.0 + std::exp(-logit));
    out.grads.push_back(Eigen::MatrixXd::Constant(1, 1, sigmoid - label));
    return out;
}

LossResult koleo(const Eigen::MatrixXd& tokens) {
    if (tokens.rows() < 2) throw ParamError("koleo: needs at least two tokens");
    check_finite(tokens, "koleo");
    const Eigen::Index n = tokens.rows();
    const Eigen::MatrixXd u = normalize_rows(tokens);

    LossResult out;
    Eigen::MatrixXd grad_u = Eigen::MatrixXd::Zero(u.rows(), u.cols());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index nearest = -1;
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == i) continue;
            const double d = (u.row(i) - u.row(j)).norm();
            if (d < best) { // strict: ties keep the lowest index
                best = d;
                nearest = j;
            }
        }
        if (best < kDistanceClamp) {
            // Clamped: the loss uses the floor and the gradient is zero here.
            acc += std::log(kDistanceClamp);
            continue;
        }
        acc += std::log(best);
        const Eigen::RowVectorXd diff = (u.row(i) - u.row(nearest)) / (best * best);
        grad_u.row(i) += -diff / static_cast<double>(n);
        grad_u.row(nearest) += diff / static_cast<double>(n);
    }
    out.value = -acc / static_cast<double>(n);
    out.grads.push_back(chain_through_normalization(tokens, u, grad_u));
    return out;
}

namespace {

LossResult combine(const std::vector<std::pair<const LossResult*, double>>& parts) {
    LossResult out;
    for (const auto& [part, weight] : parts) {
        if (weight < 0) throw ParamError("objective weights must be nonnegative");
        out.value += weight * part->value;
        for (const auto& g : part->grads) out.grads.push_back(weight * g);
    }
    return out;
}

} // namespace

LossResult objective_matcher(const LossResult& bce, const LossResult& copynce, double w_nce) {
    LossResult out = combine({{&bce, 1.0}, {&copynce, w_nce}});
    out.kl = copynce.kl;
    out.target_entropy = copynce.target_entropy;
    return out;
}

LossResult objective_descriptor(const LossResult& infonce, const LossResult& koleo, const LossResult& copynce,
                                double w_nce, double w_koleo) {
    LossResult out = combine({{&infonce, 1.0}, {&koleo, w_koleo}, {&copynce, w_nce}});
    out.kl = copynce.kl;
    out.target_entropy = copynce.target_entropy;
    return out;
}

GradCheckReport grad_check(const LossFn& fn, const std::vector<Eigen::MatrixXd>& inputs, double eps,
                           double tolerance, std::size_t max_entries, std::uint64_t seed) {
    if (eps < 1e-7 || eps > 1e-3) throw ParamError("grad_check: eps must be in [1e-7, 1e-3]");
    if (!(tolerance > 0)) throw ParamError("grad_check: tolerance must be positive");

    const LossResult base = fn(inputs);
    if (base.grads.size() != inputs.size()) {
        throw ParamError("grad_check: gradient count differs from input count");
    }
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (base.grads[k].rows() != inputs[k].rows() || base.grads[k].cols() != inputs[k].cols()) {
            throw ParamError("grad_check: gradient shape differs from input " + std::to_string(k));
        }
    }

    // Flat index space over all entries of all inputs.
    std::size_t total = 0;
    for (const auto& m : inputs) total += static_cast<std::size_t>(m.size());

    std::vector<std::size_t> picks;
    if (max_entries > 0 && total > std::max<std::size_t>(max_entries, 200)) {
        const std::size_t want = std::max<std::size_t>(max_entries, 200);
        Rng rng(seed);
        std::vector<std::size_t> all(total);
        for (std::size_t i = 0; i < total; ++i) all[i] = i;
        for (std::size_t i = 0; i < want; ++i) { // partial Fisher-Yates
            const std::size_t j = i + static_cast<std::size_t>(rng.below(total - i));
            std::swap(all[i], all[j]);
        }
        picks.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(want));
    } else {
        picks.resize(total);
        for (std::size_t i = 0; i < total; ++i) picks[i] = i;
    }

    GradCheckReport report;
    std::vector<Eigen::MatrixXd> work = inputs;
    for (std::size_t flat : picks) {
        std::size_t k = 0;
        std::size_t offset = flat;
        while (offset >= static_cast<std::size_t>(work[k].size())) {
            offset -= static_cast<std::size_t>(work[k].size());
            ++k;
        }
        const auto row = static_cast<Eigen::Index>(offset) / work[k].cols();
        const auto col = static_cast<Eigen::Index>(offset) % work[k].cols();

        const double saved = work[k](row, col);
        work[k](row, col) = saved + eps;
        const double f_plus = fn(work).value;
        work[k](row, col) = saved - eps;
        const double f_minus = fn(work).value;
        work[k](row, col) = saved;
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
            throw NumericError("grad_check: non-finite loss under perturbation");
        }

        const double numeric = (f_plus - f_minus) / (2.0 * eps);
        const double analytic = base.grads[k](row, col);
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        ++report.entries_checked;
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_input = static_cast<int>(k);
            report.worst_row = row;
            report.worst_col = col;
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    report.pass = report.max_rel_err <= tolerance;
    return report;
}

} // namespace copytrace
