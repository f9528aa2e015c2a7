#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"

#include "copytrace/errors.hpp"
#include "copytrace/loss.hpp"
#include "copytrace/tokens.hpp"
#include "test_support.hpp"

using namespace copytrace;

namespace {

/// 1 query token against two references at cosines (+1, -1).
struct CosinePairFixture {
    Eigen::MatrixXd q{1, 2};
    Eigen::MatrixXd r{2, 2};
    CosinePairFixture() {
        q << 1, 0;
        r << 1, 0, //
            -1, 0;
    }
};

LossFn copynce_fn(const TargetDistribution& targets, double tau) {
    return [=](const std::vector<Eigen::MatrixXd>& in) { return copynce_directional(in[0], in[1], targets, tau); };
}

} // namespace

TEST_CASE("affinity: closed-form two-candidate row") {
    const CosinePairFixture f;
    const Eigen::MatrixXd p = affinity(f.q, f.r, 1.0);
    const double e = std::exp(1.0), ei = std::exp(-1.0);
    CHECK(p(0, 0) == doctest::Approx(e / (e + ei)).epsilon(1e-12));
    CHECK(p(0, 1) == doctest::Approx(ei / (e + ei)).epsilon(1e-12));
    CHECK(p(0, 0) == doctest::Approx(0.8808).epsilon(1e-4));
    CHECK(p.row(0).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("affinity: identical references give a uniform row") {
    Rng rng(3);
    Eigen::MatrixXd q = ts::random_raw_tokens(rng, 2, 4);
    Eigen::MatrixXd r(5, 4);
    const Eigen::MatrixXd one = ts::random_raw_tokens(rng, 1, 4);
    for (int j = 0; j < 5; ++j) r.row(j) = one.row(0) * rng.uniform(0.5, 2.0); // same direction
    const Eigen::MatrixXd p = affinity(q, r, 1.0 / 16.0);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 5; ++j) REQUIRE(p(i, j) == doctest::Approx(0.2).epsilon(1e-12));
    }
}

TEST_CASE("affinity: smaller temperature concentrates mass on the argmax") {
    Rng rng(4);
    const Eigen::MatrixXd q = ts::random_raw_tokens(rng, 1, 6);
    const Eigen::MatrixXd r = ts::random_raw_tokens(rng, 8, 6);
    const Eigen::MatrixXd warm = affinity(q, r, 1.0);
    const Eigen::MatrixXd sharp = affinity(q, r, 1.0 / 16.0);
    int amax = 0;
    warm.row(0).maxCoeff(&amax);
    CHECK(sharp(0, amax) > warm(0, amax));
}

TEST_CASE("affinity: rows sum to one and entries stay in (0,1)") {
    Rng rng(5);
    const Eigen::MatrixXd q = ts::random_raw_tokens(rng, 7, 5);
    const Eigen::MatrixXd r = ts::random_raw_tokens(rng, 9, 5);
    const Eigen::MatrixXd p = affinity(q, r, 1.0 / 16.0);
    for (int i = 0; i < 7; ++i) {
        REQUIRE(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        for (int j = 0; j < 9; ++j) {
            REQUIRE(p(i, j) > 0.0);
            REQUIRE(p(i, j) < 1.0);
        }
    }
}

TEST_CASE("affinity: parameter and numeric errors") {
    const CosinePairFixture f;
    CHECK_THROWS_AS(affinity(f.q, f.r, 0.0), ParamError);
    CHECK_THROWS_AS(affinity(f.q, f.r, -1.0), ParamError);
    Eigen::MatrixXd bad = f.q;
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(affinity(bad, f.r, 1.0), NumericError);
    Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 2);
    CHECK_THROWS_AS(affinity(zero, f.r, 1.0), NumericError);
}

TEST_CASE("copynce_directional: matching p and q zeroes the KL component") {
    // A query token equidistant from two orthogonal references: p is
    // uniform, and uniform targets make cross-entropy equal target entropy.
    Eigen::MatrixXd q(1, 2), r(2, 2);
    q << 1, 1;
    r << 1, 0, //
        0, 1;
    TargetDistribution targets;
    targets.matrix = Eigen::MatrixXd::Constant(1, 2, 0.5);
    targets.row_mask = {1};
    const LossResult out = copynce_directional(q, r, targets, 1.0);
    CHECK(out.kl == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(out.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(out.target_entropy == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("copynce_directional: closed-form value on the cosine pair") {
    const CosinePairFixture f;
    TargetDistribution targets;
    targets.matrix = Eigen::MatrixXd::Zero(1, 2);
    targets.matrix(0, 0) = 1.0;
    targets.row_mask = {1};
    const LossResult out = copynce_directional(f.q, f.r, targets, 1.0);
    CHECK(out.value == doctest::Approx(std::log(1.0 + std::exp(-2.0))).epsilon(1e-12));
    CHECK(out.value == doctest::Approx(0.1269).epsilon(1e-3));
    // One-hot target: cross-entropy equals KL (target entropy zero).
    CHECK(out.target_entropy == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(out.kl == doctest::Approx(out.value).epsilon(1e-12));
}

TEST_CASE("copynce_directional: argmax one-hot target minimizes cross-entropy") {
    Rng rng(11);
    const Eigen::MatrixXd q = ts::random_raw_tokens(rng, 1, 5);
    const Eigen::MatrixXd r = ts::random_raw_tokens(rng, 6, 5);
    const Eigen::MatrixXd p = affinity(q, r, 1.0 / 16.0);
    int amax = 0;
    p.row(0).maxCoeff(&amax);
    auto one_hot_value = [&](int j) {
        TargetDistribution t;
        t.matrix = Eigen::MatrixXd::Zero(1, 6);
        t.matrix(0, j) = 1.0;
        t.row_mask = {1};
        return copynce_directional(q, r, t, 1.0 / 16.0).value;
    };
    const double best = one_hot_value(amax);
    for (int j = 0; j < 6; ++j) REQUIRE(best <= one_hot_value(j) + 1e-12);
}

TEST_CASE("copynce_directional: value matches the plain-formula oracle") {
    Rng rng(12);
    for (int round = 0; round < 10; ++round) {
        const Eigen::MatrixXd q = ts::random_raw_tokens(rng, 6, 4);
        const Eigen::MatrixXd r = ts::random_raw_tokens(rng, 8, 4);
        const TargetDistribution targets = ts::random_targets(rng, 6, 8);
        const LossResult out = copynce_directional(q, r, targets, 1.0 / 16.0);
        REQUIRE(out.value == doctest::Approx(ts::oracle_copynce_value(q, r, targets, 1.0 / 16.0)).epsilon(1e-10));
        REQUIRE(out.kl >= -1e-12);
    }
}

TEST_CASE("copynce_directional: masked-out and malformed targets") {
    const CosinePairFixture f;
    TargetDistribution all_masked;
    all_masked.matrix = Eigen::MatrixXd::Zero(1, 2);
    all_masked.row_mask = {0};
    CHECK_THROWS_AS(copynce_directional(f.q, f.r, all_masked, 1.0), NumericError);

    TargetDistribution not_stochastic;
    not_stochastic.matrix = Eigen::MatrixXd::Constant(1, 2, 0.7);
    not_stochastic.row_mask = {1};
    CHECK_THROWS_AS(copynce_directional(f.q, f.r, not_stochastic, 1.0), ParamError);
}

TEST_CASE("copynce: raw-token rescaling leaves the value invariant") {
    Rng rng(13);
    const Eigen::MatrixXd q = ts::random_raw_tokens(rng, 4, 5);
    const Eigen::MatrixXd r = ts::random_raw_tokens(rng, 6, 5);
    const TargetDistribution targets = ts::random_targets(rng, 4, 6);
    const double base = copynce_directional(q, r, targets, 1.0 / 16.0).value;
    Eigen::MatrixXd q2 = q;
    q2.row(1) *= 37.5;
    Eigen::MatrixXd r2 = r;
    r2.row(0) *= 0.003;
    CHECK(copynce_directional(q2, r2, targets, 1.0 / 16.0).value == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("copynce_symmetric: symmetry laws") {
    Rng rng(14);
    const Eigen::MatrixXd q = ts::random_raw_tokens(rng, 5, 4);
    const Eigen::MatrixXd r = ts::random_raw_tokens(rng, 5, 4);
    const TargetDistribution t_qr = ts::random_targets(rng, 5, 5);
    const TargetDistribution t_rq = ts::random_targets(rng, 5, 5);

    const LossResult fwd = copynce_symmetric(q, r, t_qr, t_rq, 1.0 / 16.0);
    const LossResult swapped = copynce_symmetric(r, q, t_rq, t_qr, 1.0 / 16.0);
    CHECK(fwd.value == doctest::Approx(swapped.value).epsilon(1e-15));

    const double mean_of_directions =
        0.5 * (copynce_directional(q, r, t_qr, 1.0 / 16.0).value + copynce_directional(r, q, t_rq, 1.0 / 16.0).value);
    CHECK(fwd.value == doctest::Approx(mean_of_directions).epsilon(1e-12));

    // Identical token sets with identity targets: both directions agree.
    TargetDistribution identity;
    identity.matrix = Eigen::MatrixXd::Identity(5, 5);
    identity.row_mask.assign(5, 1);
    const LossResult sym = copynce_symmetric(q, q, identity, identity, 1.0 / 16.0);
    CHECK(sym.value == doctest::Approx(copynce_directional(q, q, identity, 1.0 / 16.0).value).epsilon(1e-12));
}

TEST_CASE("infonce: closed-form value with four orthogonal negatives") {
    const int d = 5;
    Eigen::VectorXd anchor = Eigen::VectorXd::Zero(d);
    anchor[0] = 1.0;
    const Eigen::VectorXd positive = anchor;
    Eigen::MatrixXd noise = Eigen::MatrixXd::Identity(d, d); // includes the positive as row 0
    const LossResult out = infonce(anchor, positive, noise, 1.0);
    const double e = std::exp(1.0);
    CHECK(out.value == doctest::Approx(-std::log(e / (e + 4.0))).epsilon(1e-12));
    CHECK(out.value == doctest::Approx(0.9048).epsilon(1e-3));
}

TEST_CASE("infonce: single-candidate noise set gives zero loss") {
    Eigen::VectorXd anchor(3), positive(3);
    anchor << 0.2, -1.4, 0.7;
    positive << -0.3, 0.9, 2.0;
    Eigen::MatrixXd noise(1, 3);
    noise.row(0) = positive.transpose();
    CHECK(infonce(anchor, positive, noise, 1.0 / 16.0).value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("infonce: worst-candidate positive matches brute force") {
    Rng rng(15);
    const int n = 6, d = 4;
    const Eigen::MatrixXd noise = ts::random_raw_tokens(rng, n, d);
    Eigen::VectorXd anchor = noise.row(0).transpose();
    // Positive: the noise row with the LOWEST cosine to the anchor.
    Eigen::MatrixXd un = normalize_rows(noise);
    Eigen::VectorXd ua = un.row(0).transpose();
    int worst = 0;
    (un * ua).minCoeff(&worst);
    const Eigen::VectorXd positive = noise.row(worst).transpose();
    const LossResult out = infonce(anchor, positive, noise, 1.0);

    long double denom = 0.0L;
    const Eigen::VectorXd cosines = un * ua;
    for (int j = 0; j < n; ++j) denom += std::exp(static_cast<long double>(cosines[j]));
    const double expect = static_cast<double>(-(static_cast<long double>(cosines[worst]) - std::log(denom)));
    CHECK(out.value == doctest::Approx(expect).epsilon(1e-10));
    CHECK(out.value > std::log(static_cast<double>(n)) - 2.0); // near the log-N ceiling
}

TEST_CASE("infonce: empty noise set rejected") {
    Eigen::VectorXd v(2);
    v << 1, 0;
    CHECK_THROWS_AS(infonce(v, v, Eigen::MatrixXd(0, 2), 1.0), ParamError);
}

TEST_CASE("bce_matcher: symmetric point, saturation, gradient") {
    CHECK(bce_matcher(0.0, 1).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce_matcher(0.0, 0).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce_matcher(20.0, 1).value == doctest::Approx(2.0611536e-9).epsilon(1e-6));
    CHECK(bce_matcher(-20.0, 0).value == doctest::Approx(2.0611536e-9).epsilon(1e-6));
    CHECK(bce_matcher(0.0, 1).grads[0](0, 0) == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(bce_matcher(0.0, 0).grads[0](0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    // Stable far into saturation: value ~ |logit|, never infinite.
    const LossResult deep = bce_matcher(-500.0, 1);
    CHECK(std::isfinite(deep.value));
    CHECK(deep.value == doctest::Approx(500.0).epsilon(1e-9));
}

TEST_CASE("koleo: antipodal pair, duplicate clamp, O(n^2) oracle") {
    Eigen::MatrixXd anti(2, 2);
    anti << 1, 0, //
        -1, 0;
    CHECK(koleo(anti).value == doctest::Approx(-std::log(2.0)).epsilon(1e-12));

    Eigen::MatrixXd dup(2, 3);
    dup << 0.3, -0.4, 1.1, //
        0.3, -0.4, 1.1;
    const LossResult clamped = koleo(dup);
    CHECK(clamped.value == doctest::Approx(-std::log(1e-8)).epsilon(1e-9));
    CHECK(clamped.grads[0].isZero()); // zero gradient in the clamped regime

    Rng rng(16);
    for (int round = 0; round < 10; ++round) {
        const Eigen::MatrixXd t = ts::random_raw_tokens(rng, 8, 4);
        REQUIRE(koleo(t).value == doctest::Approx(ts::oracle_koleo_value(t)).epsilon(1e-10));
    }

    CHECK_THROWS_AS(koleo(Eigen::MatrixXd::Ones(1, 3)), ParamError);
}

TEST_CASE("objectives: weighted sums and the w_nce=0 baseline") {
    Rng rng(17);
    const Eigen::MatrixXd q = ts::random_raw_tokens(rng, 4, 5);
    const Eigen::MatrixXd r = ts::random_raw_tokens(rng, 6, 5);
    const TargetDistribution targets = ts::random_targets(rng, 4, 6);
    const LossResult nce = copynce_directional(q, r, targets, 1.0 / 16.0);
    const LossResult bce = bce_matcher(0.7, 1);

    const LossResult matcher = objective_matcher(bce, nce, 3.0);
    CHECK(matcher.value == doctest::Approx(bce.value + 3.0 * nce.value).epsilon(1e-12));
    CHECK(matcher.kl == doctest::Approx(nce.kl).epsilon(1e-12));
    CHECK(matcher.grads.size() == bce.grads.size() + nce.grads.size());
    CHECK(matcher.grads[1] == (3.0 * nce.grads[0]).eval());

    const LossResult baseline = objective_matcher(bce, nce, 0.0);
    CHECK(baseline.value == doctest::Approx(bce.value).epsilon(1e-15));
    CHECK(baseline.grads[1].isZero());

    const Eigen::VectorXd anchor = ts::random_raw_tokens(rng, 1, 5).row(0).transpose();
    const Eigen::VectorXd pos = ts::random_raw_tokens(rng, 1, 5).row(0).transpose();
    const LossResult info = infonce(anchor, pos, r, 1.0 / 16.0);
    const LossResult kol = koleo(q);
    const LossResult desc = objective_descriptor(info, kol, nce, 5.0);
    CHECK(desc.value == doctest::Approx(info.value + 5.0 * kol.value + 5.0 * nce.value).epsilon(1e-12));

    CHECK_THROWS_AS(objective_matcher(bce, nce, -1.0), ParamError);
    CHECK_THROWS_AS(objective_descriptor(info, kol, nce, 5.0, -2.0), ParamError);
}

TEST_CASE("loss defaults: temperature 1/16, matcher weight 3, descriptor weight 5") {
    CHECK(LossConfig{}.tau == doctest::Approx(1.0 / 16.0));
    CHECK(LossConfig::matcher().w_nce == doctest::Approx(3.0));
    CHECK(LossConfig::descriptor().w_nce == doctest::Approx(5.0));
    CHECK(kKoleoWeight == doctest::Approx(5.0));
}

TEST_CASE("affinity_entropy: uniform row over 196 references hits ln 196") {
    Eigen::MatrixXd q(1, 3);
    q << 0.3, 0.4, 0.5;
    Eigen::MatrixXd r(196, 3);
    for (int j = 0; j < 196; ++j) r.row(j) = q.row(0) * (1.0 + 0.01 * j); // same direction -> uniform
    const Eigen::VectorXd h = affinity_entropy(q, r, 1.0 / 16.0);
    CHECK(h[0] == doctest::Approx(std::log(196.0)).epsilon(1e-9));
}

TEST_CASE("affinity_entropy: near-one-hot rows have near-zero entropy") {
    Eigen::MatrixXd q(1, 2), r(2, 2);
    q << 1, 0;
    r << 1, 0, //
        -1, 0;
    const Eigen::VectorXd h = affinity_entropy(q, r, 1.0 / 16.0);
    CHECK(h[0] >= 0.0);
    CHECK(h[0] < 1e-9);
}

TEST_CASE("affinity_entropy: bounded by [0, ln N_r]") {
    Rng rng(18);
    const Eigen::MatrixXd q = ts::random_raw_tokens(rng, 6, 4);
    const Eigen::MatrixXd r = ts::random_raw_tokens(rng, 9, 4);
    const Eigen::VectorXd h = affinity_entropy(q, r, 1.0 / 16.0);
    for (int i = 0; i < 6; ++i) {
        REQUIRE(h[i] >= 0.0);
        REQUIRE(h[i] <= std::log(9.0) + 1e-12);
    }
}

// Grad checks run at moderate temperatures: at sharp ones (e.g. 1/16) many
// softmax entries underflow below the finite-difference noise floor and the
// relative-error test becomes meaningless. The gradient formulas do not
// depend on the temperature value.
TEST_CASE("grad_check: analytic gradients of every loss pass at 1e-4") {
    Rng rng(19);

    SUBCASE("copynce_symmetric 6x4 / 8x4") {
        const TargetDistribution t_qr = ts::random_targets(rng, 6, 8);
        const TargetDistribution t_rq = ts::random_targets(rng, 8, 6);
        const LossFn fn = [&](const std::vector<Eigen::MatrixXd>& in) {
            return copynce_symmetric(in[0], in[1], t_qr, t_rq, 0.5);
        };
        const auto report =
            grad_check(fn, {ts::random_raw_tokens(rng, 6, 4), ts::random_raw_tokens(rng, 8, 4)}, 1e-5, 1e-4);
        CHECK(report.pass);
        CHECK(report.max_rel_err <= 1e-4);
        CHECK(report.entries_checked == 6u * 4u + 8u * 4u);
    }
    SUBCASE("infonce fixture is accurate to 1e-5") {
        const LossFn fn = [](const std::vector<Eigen::MatrixXd>& in) {
            return infonce(in[0].row(0).transpose(), in[1].row(0).transpose(), in[2], 0.5);
        };
        const auto report = grad_check(fn,
                                       {ts::random_raw_tokens(rng, 1, 6), ts::random_raw_tokens(rng, 1, 6),
                                        ts::random_raw_tokens(rng, 8, 6)},
                                       1e-5, 1e-5);
        CHECK(report.pass);
    }
    SUBCASE("bce at a generic logit") {
        const LossFn fn = [](const std::vector<Eigen::MatrixXd>& in) { return bce_matcher(in[0](0, 0), 1); };
        Eigen::MatrixXd logit(1, 1);
        logit << 0.37;
        CHECK(grad_check(fn, {logit}, 1e-6, 1e-6).pass);
    }
    SUBCASE("koleo away from the clamp") {
        const LossFn fn = [](const std::vector<Eigen::MatrixXd>& in) { return koleo(in[0]); };
        CHECK(grad_check(fn, {ts::random_raw_tokens(rng, 8, 4)}, 1e-5, 1e-4).pass);
    }
}

TEST_CASE("grad_check: a broken gradient is caught and located") {
    Rng rng(20);
    const TargetDistribution t_qr = ts::random_targets(rng, 4, 5);
    const TargetDistribution t_rq = ts::random_targets(rng, 5, 4);
    const LossFn broken = [&](const std::vector<Eigen::MatrixXd>& in) {
        LossResult out = copynce_symmetric(in[0], in[1], t_qr, t_rq, 0.5);
        out.grads[0](0, 0) += 0.1;
        return out;
    };
    const auto report =
        grad_check(broken, {ts::random_raw_tokens(rng, 4, 5), ts::random_raw_tokens(rng, 5, 5)}, 1e-5, 1e-4);
    CHECK_FALSE(report.pass);
    CHECK(report.worst_input == 0);
    CHECK(report.worst_row == 0);
    CHECK(report.worst_col == 0);
}

TEST_CASE("grad_check: epsilon range enforced, subsampling deterministic") {
    Rng rng(21);
    const TargetDistribution targets = ts::random_targets(rng, 12, 30);
    const Eigen::MatrixXd q = ts::random_raw_tokens(rng, 12, 16);
    const Eigen::MatrixXd r = ts::random_raw_tokens(rng, 30, 16);
    const LossFn fn = copynce_fn(targets, 0.5);

    CHECK_THROWS_AS(grad_check(fn, {q, r}, 1e-8, 1e-4), ParamError);
    CHECK_THROWS_AS(grad_check(fn, {q, r}, 1e-2, 1e-4), ParamError);

    const auto a = grad_check(fn, {q, r}, 1e-5, 1e-4, 200, 77);
    const auto b = grad_check(fn, {q, r}, 1e-5, 1e-4, 200, 77);
    CHECK(a.entries_checked >= 200u);
    CHECK(a.entries_checked < 12u * 16u + 30u * 16u);
    CHECK(a.entries_checked == b.entries_checked);
    CHECK(a.max_rel_err == b.max_rel_err);
    CHECK(a.pass);
}
