#include <cmath>
#include <cstring>
#include <limits>

#include "doctest.h"

#include "copytrace/edit_ops.hpp"
#include "copytrace/errors.hpp"
#include "copytrace/supervision.hpp"
#include "copytrace/tokens.hpp"
#include "test_support.hpp"

using namespace copytrace;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

TEST_CASE("PatchGrid: tiling, index and centroid") {
    const PatchGrid g(32, 48, 16);
    CHECK(g.rows == 2);
    CHECK(g.cols == 3);
    CHECK(g.patch_count() == 6);
    CHECK(g.patch_index(17, 5) == 3);
    CHECK(g.patch_index(0, 47) == 2);
    CHECK(g.centroid(0).row == doctest::Approx(7.5));
    CHECK(g.centroid(0).col == doctest::Approx(7.5));
    CHECK(g.centroid(5).row == doctest::Approx(23.5));
    CHECK(g.centroid(5).col == doctest::Approx(39.5));
    CHECK_THROWS_AS(PatchGrid(33, 32, 16), ParamError);
    CHECK_THROWS_AS(PatchGrid(32, 32, 0), ParamError);
}

TEST_CASE("overlap_counts: aligned identity gives a diagonal of patch areas") {
    const CoordTable t = identity_table(32, 32);
    const PatchGrid g(32, 32, 16);
    const Eigen::MatrixXi counts = overlap_counts(t, g, g);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) CHECK(counts(i, j) == (i == j ? 256 : 0));
    }
}

TEST_CASE("overlap_counts: 8-pixel column shift splits interior patches 128/128") {
    CoordTable t(32, 32, 32, 32);
    for (int r = 0; r < 32; ++r) {
        for (int c = 0; c < 32; ++c) {
            if (c + 8 < 32) t.set({r, c}, Coord{r, c + 8});
        }
    }
    const PatchGrid g(32, 32, 16);
    const Eigen::MatrixXi counts = overlap_counts(t, g, g);
    // Patch (0,0) splits between reference patches (0,0) and (0,1).
    CHECK(counts(0, 0) == 128);
    CHECK(counts(0, 1) == 128);
    CHECK(counts(0, 2) == 0);
    // Right-edge patch (0,1): half its pixels run out of frame (untracked).
    CHECK(counts(1, 1) == 128);
    CHECK(counts.row(1).sum() == 128);
}

TEST_CASE("overlap_counts: all-absent table is the zero matrix") {
    const CoordTable t(32, 32, 32, 32);
    const PatchGrid g(32, 32, 16);
    CHECK(overlap_counts(t, g, g).isZero());
}

TEST_CASE("overlap_counts: dimension preconditions") {
    const CoordTable t = identity_table(32, 32);
    CHECK_THROWS_AS(overlap_counts(t, PatchGrid(16, 16, 16), PatchGrid(32, 32, 16)), ParamError);
    CHECK_THROWS_AS(overlap_counts(t, PatchGrid(32, 32, 16), PatchGrid(16, 16, 16)), ParamError);
}

TEST_CASE("overlap_counts: equals the rectangle-scan oracle on random tables") {
    Rng rng(314);
    for (int round = 0; round < 30; ++round) {
        const CoordTable t = ts::random_table(rng, 32, 32, 48, 32, rng.uniform(0.2, 1.0));
        const PatchGrid gq(32, 32, 8);
        const PatchGrid gr(48, 32, 8);
        REQUIRE(overlap_counts(t, gq, gr) == ts::oracle_overlap_counts(t, gq, gr));
    }
}

TEST_CASE("overlap_counts: mass accounting per query patch") {
    Rng rng(217);
    const CoordTable t = ts::random_table(rng, 32, 32, 32, 32, 0.6);
    const PatchGrid g(32, 32, 16);
    const Eigen::MatrixXi counts = overlap_counts(t, g, g);
    for (int i = 0; i < g.patch_count(); ++i) {
        int untracked = 0;
        const int r0 = (i / g.cols) * 16;
        const int c0 = (i % g.cols) * 16;
        for (int r = r0; r < r0 + 16; ++r) {
            for (int c = c0; c < c0 + 16; ++c) {
                if (!t.at(r, c)) ++untracked;
            }
        }
        CHECK(counts.row(i).sum() + untracked == 256);
    }
}

TEST_CASE("prior_qhat: the four-patch overlap fixture gives 0.12/0.20/0.20/0.48") {
    const CoordTable t = ts::quad_overlap_table();
    const PatchGrid gq(10, 10, 10);
    const PatchGrid gr(20, 20, 10);
    const Eigen::MatrixXi counts = overlap_counts(t, gq, gr);
    REQUIRE(counts.rows() == 1);
    REQUIRE(counts.cols() == 4);
    CHECK(counts(0, 0) == 12);
    CHECK(counts(0, 1) == 20);
    CHECK(counts(0, 2) == 20);
    CHECK(counts(0, 3) == 48);
    const Eigen::MatrixXd qhat = prior_qhat(counts, gq);
    CHECK(qhat(0, 0) == doctest::Approx(0.12).epsilon(1e-12));
    CHECK(qhat(0, 1) == doctest::Approx(0.20).epsilon(1e-12));
    CHECK(qhat(0, 2) == doctest::Approx(0.20).epsilon(1e-12));
    CHECK(qhat(0, 3) == doctest::Approx(0.48).epsilon(1e-12));
}

TEST_CASE("prior_qhat: aligned patch gives a single 1.0, untracked mass shrinks rows") {
    const PatchGrid g(32, 32, 16);
    const Eigen::MatrixXd aligned = prior_qhat(overlap_counts(identity_table(32, 32), g, g), g);
    CHECK(aligned(0, 0) == doctest::Approx(1.0));
    CHECK(aligned.row(0).sum() == doctest::Approx(1.0));

    // Half of patch 0's pixels untracked, the rest stay aligned: 0.5.
    CoordTable half = identity_table(32, 32);
    for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 16; ++c) half.set({r, c}, std::nullopt);
    }
    const Eigen::MatrixXd q = prior_qhat(overlap_counts(half, g, g), g);
    CHECK(q(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(q.row(0).sum() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("sharpen: gamma=1 keeps the overlap proportions") {
    Eigen::MatrixXd qhat(1, 4);
    qhat << 0.12, 0.20, 0.20, 0.48;
    const TargetDistribution t = sharpen(qhat, 1.0, {1});
    CHECK(t.matrix(0, 0) == doctest::Approx(0.12).epsilon(1e-12));
    CHECK(t.matrix(0, 1) == doctest::Approx(0.20).epsilon(1e-12));
    CHECK(t.matrix(0, 2) == doctest::Approx(0.20).epsilon(1e-12));
    CHECK(t.matrix(0, 3) == doctest::Approx(0.48).epsilon(1e-12));
    CHECK(t.gamma == 1.0);
}

TEST_CASE("sharpen: gamma=0 is uniform over the support") {
    Eigen::MatrixXd qhat(1, 5);
    qhat << 0.12, 0.20, 0.20, 0.48, 0.0;
    const TargetDistribution t = sharpen(qhat, 0.0, {1});
    for (int j = 0; j < 4; ++j) CHECK(t.matrix(0, j) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(t.matrix(0, 4) == 0.0); // zero entries stay outside the support
}

TEST_CASE("sharpen: gamma=inf is a one-hot argmax with lowest-index ties") {
    Eigen::MatrixXd qhat(2, 4);
    qhat << 0.12, 0.20, 0.20, 0.48, //
        0.3, 0.3, 0.2, 0.0;
    const TargetDistribution t = sharpen(qhat, kInf, {1, 1});
    CHECK(t.matrix(0, 3) == doctest::Approx(1.0));
    CHECK(t.matrix.row(0).sum() == doctest::Approx(1.0));
    CHECK(t.matrix(1, 0) == doctest::Approx(1.0)); // tie 0.3/0.3 -> index 0
}

TEST_CASE("sharpen: intermediate gamma matches direct exponentiation") {
    Eigen::MatrixXd qhat(1, 4);
    qhat << 0.12, 0.20, 0.20, 0.48;
    const TargetDistribution t = sharpen(qhat, 2.0, {1});
    const double denom = 0.12 * 0.12 + 0.2 * 0.2 + 0.2 * 0.2 + 0.48 * 0.48;
    for (int j = 0; j < 4; ++j) {
        CHECK(t.matrix(0, j) == doctest::Approx(qhat(0, j) * qhat(0, j) / denom).epsilon(1e-12));
    }
}

TEST_CASE("sharpen: masked rows zero, empty support on an unmasked row rejected") {
    Eigen::MatrixXd qhat = Eigen::MatrixXd::Zero(2, 3);
    qhat(0, 1) = 0.5;
    const TargetDistribution t = sharpen(qhat, 1.0, {1, 0});
    CHECK(t.matrix.row(1).isZero());
    CHECK(t.unmasked_count() == 1);
    CHECK_THROWS_AS(sharpen(qhat, 1.0, {1, 1}), ParamError);
    CHECK_THROWS_AS(sharpen(qhat, -0.5, {1, 0}), ParamError);
}

TEST_CASE("sharpen: entropy non-increasing in gamma, support preserved, argmax stable") {
    Rng rng(55);
    const double gammas[] = {0.0, 0.5, 1.0, 2.0, 3.0, kInf};
    for (int round = 0; round < 25; ++round) {
        Eigen::MatrixXd qhat = Eigen::MatrixXd::Zero(1, 8);
        const int support = static_cast<int>(rng.uniform_int(2, 8));
        for (int s = 0; s < support; ++s) qhat(0, s) = rng.uniform(0.05, 1.0);
        double prev = std::numeric_limits<double>::infinity();
        for (const double g : gammas) {
            const TargetDistribution t = sharpen(qhat, g, {1});
            const double h = ts::row_entropy(t.matrix.row(0));
            REQUIRE(h <= prev + 1e-12);
            prev = h;
            if (std::isfinite(g) && g > 0) {
                for (int j = 0; j < 8; ++j) REQUIRE((t.matrix(0, j) > 0) == (qhat(0, j) > 0));
            }
        }
        // gamma=1 preserves the argmax of qhat.
        int amax_q = 0, amax_t = 0;
        qhat.row(0).maxCoeff(&amax_q);
        sharpen(qhat, 1.0, {1}).matrix.row(0).maxCoeff(&amax_t);
        REQUIRE(amax_q == amax_t);
    }
}

TEST_CASE("sharpen: unmasked rows sum to one within 1e-9") {
    Rng rng(56);
    for (int round = 0; round < 20; ++round) {
        const CoordTable t = ts::random_table(rng, 32, 32, 32, 32, 0.5);
        const PatchGrid g(32, 32, 8);
        const Eigen::MatrixXi counts = overlap_counts(t, g, g);
        const TargetDistribution targets =
            sharpen(prior_qhat(counts, g), rng.uniform(0.0, 3.0), row_mask_from_counts(counts));
        for (int i = 0; i < targets.n_query(); ++i) {
            if (targets.row_mask[static_cast<std::size_t>(i)]) {
                REQUIRE(targets.matrix.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
                for (int j = 0; j < targets.n_ref(); ++j) REQUIRE(targets.matrix(i, j) >= 0.0);
            } else {
                REQUIRE(targets.matrix.row(i).isZero());
            }
        }
    }
}

TEST_CASE("pixel-sourced targets never select a zero-overlap patch") {
    Rng rng(57);
    for (int round = 0; round < 10; ++round) {
        const CoordTable t = ts::random_table(rng, 32, 32, 32, 32, 0.4);
        const PatchGrid g(32, 32, 8);
        const Eigen::MatrixXi counts = overlap_counts(t, g, g);
        const TargetDistribution targets = sharpen(prior_qhat(counts, g), 1.0, row_mask_from_counts(counts));
        for (int i = 0; i < targets.n_query(); ++i) {
            for (int j = 0; j < targets.n_ref(); ++j) {
                if (targets.matrix(i, j) > 0) REQUIRE(counts(i, j) > 0);
            }
        }
    }
}

TEST_CASE("locnn_targets: identity table matches each patch to its counterpart") {
    const CoordTable t = identity_table(64, 64);
    const PatchGrid g(64, 64, 16);
    const MatchAssignment a = locnn_targets(t, g, g, 1);
    for (int i = 0; i < g.patch_count(); ++i) {
        REQUIRE(a.matches[static_cast<std::size_t>(i)].size() == 1u);
        CHECK(a.matches[static_cast<std::size_t>(i)][0].first == i);
        CHECK(a.matches[static_cast<std::size_t>(i)][0].second == doctest::Approx(1.0));
    }
}

TEST_CASE("locnn_targets: k=4 on identity picks the aligned patch plus 3 nearest") {
    const CoordTable t = identity_table(64, 64);
    const PatchGrid g(64, 64, 16);
    const MatchAssignment a = locnn_targets(t, g, g, 4);
    // Interior patch 5 = (1,1): mapped pixel (23,23) sits up-left of the
    // patch center, so the up (1) and left (4) neighbors win, then the
    // right neighbor (6) beats the down neighbor (9) on the index tie.
    std::vector<int> got;
    for (const auto& [j, w] : a.matches[5]) {
        got.push_back(j);
        CHECK(w == doctest::Approx(0.25));
    }
    std::sort(got.begin(), got.end());
    CHECK(got == std::vector<int>{1, 4, 5, 6});
}

TEST_CASE("locnn_targets: centroid-zone dropout produces a zero-overlap match") {
    // Patch 0 keeps a single tracked pixel in its far corner; the tracked
    // pixel nearest its centroid belongs to the fully tracked patch 1, so
    // the location heuristic matches patch 0 to reference patch 1 where it
    // has no overlap at all.
    CoordTable t(16, 16, 16, 16);
    t.set({0, 0}, Coord{0, 0});
    for (int r = 0; r < 16; ++r) {
        for (int c = 8; c < 16; ++c) t.set({r, c}, Coord{r, c});
    }
    const PatchGrid g(16, 16, 8);
    const MatchAssignment a = locnn_targets(t, g, g, 1);
    const Eigen::MatrixXi counts = overlap_counts(t, g, g);
    REQUIRE(a.matches[0].size() == 1u);
    const int picked = a.matches[0][0].first;
    CHECK(picked == 1);
    CHECK(counts(0, picked) == 0);
    CHECK(counts(0, 0) == 1); // the overlap that actually exists
}

TEST_CASE("locnn_targets: a rotated, matted pair produces zero-overlap matches") {
    // Two views rotated a couple of degrees apart, one additionally matted
    // and hole-punched. The near-identity relative map plus fragmented
    // visibility strands patches whose nearest tracked pixel (the heuristic's
    // stand-in) lies in a reference patch they share no pixel with. A pure
    // rigid map without occlusion rarely does this: the patch's own pixels
    // land next to the stand-in's image and rescue the assertion.
    const Image img = ts::textured_image(9006, 128, 128);
    const auto pipe_a = parse_pipeline_text(
        R"({"seed": 1, "ops": [{"kind": "rotate", "degrees": -43.9777}]})");
    const auto pipe_b = parse_pipeline_text(R"({"seed": 2, "ops": [
        {"kind": "rotate", "degrees": -45.6089},
        {"kind": "matting_mask", "shape": "ellipse",
         "center_row": 70.47, "center_col": 68.31, "radius_row": 48.14, "radius_col": 44.71},
        {"kind": "erase_rect", "top": 49, "left": 51, "height": 16, "width": 17},
        {"kind": "erase_rect", "top": 66, "left": 24, "height": 12, "width": 15},
        {"kind": "erase_rect", "top": 17, "left": 23, "height": 13, "width": 14},
        {"kind": "erase_rect", "top": 56, "left": 50, "height": 14, "width": 13},
        {"kind": "erase_rect", "top": 86, "left": 82, "height": 15, "width": 20},
        {"kind": "erase_rect", "top": 103, "left": 59, "height": 17, "width": 18},
        {"kind": "erase_rect", "top": 73, "left": 84, "height": 16, "width": 13},
        {"kind": "erase_rect", "top": 31, "left": 2, "height": 16, "width": 20}]})");
    const EditedPair pair = make_pair(img, pipe_a, pipe_b);
    const PatchGrid g(128, 128, 16);
    const MatchAssignment a = locnn_targets(pair.table_ba, g, g, 1);
    const Eigen::MatrixXi counts = overlap_counts(pair.table_ba, g, g);
    int false_matches = 0;
    for (int i = 0; i < g.patch_count(); ++i) {
        if (a.matches[static_cast<std::size_t>(i)].empty()) continue;
        if (counts(i, a.matches[static_cast<std::size_t>(i)][0].first) == 0) ++false_matches;
    }
    CHECK(false_matches >= 1);
}

TEST_CASE("locnn_targets: empty patches are masked, k bounded by the grid") {
    const CoordTable t(16, 16, 16, 16); // all absent
    const PatchGrid g(16, 16, 8);
    const MatchAssignment a = locnn_targets(t, g, g, 1);
    for (const auto& row : a.matches) CHECK(row.empty());
    CHECK_THROWS_AS(locnn_targets(t, g, g, 5), ParamError);
}

TEST_CASE("featnn_targets: self-similarity, ties, and bounds") {
    Rng rng(81);
    Eigen::MatrixXd q = normalize_rows(ts::random_raw_tokens(rng, 6, 5));
    const MatchAssignment self = featnn_targets(q, q, 1);
    for (int i = 0; i < 6; ++i) CHECK(self.matches[static_cast<std::size_t>(i)][0].first == i);

    // Two identical reference tokens: the tie goes to the lower index.
    Eigen::MatrixXd r = normalize_rows(ts::random_raw_tokens(rng, 8, 5));
    r.row(7) = r.row(3);
    Eigen::MatrixXd probe(1, 5);
    probe.row(0) = r.row(3);
    const MatchAssignment tie = featnn_targets(probe, r, 1);
    CHECK(tie.matches[0][0].first == 3);

    CHECK_THROWS_AS(featnn_targets(q, q, 7), ParamError);
}

TEST_CASE("featnn_targets: duplicated texture misleads the feature heuristic") {
    // Reference tokens 2 and 6 are identical (two copies of one texture),
    // the query truly overlaps patch 6 only; feature matching picks 2.
    Rng rng(82);
    Eigen::MatrixXd r = normalize_rows(ts::random_raw_tokens(rng, 8, 6));
    r.row(6) = r.row(2);
    Eigen::MatrixXd q(1, 6);
    q.row(0) = r.row(6);
    const MatchAssignment a = featnn_targets(q, r, 1);
    CHECK(a.matches[0][0].first == 2); // not the truly overlapping 6
}

TEST_CASE("assignment_to_distribution: uniform weights and masking") {
    MatchAssignment a;
    a.matches = {{{2, 1.0}}, {}, {{0, 0.25}, {1, 0.25}, {2, 0.25}, {3, 0.25}}};
    const TargetDistribution t = assignment_to_distribution(a, 4);
    CHECK(t.matrix(0, 2) == doctest::Approx(1.0));
    CHECK(t.row_mask[0] == 1);
    CHECK(t.row_mask[1] == 0);
    CHECK(t.matrix.row(1).isZero());
    for (int j = 0; j < 4; ++j) CHECK(t.matrix(2, j) == doctest::Approx(0.25));
    CHECK(t.unmasked_count() == 2);
}

TEST_CASE("targets serialization: round trip, gamma becomes metadata-free") {
    Rng rng(91);
    const TargetDistribution t = ts::random_targets(rng, 5, 7);
    const auto bytes = serialize_targets(t);
    const TargetDistribution back = deserialize_targets(bytes);
    REQUIRE(back.n_query() == 5);
    REQUIRE(back.n_ref() == 7);
    CHECK(back.row_mask == t.row_mask);
    // Entries ride through a float32 cast.
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 7; ++j) {
            CHECK(back.matrix(i, j) == doctest::Approx(t.matrix(i, j)).epsilon(1e-6));
        }
    }
    CHECK(std::isnan(back.gamma));
}

TEST_CASE("targets serialization: malformed blobs throw format errors") {
    Rng rng(92);
    const TargetDistribution t = ts::random_targets(rng, 2, 3);
    auto bytes = serialize_targets(t);

    SUBCASE("bad magic") {
        bytes[0] = 'Z';
        CHECK_THROWS_AS(deserialize_targets(bytes), FormatError);
    }
    SUBCASE("payload size mismatch") {
        bytes.pop_back();
        CHECK_THROWS_AS(deserialize_targets(bytes), FormatError);
    }
    SUBCASE("mask byte out of range") {
        bytes[12] = 2;
        CHECK_THROWS_AS(deserialize_targets(bytes), FormatError);
    }
    SUBCASE("non-finite entry") {
        const float bad = std::numeric_limits<float>::quiet_NaN();
        std::memcpy(bytes.data() + 14, &bad, 4);
        CHECK_THROWS_AS(deserialize_targets(bytes), FormatError);
    }
    SUBCASE("negative entry") {
        const float bad = -0.25f;
        std::memcpy(bytes.data() + 14, &bad, 4);
        CHECK_THROWS_AS(deserialize_targets(bytes), FormatError);
    }
}

TEST_CASE("targets file round trip") {
    const auto dir = ts::scratch_dir("targets_io");
    Rng rng(93);
    const TargetDistribution t = ts::random_targets(rng, 4, 4);
    const std::string path = (dir / "t.tgt").string();
    save_targets(t, path);
    const TargetDistribution back = load_targets(path);
    CHECK(back.row_mask == t.row_mask);
    CHECK_THROWS_AS(load_targets((dir / "missing.tgt").string()), ParamError);
}
