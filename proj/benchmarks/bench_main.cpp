// Microbenchmarks for the hot paths: table maintenance at a 224x224
// working size, overlap counting, the loss kernel with gradients, and
// the retrieval primitives.

#include <string>
#include <utility>
#include <vector>

#include <benchmark/benchmark.h>

#include <Eigen/Core>

#include "copytrace/coord_table.hpp"
#include "copytrace/edit_ops.hpp"
#include "copytrace/image.hpp"
#include "copytrace/loss.hpp"
#include "copytrace/retrieval.hpp"
#include "copytrace/rng.hpp"
#include "copytrace/supervision.hpp"
#include "copytrace/toy_encoder.hpp"

namespace {

using namespace copytrace;

Image noise_image(std::uint64_t seed, int h, int w) {
    Rng rng(seed);
    Image img(h, w);
    for (Pixel& p : img.pixels()) {
        p = Pixel{static_cast<std::uint8_t>(rng.below(256)), static_cast<std::uint8_t>(rng.below(256)),
                  static_cast<std::uint8_t>(rng.below(256)), 255};
    }
    return img;
}

EditPipeline warp_pipeline() {
    return parse_pipeline_text(R"({"seed": 7, "ops": [
        {"kind": "rotate", "degrees": 15.0},
        {"kind": "crop", "top": 16, "left": 16, "height": 192, "width": 192},
        {"kind": "resize", "height": 224, "width": 224}]})");
}

CoordTable warped_table() { return apply_pipeline(noise_image(1, 224, 224), warp_pipeline()).table; }

Eigen::MatrixXd raw_tokens(std::uint64_t seed, int n, int d) {
    Rng rng(seed);
    Eigen::MatrixXd m(n, d);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.gaussian();
    }
    return m;
}

void BM_apply_pipeline_224(benchmark::State& state) {
    const Image img = noise_image(1, 224, 224);
    const EditPipeline pipeline = warp_pipeline();
    for (auto _ : state) benchmark::DoNotOptimize(apply_pipeline(img, pipeline));
}
BENCHMARK(BM_apply_pipeline_224);

void BM_reverse_table_224(benchmark::State& state) {
    const CoordTable table = warped_table();
    for (auto _ : state) benchmark::DoNotOptimize(reverse(table));
}
BENCHMARK(BM_reverse_table_224);

void BM_compose_tables_224(benchmark::State& state) {
    const CoordTable table = warped_table();
    const CoordTable rev = reverse(table);
    for (auto _ : state) benchmark::DoNotOptimize(compose(table, rev));
}
BENCHMARK(BM_compose_tables_224);

void BM_overlap_counts_224(benchmark::State& state) {
    const CoordTable table = warped_table();
    const PatchGrid grid_q(224, 224, 16), grid_r(224, 224, 16);
    for (auto _ : state) benchmark::DoNotOptimize(overlap_counts(table, grid_q, grid_r));
}
BENCHMARK(BM_overlap_counts_224);

void BM_copynce_symmetric_196(benchmark::State& state) {
    const Eigen::MatrixXd q = raw_tokens(2, 196, 32), r = raw_tokens(3, 196, 32);
    Rng rng(4);
    TargetDistribution t_qr, t_rq;
    t_qr.matrix = Eigen::MatrixXd::Zero(196, 196);
    t_rq.matrix = Eigen::MatrixXd::Zero(196, 196);
    t_qr.row_mask.assign(196, 1);
    t_rq.row_mask.assign(196, 1);
    for (int i = 0; i < 196; ++i) {
        // Sparse two-entry targets, the shape overlap priors take in practice.
        const int a = static_cast<int>(rng.below(196)), b = static_cast<int>(rng.below(196));
        t_qr.matrix(i, a) += 0.5;
        t_qr.matrix(i, b) += 0.5;
        t_rq.matrix(i, b) += 0.5;
        t_rq.matrix(i, a) += 0.5;
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(copynce_symmetric(q, r, t_qr, t_rq, 1.0 / 16));
    }
}
BENCHMARK(BM_copynce_symmetric_196);

void BM_koleo_256(benchmark::State& state) {
    const Eigen::MatrixXd tokens = raw_tokens(5, 256, 32);
    for (auto _ : state) benchmark::DoNotOptimize(koleo(tokens));
}
BENCHMARK(BM_koleo_256);

void BM_toy_encode_224(benchmark::State& state) {
    const Image img = noise_image(6, 224, 224);
    for (auto _ : state) benchmark::DoNotOptimize(encode_patches(img, {}));
}
BENCHMARK(BM_toy_encode_224);

void BM_knn_search_100x2000(benchmark::State& state) {
    Rng rng(7);
    std::vector<Embedding> queries, refs;
    for (int i = 0; i < 100; ++i) {
        Eigen::VectorXd v = raw_tokens(100 + static_cast<std::uint64_t>(i), 1, 13).row(0);
        queries.push_back({"q" + std::to_string(i), v.normalized()});
    }
    for (int i = 0; i < 2000; ++i) {
        Eigen::VectorXd v = raw_tokens(5000 + static_cast<std::uint64_t>(i), 1, 13).row(0);
        refs.push_back({"r" + std::to_string(i), v.normalized()});
    }
    for (auto _ : state) benchmark::DoNotOptimize(knn_search(queries, refs, 20));
}
BENCHMARK(BM_knn_search_100x2000);

void BM_micro_ap_50k(benchmark::State& state) {
    Rng rng(8);
    std::vector<ScoredPair> pairs;
    GroundTruth gt;
    for (int q = 0; q < 500; ++q) {
        const std::string qid = "q" + std::to_string(q);
        gt.add(qid, qid + "_r0");
        for (int r = 0; r < 100; ++r) {
            const std::string rid = qid + "_r" + std::to_string(r);
            pairs.push_back({qid, rid, rng.real(), r == 0});
        }
    }
    for (auto _ : state) benchmark::DoNotOptimize(micro_ap(pairs, gt));
}
BENCHMARK(BM_micro_ap_50k);

} // namespace

BENCHMARK_MAIN();
