#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "copytrace/retrieval.hpp"

namespace copytrace {

/// Precomputed k-nearest-neighbor lists over image ids (no self-entries,
/// equal length per image).
struct KnnIndex {
    std::vector<std::string> ids; // insertion order, the sampling universe
    std::map<std::string, std::vector<std::string>> neighbors;
};

/// CSV "image_id,neighbor_1,...,neighbor_k"; every row must list the same
/// neighbor count and no row may name itself.
KnnIndex load_knn_index_csv(const std::string& path);
void save_knn_index_csv(const KnnIndex& index, const std::string& path);

/// Exact cosine k-NN over global embeddings, self excluded.
KnnIndex build_knn_index(const std::vector<Embedding>& images, int k);

enum class PairLabel { positive, negative };

/// One training pair. A positive pair is an image with its own edited
/// copy (pair_image_id == image_id); a negative pair names two distinct
/// images.
struct BatchEntry {
    std::string image_id;
    std::string pair_image_id;
    PairLabel label = PairLabel::positive;
};

using Batch = std::vector<BatchEntry>;

/// Hard-negative-companion batch: n/2 rounds of (random image x as a
/// positive pair, then a uniformly drawn k-NN of x as a positive pair),
/// so every even-position entry is followed by one anchored on its
/// neighbor. Throws ParamError for odd n or an image without neighbors.
Batch ghnm_batch(const KnnIndex& index, int n, std::uint64_t seed);

/// Stratified pair sampling: exactly round(positive_rate * n) positive
/// pairs, the rest negatives over distinct images, positions shuffled
/// deterministically. Throws ParamError for n < 1, a rate outside [0,1],
/// or fewer than two images when negatives are required.
Batch matcher_pairs(const std::vector<std::string>& image_ids, double positive_rate, int n, std::uint64_t seed);

} // namespace copytrace
