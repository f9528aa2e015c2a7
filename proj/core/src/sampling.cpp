#include "copytrace/sampling.hpp"

#include <fstream>
#include <sstream>

#include "copytrace/coord_table.hpp"
#include "copytrace/errors.hpp"
#include "copytrace/rng.hpp"

namespace copytrace {

KnnIndex load_knn_index_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParamError("cannot open: " + path);
    KnnIndex index;
    std::string line;
    int line_no = 0;
    std::size_t k = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string field;
        std::stringstream ss(line);
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() < 2) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": expected image_id,neighbor_1,...");
        }
        const std::string id = fields[0];
        std::vector<std::string> nn(fields.begin() + 1, fields.end());
        for (const auto& n : nn) {
            if (n == id) throw FormatError(path + ":" + std::to_string(line_no) + ": self-neighbor");
            if (n.empty()) throw FormatError(path + ":" + std::to_string(line_no) + ": empty neighbor id");
        }
        if (k == 0) {
            k = nn.size();
        } else if (nn.size() != k) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": inconsistent neighbor count");
        }
        if (index.neighbors.count(id)) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": duplicate image id");
        }
        index.ids.push_back(id);
        index.neighbors[id] = std::move(nn);
    }
    return index;
}

void save_knn_index_csv(const KnnIndex& index, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ParamError("cannot open for writing: " + path);
    for (const auto& id : index.ids) {
        f << id;
        for (const auto& n : index.neighbors.at(id)) f << ',' << n;
        f << '\n';
    }
    if (!f) throw ParamError("write failed: " + path);
}

KnnIndex build_knn_index(const std::vector<Embedding>& images, int k) {
    if (k < 1) throw ParamError("build_knn_index: k must be >= 1");
    if (static_cast<int>(images.size()) < k + 1) {
        throw ParamError("build_knn_index: need at least k+1 images to exclude self");
    }
    // k+1 covers self; widen once if exact-duplicate embeddings crowd
    // self out of its own top list.
    for (int search_k : {k + 1, static_cast<int>(images.size())}) {
        auto nn = knn_search(images, images, search_k);
        KnnIndex index;
        bool complete = true;
        for (const auto& img : images) {
            index.ids.push_back(img.id);
            auto& list = index.neighbors[img.id];
            for (const auto& [id, cosine] : nn.at(img.id)) {
                if (id == img.id) continue;
                list.push_back(id);
                if (static_cast<int>(list.size()) == k) break;
            }
            if (static_cast<int>(list.size()) != k) {
                complete = false;
                break;
            }
        }
        if (complete) return index;
    }
    throw ParamError("build_knn_index: could not assemble k distinct neighbors");
}

Batch ghnm_batch(const KnnIndex& index, int n, std::uint64_t seed) {
    if (n <= 0 || n % 2 != 0) throw ParamError("ghnm_batch: batch size must be positive and even");
    if (index.ids.empty()) throw ParamError("ghnm_batch: empty index");
    for (const auto& id : index.ids) {
        auto it = index.neighbors.find(id);
        if (it == index.neighbors.end() || it->second.empty()) {
            throw ParamError("ghnm_batch: image " + id + " has no neighbors");
        }
    }
    Rng rng(seed);
    Batch batch;
    batch.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n / 2; ++i) {
        const std::string& x = index.ids[static_cast<std::size_t>(rng.below(index.ids.size()))];
        batch.push_back({x, x, PairLabel::positive});
        const auto& nn = index.neighbors.at(x);
        const std::string& hard = nn[static_cast<std::size_t>(rng.below(nn.size()))];
        batch.push_back({hard, hard, PairLabel::positive});
    }
    return batch;
}

Batch matcher_pairs(const std::vector<std::string>& image_ids, double positive_rate, int n, std::uint64_t seed) {
    if (n < 1) throw ParamError("matcher_pairs: batch size must be >= 1");
    if (positive_rate < 0.0 || positive_rate > 1.0) throw ParamError("matcher_pairs: rate must be in [0,1]");
    if (image_ids.empty()) throw ParamError("matcher_pairs: no images");
    const int positives = round_half_up(positive_rate * n);
    if (positives < n && image_ids.size() < 2) {
        throw ParamError("matcher_pairs: negatives need at least two images");
    }

    // Stratified labels, then a Fisher-Yates shuffle of positions.
    std::vector<PairLabel> labels(static_cast<std::size_t>(n), PairLabel::negative);
    for (int i = 0; i < positives; ++i) labels[static_cast<std::size_t>(i)] = PairLabel::positive;
    Rng rng(seed);
    for (std::size_t i = labels.size(); i > 1; --i) {
        std::swap(labels[i - 1], labels[static_cast<std::size_t>(rng.below(i))]);
    }

    Batch batch;
    batch.reserve(static_cast<std::size_t>(n));
    for (PairLabel label : labels) {
        const std::string& x = image_ids[static_cast<std::size_t>(rng.below(image_ids.size()))];
        if (label == PairLabel::positive) {
            batch.push_back({x, x, PairLabel::positive});
        } else {
            std::string y = x;
            while (y == x) y = image_ids[static_cast<std::size_t>(rng.below(image_ids.size()))];
            batch.push_back({x, y, PairLabel::negative});
        }
    }
    return batch;
}

} // namespace copytrace
