#include "copytrace/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "copytrace/coord_table.hpp"
#include "copytrace/errors.hpp"
#include "copytrace/tokens.hpp"

namespace copytrace {

namespace {

bool pair_order(const ScoredPair& a, const ScoredPair& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.query_id != b.query_id) return a.query_id < b.query_id;
    return a.ref_id < b.ref_id;
}

Eigen::MatrixXd stack_normalized(const std::vector<Embedding>& embeddings, const char* what) {
    if (embeddings.empty()) throw ParamError(std::string(what) + ": empty embedding set");
    const Eigen::Index d = embeddings[0].vector.size();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(embeddings.size()), d);
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        if (embeddings[i].vector.size() != d) throw ParamError(std::string(what) + ": inconsistent dims");
        m.row(static_cast<Eigen::Index>(i)) = embeddings[i].vector.transpose();
    }
    return normalize_rows(m);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

} // namespace

void GroundTruth::add(const std::string& query_id, const std::string& ref_id) {
    if (pairs.insert({query_id, ref_id}).second) per_query[query_id] += 1;
}

bool GroundTruth::contains(const std::string& query_id, const std::string& ref_id) const {
    return pairs.count({query_id, ref_id}) > 0;
}

int GroundTruth::total() const { return static_cast<int>(pairs.size()); }

int GroundTruth::positives_of(const std::string& query_id) const {
    auto it = per_query.find(query_id);
    return it == per_query.end() ? 0 : it->second;
}

double average_precision(std::vector<ScoredPair> pairs, int total_positives) {
    if (total_positives < 1) throw ParamError("average_precision: total positives must be >= 1");
    std::sort(pairs.begin(), pairs.end(), pair_order);
    double ap = 0.0;
    int hits = 0;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        if (!pairs[k].relevant) continue;
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
    return ap / total_positives;
}

double micro_ap(const std::vector<ScoredPair>& pairs, const GroundTruth& gt) {
    if (gt.total() == 0) throw ParamError("micro_ap: empty ground truth");
    return average_precision(pairs, gt.total());
}

double mean_ap(const std::vector<ScoredPair>& pairs, const GroundTruth& gt) {
    if (gt.total() == 0) throw ParamError("mean_ap: empty ground truth");
    std::map<std::string, std::vector<ScoredPair>> by_query;
    for (const auto& p : pairs) by_query[p.query_id].push_back(p);
    double sum = 0.0;
    int n = 0;
    for (const auto& [query, positives] : gt.per_query) {
        if (positives == 0) continue;
        ++n;
        auto it = by_query.find(query);
        if (it == by_query.end()) continue; // unscored query: AP contribution 0
        sum += average_precision(it->second, positives);
    }
    return n == 0 ? 0.0 : sum / n;
}

double rp90(const std::vector<ScoredPair>& pairs, const GroundTruth& gt) {
    if (gt.total() == 0) throw ParamError("rp90: empty ground truth");
    std::vector<ScoredPair> sorted = pairs;
    std::sort(sorted.begin(), sorted.end(), pair_order);
    double best = 0.0;
    int hits = 0;
    for (std::size_t k = 0; k < sorted.size(); ++k) {
        if (sorted[k].relevant) ++hits;
        const double precision = static_cast<double>(hits) / static_cast<double>(k + 1);
        if (precision >= 0.90) {
            best = std::max(best, static_cast<double>(hits) / gt.total());
        }
    }
    return best;
}

MetricsReport evaluate(const std::vector<ScoredPair>& pairs, const GroundTruth& gt) {
    MetricsReport r;
    r.map = mean_ap(pairs, gt);
    r.uap = micro_ap(pairs, gt);
    r.rp90 = rp90(pairs, gt);
    r.n_queries = static_cast<int>(gt.per_query.size());
    r.n_positives = gt.total();
    return r;
}

std::map<std::string, std::vector<std::pair<std::string, double>>>
knn_search(const std::vector<Embedding>& queries, const std::vector<Embedding>& refs, int k) {
    if (k < 1) throw ParamError("knn_search: k must be >= 1");
    if (k > static_cast<int>(refs.size())) throw ParamError("knn_search: k exceeds the reference count");
    const Eigen::MatrixXd q = stack_normalized(queries, "knn_search queries");
    const Eigen::MatrixXd r = stack_normalized(refs, "knn_search refs");
    if (q.cols() != r.cols()) throw ParamError("knn_search: dimension mismatch");

    std::map<std::string, std::vector<std::pair<std::string, double>>> out;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const Eigen::VectorXd sims = r * q.row(static_cast<Eigen::Index>(i)).transpose();
        std::vector<int> order(refs.size());
        for (std::size_t j = 0; j < refs.size(); ++j) order[j] = static_cast<int>(j);
        std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
            if (sims(a) != sims(b)) return sims(a) > sims(b);
            return refs[static_cast<std::size_t>(a)].id < refs[static_cast<std::size_t>(b)].id;
        });
        auto& list = out[queries[i].id];
        for (int t = 0; t < k; ++t) {
            const int j = order[static_cast<std::size_t>(t)];
            list.emplace_back(refs[static_cast<std::size_t>(j)].id, sims(j));
        }
    }
    return out;
}

std::vector<ScoredPair> score_normalize(const std::vector<ScoredPair>& raw,
                                        const std::map<std::string, std::vector<double>>& background,
                                        double alpha, int k_start, int k_end) {
    if (k_start < 0 || k_end < k_start) throw ParamError("score_normalize: need 0 <= k_start <= k_end");
    std::map<std::string, double> bias;
    std::vector<ScoredPair> out = raw;
    for (auto& p : out) {
        auto cached = bias.find(p.query_id);
        if (cached == bias.end()) {
            auto it = background.find(p.query_id);
            if (it == background.end() || static_cast<int>(it->second.size()) <= k_end) {
                throw ParamError("score_normalize: query " + p.query_id + " lacks " + std::to_string(k_end + 1) +
                                 " background neighbors");
            }
            double mean = 0.0;
            for (int k = k_start; k <= k_end; ++k) mean += it->second[static_cast<std::size_t>(k)];
            mean /= (k_end - k_start + 1);
            cached = bias.emplace(p.query_id, mean).first;
        }
        p.score -= alpha * cached->second;
    }
    return out;
}

std::map<std::string, std::vector<double>> background_cosines(const std::vector<Embedding>& queries,
                                                              const std::vector<Embedding>& auxiliary, int count) {
    auto nn = knn_search(queries, auxiliary, count);
    std::map<std::string, std::vector<double>> out;
    for (auto& [query, list] : nn) {
        auto& scores = out[query];
        scores.reserve(list.size());
        for (const auto& [id, cosine] : list) scores.push_back(cosine);
    }
    return out;
}

Embedding feature_stretch(const Embedding& query, const std::vector<double>& background_scores, double beta,
                          int k) {
    if (k < 1) throw ParamError("feature_stretch: k must be >= 1");
    if (static_cast<int>(background_scores.size()) < k) {
        throw ParamError("feature_stretch: fewer than k background scores");
    }
    double mean = 0.0;
    for (int i = 0; i < k; ++i) mean += background_scores[static_cast<std::size_t>(i)];
    mean /= k;
    Embedding out;
    out.id = query.id;
    out.vector = beta * mean * query.vector;
    return out;
}

double stretched_euclidean_score(double stretched_norm, double cosine) {
    const double d2 = stretched_norm * stretched_norm + 1.0 - 2.0 * stretched_norm * cosine;
    return -std::sqrt(std::max(d2, 0.0));
}

std::vector<std::array<int, 4>> lce_crop_grid(int image_height, int image_width, int grid) {
    if (grid < 1) throw ParamError("lce_crop_grid: grid must be >= 1");
    if (image_height < 2 || image_width < 2) throw ParamError("lce_crop_grid: image too small");
    const int ch = image_height / 2;
    const int cw = image_width / 2;
    std::vector<std::array<int, 4>> crops;
    for (int gr = 0; gr < grid; ++gr) {
        for (int gc = 0; gc < grid; ++gc) {
            const int top = grid == 1 ? 0 : round_half_up(static_cast<double>(gr) * (image_height - ch) / (grid - 1));
            const int left = grid == 1 ? 0 : round_half_up(static_cast<double>(gc) * (image_width - cw) / (grid - 1));
            crops.push_back({top, left, ch, cw});
        }
    }
    crops.push_back({0, 0, image_height, image_width}); // the global view, last
    return crops;
}

double lce_score(const Eigen::MatrixXd& crop_scores) {
    if (crop_scores.size() == 0) throw ParamError("lce_score: empty score matrix");
    return crop_scores.maxCoeff();
}

TwoStageResult two_stage_candidates(const std::vector<ScoredPair>& descriptor_scores,
                                    const std::function<double(const std::string&, const std::string&)>& reranker,
                                    int k1, int k2, const GroundTruth& gt) {
    if (k2 < 1 || k1 < k2) throw ParamError("two_stage_candidates: need 1 <= k2 <= k1");
    if (gt.total() == 0) throw ParamError("two_stage_candidates: empty ground truth");

    // Multi-source union: keep the best descriptor score per (query, ref).
    std::map<std::string, std::map<std::string, double>> merged;
    for (const auto& p : descriptor_scores) {
        auto& slot = merged[p.query_id];
        auto it = slot.find(p.ref_id);
        if (it == slot.end() || p.score > it->second) slot[p.ref_id] = p.score;
    }

    TwoStageResult result;
    int survived1 = 0;
    int survived2 = 0;
    for (auto& [query, refs] : merged) {
        std::vector<ScoredPair> pool;
        pool.reserve(refs.size());
        for (const auto& [ref, score] : refs) {
            pool.push_back({query, ref, score, gt.contains(query, ref)});
        }
        std::sort(pool.begin(), pool.end(), pair_order);
        if (static_cast<int>(pool.size()) > k1) pool.resize(static_cast<std::size_t>(k1));
        result.stage1[query] = pool;

        std::vector<ScoredPair> reranked = pool;
        for (auto& p : reranked) p.score = reranker(p.query_id, p.ref_id);
        std::sort(reranked.begin(), reranked.end(), pair_order);
        if (static_cast<int>(reranked.size()) > k2) reranked.resize(static_cast<std::size_t>(k2));
        result.stage2[query] = reranked;

        for (const auto& p : result.stage1[query]) survived1 += p.relevant ? 1 : 0;
        for (const auto& p : result.stage2[query]) survived2 += p.relevant ? 1 : 0;
    }
    result.recall_stage1 = static_cast<double>(survived1) / gt.total();
    result.recall_stage2 = static_cast<double>(survived2) / gt.total();
    return result;
}

GroundTruth load_ground_truth_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParamError("cannot open: " + path);
    GroundTruth gt;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line == "query_id,ref_id") continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": expected query_id,ref_id");
        }
        gt.add(fields[0], fields[1]);
    }
    return gt;
}

std::vector<ScoredPair> load_scores_csv(const std::string& path, const GroundTruth* gt) {
    std::ifstream f(path);
    if (!f) throw ParamError("cannot open: " + path);
    std::vector<ScoredPair> out;
    std::set<std::pair<std::string, std::string>> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line == "query_id,ref_id,score") continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": expected query_id,ref_id,score");
        }
        ScoredPair p;
        p.query_id = fields[0];
        p.ref_id = fields[1];
        try {
            std::size_t used = 0;
            p.score = std::stod(fields[2], &used);
            if (used != fields[2].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": bad score '" + fields[2] + "'");
        }
        if (!std::isfinite(p.score)) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": non-finite score");
        }
        if (!seen.insert({p.query_id, p.ref_id}).second) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": duplicate (query_id, ref_id)");
        }
        if (gt) p.relevant = gt->contains(p.query_id, p.ref_id);
        out.push_back(std::move(p));
    }
    return out;
}

void save_scores_csv(const std::vector<ScoredPair>& pairs, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw ParamError("cannot open for writing: " + path);
    f << "query_id,ref_id,score\n";
    f.precision(17);
    for (const auto& p : pairs) f << p.query_id << ',' << p.ref_id << ',' << p.score << '\n';
    if (!f) throw ParamError("write failed: " + path);
}

std::vector<Embedding> load_embeddings(const std::string& tok_path, const std::string& ids_path) {
    const Eigen::MatrixXd m = load_tokens(tok_path);
    std::ifstream f(ids_path);
    if (!f) throw ParamError("cannot open: " + ids_path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    if (static_cast<Eigen::Index>(ids.size()) != m.rows()) {
        throw FormatError(ids_path + ": " + std::to_string(ids.size()) + " ids for " + std::to_string(m.rows()) +
                          " token rows");
    }
    std::vector<Embedding> out(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out[i].id = ids[i];
        out[i].vector = m.row(static_cast<Eigen::Index>(i)).transpose();
    }
    return out;
}

void save_embeddings(const std::vector<Embedding>& embeddings, const std::string& tok_path,
                     const std::string& ids_path) {
    if (embeddings.empty()) throw ParamError("save_embeddings: empty set");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(embeddings.size()), embeddings[0].vector.size());
    std::ofstream f(ids_path);
    if (!f) throw ParamError("cannot open for writing: " + ids_path);
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        if (embeddings[i].vector.size() != m.cols()) throw ParamError("save_embeddings: inconsistent dims");
        m.row(static_cast<Eigen::Index>(i)) = embeddings[i].vector.transpose();
        f << embeddings[i].id << '\n';
    }
    if (!f) throw ParamError("write failed: " + ids_path);
    save_tokens(m, tok_path);
}

} // namespace copytrace
