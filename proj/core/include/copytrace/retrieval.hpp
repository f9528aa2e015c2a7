#pragma once

#include <array>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace copytrace {

/// One scored (query, reference) candidate with its relevance label.
struct ScoredPair {
    std::string query_id;
    std::string ref_id;
    double score = 0.0;
    bool relevant = false;
};

/// The set of true (query, reference) copy pairs.
struct GroundTruth {
    std::set<std::pair<std::string, std::string>> pairs;
    std::map<std::string, int> per_query;

    void add(const std::string& query_id, const std::string& ref_id);
    bool contains(const std::string& query_id, const std::string& ref_id) const;
    int total() const;
    int positives_of(const std::string& query_id) const;
};

struct Embedding {
    std::string id;
    Eigen::VectorXd vector;
};

/// Step-integrated average precision: sort descending by score (ties by
/// ascending (query_id, ref_id)), AP = sum_k precision(k) * rel(k) /
/// total_positives. Positives missing from the scored list penalize via
/// the denominator. Throws ParamError for total_positives < 1.
double average_precision(std::vector<ScoredPair> pairs, int total_positives);

/// AP over the pooled pair list of all queries, total = |ground truth|.
double micro_ap(const std::vector<ScoredPair>& pairs, const GroundTruth& gt);

/// Mean of per-query APs over queries with at least one positive;
/// a positive-bearing query with no scored pairs contributes AP 0.
double mean_ap(const std::vector<ScoredPair>& pairs, const GroundTruth& gt);

/// Maximum recall over descending-score prefix ranks whose precision is
/// at least 0.90 (pooled list); 0 when no such operating point exists.
double rp90(const std::vector<ScoredPair>& pairs, const GroundTruth& gt);

struct MetricsReport {
    double map = 0.0;
    double uap = 0.0;
    double rp90 = 0.0;
    int n_queries = 0;
    int n_positives = 0;
};

MetricsReport evaluate(const std::vector<ScoredPair>& pairs, const GroundTruth& gt);

/// Exact brute-force cosine top-k per query, ties by ascending ref id.
std::map<std::string, std::vector<std::pair<std::string, double>>>
knn_search(const std::vector<Embedding>& queries, const std::vector<Embedding>& refs, int k);

/// Subtracts the per-query background bias: s' = s - alpha *
/// mean(background[k_start..k_end]) (inclusive, 0-based into the
/// descending-sorted background cosines). A per-query constant shift, so
/// within-query order is untouched. Throws ParamError when a query lacks
/// k_end+1 background entries.
std::vector<ScoredPair> score_normalize(const std::vector<ScoredPair>& raw,
                                        const std::map<std::string, std::vector<double>>& background,
                                        double alpha, int k_start, int k_end);

/// Descending-sorted top-`count` cosines of each query against the
/// auxiliary set, the background statistic consumed by score_normalize.
std::map<std::string, std::vector<double>> background_cosines(const std::vector<Embedding>& queries,
                                                              const std::vector<Embedding>& auxiliary, int count);

/// z' = beta * mean(top-k background inner products) * z. beta = 0 yields
/// a degenerate zero vector (callers should warn); downstream ranking is
/// Euclidean. Throws ParamError for k < 1 or insufficient background.
Embedding feature_stretch(const Embedding& query, const std::vector<double>& background_scores, double beta, int k);

/// Euclidean-ranking score of a stretched query against a unit-norm
/// reference with cosine `cos` to the unstretched direction: the negated
/// distance -sqrt(s^2 + 1 - 2 s cos), s = stretched norm. Higher = closer.
double stretched_euclidean_score(double stretched_norm, double cosine);

/// Crop rectangles (top, left, height, width) for local-crops ensembling:
/// a grid x grid lattice of half-size crops plus the full frame last.
std::vector<std::array<int, 4>> lce_crop_grid(int image_height, int image_width, int grid);

/// Maximum entry of the (query crop) x (reference crop) score matrix.
double lce_score(const Eigen::MatrixXd& crop_scores);

struct TwoStageResult {
    std::map<std::string, std::vector<ScoredPair>> stage1; // top-k1 by descriptor score
    std::map<std::string, std::vector<ScoredPair>> stage2; // top-k2 by reranker score
    double recall_stage1 = 0.0;
    double recall_stage2 = 0.0;
};

/// Stage 1 deduplicates (query, ref) candidates keeping the best
/// descriptor score (multi-source union) and retains the per-query
/// top-k1; stage 2 rescores the survivors with `reranker` and keeps
/// top-k2. Recall of `gt` is reported after each stage; stage 2 can never
/// exceed stage 1 (subset property). Throws ParamError unless
/// 1 <= k2 <= k1.
TwoStageResult two_stage_candidates(const std::vector<ScoredPair>& descriptor_scores,
                                    const std::function<double(const std::string&, const std::string&)>& reranker,
                                    int k1, int k2, const GroundTruth& gt);

/// CSV "query_id,ref_id" (optional exact header line tolerated).
GroundTruth load_ground_truth_csv(const std::string& path);

/// CSV "query_id,ref_id,score"; relevance filled from `gt` when given.
std::vector<ScoredPair> load_scores_csv(const std::string& path, const GroundTruth* gt = nullptr);
void save_scores_csv(const std::vector<ScoredPair>& pairs, const std::string& path);

/// ".tok" matrix plus a sidecar id list (one id per line, same order).
std::vector<Embedding> load_embeddings(const std::string& tok_path, const std::string& ids_path);
void save_embeddings(const std::vector<Embedding>& embeddings, const std::string& tok_path,
                     const std::string& ids_path);

} // namespace copytrace
