#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "copytrace/coord_table.hpp"

namespace copytrace {

/// Regular patch tiling of an image; dims must be divisible by patch_size.
struct PatchGrid {
    int image_height = 0;
    int image_width = 0;
    int patch_size = 16;
    int rows = 0;
    int cols = 0;

    PatchGrid(int image_height, int image_width, int patch_size = 16);

    int patch_count() const { return rows * cols; }
    int patch_index(int pixel_row, int pixel_col) const {
        return (pixel_row / patch_size) * cols + (pixel_col / patch_size);
    }
    /// Patch center in pixel coordinates (real-valued).
    Point centroid(int patch_index) const;
};

/// Row-stochastic query-patch x reference-patch prior. Unmasked rows sum
/// to 1; masked rows (query patches with no tracked pixel) are all-zero.
struct TargetDistribution {
    Eigen::MatrixXd matrix;             // N_q x N_r
    std::vector<std::uint8_t> row_mask; // 1 = patch participates in the loss
    double gamma = 1.0;                 // sharpening exponent used (metadata)

    int n_query() const { return static_cast<int>(matrix.rows()); }
    int n_ref() const { return static_cast<int>(matrix.cols()); }
    int unmasked_count() const;
};

/// Per-query-patch heuristic matches: (reference patch index, weight)
/// lists with uniform weights; an empty list means the patch is masked.
struct MatchAssignment {
    std::vector<std::vector<std::pair<int, double>>> matches;
};

/// counts(i, j) = number of pixels of query patch i whose table value
/// lands in reference patch j; untracked pixels contribute nowhere.
/// Throws ParamError when the table is not keyed on grid_q's image dims
/// or its source dims differ from grid_r's.
Eigen::MatrixXi overlap_counts(const CoordTable& table_qr, const PatchGrid& grid_q, const PatchGrid& grid_r);

/// qhat(j|i) = counts(i, j) / patch_size^2. Rows need not sum to 1:
/// untracked pixels shrink the row mass.
Eigen::MatrixXd prior_qhat(const Eigen::MatrixXi& counts, const PatchGrid& grid_q);

/// Mask with 1 exactly where the patch has at least one tracked pixel
/// (row sum of counts > 0).
std::vector<std::uint8_t> row_mask_from_counts(const Eigen::MatrixXi& counts);

/// Escort renormalization q(j|i) = qhat(j|i)^gamma / sum over the row's
/// positive support. gamma = 0 gives the uniform-over-support average
/// mode directly (no 0^0); gamma = +infinity gives a one-hot argmax with
/// ties broken by lowest reference index. Masked rows are zeroed.
/// Throws ParamError for gamma < 0 or an unmasked row with empty support.
TargetDistribution sharpen(const Eigen::MatrixXd& qhat, double gamma, const std::vector<std::uint8_t>& row_mask);

/// Location heuristic: a patch is masked when it owns no tracked pixel;
/// otherwise it stands on the tracked pixel nearest its centroid (a
/// global search over the whole frame, ties row-major) and selects the k
/// reference patches with nearest grid centroids, uniform weights.
/// Because the heuristic reads location only, the stand-in pixel can lie
/// outside the patch and the selected reference patches may have zero
/// true overlap — the heuristic's documented failure mode.
MatchAssignment locnn_targets(const CoordTable& table_qr, const PatchGrid& grid_q, const PatchGrid& grid_r, int k);

/// Feature heuristic: per query token, top-k reference tokens by cosine
/// similarity (rows must be unit-norm), uniform weights, ties by lowest
/// index. Throws ParamError when k exceeds the reference count.
MatchAssignment featnn_targets(const Eigen::MatrixXd& tokens_q, const Eigen::MatrixXd& tokens_r, int k);

/// Scatter of a MatchAssignment into a TargetDistribution with the same
/// masking semantics (empty rows masked).
TargetDistribution assignment_to_distribution(const MatchAssignment& assignment, int n_ref);

/// ".tgt" byte format: magic "TGT1" | u32le N_q, N_r | N_q row-mask bytes
/// | N_q * N_r float32 little-endian row-major. gamma is in-memory
/// metadata only; loaded distributions report gamma = NaN.
std::vector<std::uint8_t> serialize_targets(const TargetDistribution& targets);
TargetDistribution deserialize_targets(const std::vector<std::uint8_t>& bytes);
void save_targets(const TargetDistribution& targets, const std::string& path);
TargetDistribution load_targets(const std::string& path);

} // namespace copytrace
