#pragma once

#include <Eigen/Core>

#include "copytrace/image.hpp"

namespace copytrace {

/// Deterministic hand-crafted patch features standing in for a learned
/// encoder at desk scale. Per patch: 3 mean-RGB values, an 8-bin
/// magnitude-weighted gradient-orientation histogram, and 2 normalized
/// image-centered patch-center coordinates; 13 dims, unit-normalized.
struct ToyEncoderConfig {
    int patch_size = 16;
    /// Weight of the positional pair relative to the appearance block.
    double position_weight = 0.1;
};

inline constexpr int kToyFeatureDim = 13;

/// One token per grid patch (row-major patches). The image-centered
/// coordinates give mirrored patches equal-norm tokens, so flips leave
/// the appearance sub-features (dims 0..10) exactly equal. Throws
/// ParamError when the dims are not divisible by patch_size.
Eigen::MatrixXd encode_patches(const Image& image, const ToyEncoderConfig& config = {});

/// Unit-normalized mean of the patch tokens.
Eigen::VectorXd encode_global(const Image& image, const ToyEncoderConfig& config = {});

} // namespace copytrace
