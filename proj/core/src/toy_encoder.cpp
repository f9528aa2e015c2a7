#include "copytrace/toy_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "copytrace/errors.hpp"
#include "copytrace/supervision.hpp"
#include "copytrace/tokens.hpp"

namespace copytrace {

namespace {

double pixel_luma(const Image& image, int r, int c) {
    const Pixel& p = image.at(r, c);
    return 0.299 * p.r + 0.587 * p.g + 0.114 * p.b;
}

} // namespace

Eigen::MatrixXd encode_patches(const Image& image, const ToyEncoderConfig& config) {
    const PatchGrid grid(image.height(), image.width(), config.patch_size);
    const int ps = config.patch_size;
    const double area = static_cast<double>(ps) * ps;
    Eigen::MatrixXd tokens(grid.patch_count(), kToyFeatureDim);

    for (int pi = 0; pi < grid.patch_count(); ++pi) {
        const int r0 = (pi / grid.cols) * ps;
        const int c0 = (pi % grid.cols) * ps;
        Eigen::VectorXd f = Eigen::VectorXd::Zero(kToyFeatureDim);

        double sum_r = 0, sum_g = 0, sum_b = 0;
        for (int r = r0; r < r0 + ps; ++r) {
            for (int c = c0; c < c0 + ps; ++c) {
                const Pixel& p = image.at(r, c);
                sum_r += p.r;
                sum_g += p.g;
                sum_b += p.b;
            }
        }
        // +1 keeps the appearance block nonzero even for black patches.
        f[0] = (sum_r / area + 1.0) / 256.0;
        f[1] = (sum_g / area + 1.0) / 256.0;
        f[2] = (sum_b / area + 1.0) / 256.0;

        // Patch-local clamped central differences; the orientation is
        // folded to the first quadrant so mirrored patches bin identically.
        for (int r = r0; r < r0 + ps; ++r) {
            for (int c = c0; c < c0 + ps; ++c) {
                const double gy = (pixel_luma(image, std::min(r + 1, r0 + ps - 1), c) -
                                   pixel_luma(image, std::max(r - 1, r0), c)) / 2.0;
                const double gx = (pixel_luma(image, r, std::min(c + 1, c0 + ps - 1)) -
                                   pixel_luma(image, r, std::max(c - 1, c0))) / 2.0;
                const double mag = std::sqrt(gx * gx + gy * gy);
                if (mag == 0.0) continue;
                const double theta = std::atan2(std::abs(gy), std::abs(gx)); // [0, pi/2]
                const int bin = std::min(7, static_cast<int>(theta / (std::numbers::pi / 2.0) * 8.0));
                f[3 + bin] += mag / (255.0 * area);
            }
        }

        // Image-centered patch-center coordinates: mirrored patches have
        // equal-magnitude entries, so full-row norms match under flips.
        const Point cen = grid.centroid(pi);
        f[11] = config.position_weight * (cen.row - (image.height() - 1) / 2.0) / image.height();
        f[12] = config.position_weight * (cen.col - (image.width() - 1) / 2.0) / image.width();

        tokens.row(pi) = f.transpose();
    }
    return normalize_rows(tokens);
}

Eigen::VectorXd encode_global(const Image& image, const ToyEncoderConfig& config) {
    const Eigen::MatrixXd tokens = encode_patches(image, config);
    Eigen::VectorXd mean = tokens.colwise().mean().transpose();
    const double n = mean.norm();
    if (!(n > 0)) throw NumericError("encode_global: zero-norm mean token");
    return mean / n;
}

} // namespace copytrace
