#include "copytrace/heatmap.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "copytrace/coord_table.hpp"
#include "copytrace/errors.hpp"

namespace copytrace {

namespace {

// Dark-blue-to-yellow anchor ramp, linearly interpolated.
constexpr std::array<std::array<int, 3>, 9> kRamp = {{
    {68, 1, 84},
    {72, 40, 120},
    {62, 74, 137},
    {49, 104, 142},
    {38, 130, 142},
    {31, 158, 137},
    {53, 183, 121},
    {109, 205, 89},
    {253, 231, 37},
}};

Pixel colormap(double t) {
    t = std::clamp(t, 0.0, 1.0);
    const double pos = t * (kRamp.size() - 1);
    const int lo = std::min(static_cast<int>(pos), static_cast<int>(kRamp.size()) - 2);
    const double f = pos - lo;
    auto lerp = [&](int ch) {
        return static_cast<std::uint8_t>(round_half_up(kRamp[lo][ch] * (1.0 - f) + kRamp[lo + 1][ch] * f));
    };
    return Pixel{lerp(0), lerp(1), lerp(2), 255};
}

} // namespace

Image render_heatmap(const Eigen::VectorXd& values, int grid_rows, int grid_cols, int cell_size) {
    if (grid_rows <= 0 || grid_cols <= 0 || cell_size <= 0) {
        throw ParamError("render_heatmap: dims must be positive");
    }
    if (values.size() != static_cast<Eigen::Index>(grid_rows) * grid_cols) {
        throw ParamError("render_heatmap: value count differs from grid size");
    }
    if (!values.allFinite()) throw NumericError("render_heatmap: non-finite values");

    const double lo = values.minCoeff();
    const double hi = values.maxCoeff();
    const double span = hi - lo;

    Image out(grid_rows * cell_size, grid_cols * cell_size);
    for (int gr = 0; gr < grid_rows; ++gr) {
        for (int gc = 0; gc < grid_cols; ++gc) {
            const double v = values(static_cast<Eigen::Index>(gr) * grid_cols + gc);
            const Pixel color = colormap(span > 0 ? (v - lo) / span : 0.5);
            for (int r = gr * cell_size; r < (gr + 1) * cell_size; ++r) {
                for (int c = gc * cell_size; c < (gc + 1) * cell_size; ++c) {
                    out.at(r, c) = color;
                }
            }
        }
    }
    return out;
}

} // namespace copytrace
