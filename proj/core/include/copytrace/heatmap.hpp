#pragma once

#include <Eigen/Core>

#include "copytrace/image.hpp"

namespace copytrace {

/// Renders per-patch scalar values (row-major over a rows x cols patch
/// grid) as a PNG-ready image, each cell painted cell_size x cell_size
/// pixels through a perceptual dark-blue-to-yellow colormap. Values are
/// min-max normalized; a constant field renders mid-scale. Throws
/// ParamError when the value count does not equal rows * cols.
Image render_heatmap(const Eigen::VectorXd& values, int grid_rows, int grid_cols, int cell_size);

} // namespace copytrace
