#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "copytrace/coord_table.hpp"
#include "copytrace/image.hpp"
#include "copytrace/rng.hpp"

namespace copytrace {

enum class EditKind {
    crop,
    resize,
    pad,
    hflip,
    vflip,
    rotate,
    affine,
    perspective,
    matting_mask,
    overlay_onto_canvas,
    erase_rect,
    overlay_sticker,
    color_jitter,
    grayscale,
    blur,
};

const char* edit_kind_name(EditKind kind);
EditKind edit_kind_from_name(const std::string& name);

enum class Resample { nearest, bilinear };

/// One fully resolved edit (all randomized parameters already drawn).
/// Only the fields relevant to `kind` are meaningful; see the README for
/// the per-kind parameter list mirrored in the pipeline JSON.
struct EditOp {
    EditKind kind = EditKind::hflip;

    // crop / pad / erase_rect / matting rect / sticker placement
    int top = 0, left = 0, height = 0, width = 0;
    int bottom = 0, right = 0; // pad only

    // resize / overlay_onto_canvas output frame; affine/perspective optional
    int out_height = 0, out_width = 0;

    double degrees = 0.0; // rotate, counterclockwise about the image center

    // affine: forward map new_row = a*r + b*c + tr, new_col = d*r + e*c + tc,
    // stored [a, b, tr, d, e, tc]
    std::array<double, 6> coeffs{1, 0, 0, 0, 1, 0};

    // perspective: row-major 3x3 homography mapping (row, col, 1) in the
    // previous frame to homogeneous new-frame coordinates
    std::array<double, 9> homography{1, 0, 0, 0, 1, 0, 0, 0, 1};

    // matting_mask: shape "rect" uses top/left/height/width above,
    // shape "ellipse" uses the center/radius fields
    std::string mask_shape = "ellipse";
    double center_row = 0, center_col = 0, radius_row = 0, radius_col = 0;

    // overlay_onto_canvas: p_new = scale * p_prev + (top, left); the offset
    // may be negative (paste partially outside the canvas)
    double scale = 1.0;
    double offset_row = 0.0, offset_col = 0.0;

    // overlay_sticker: sticker loaded from `sticker_path` when nonempty,
    // otherwise a procedural "rect" or "disk" of sticker_color
    std::string sticker_path;
    std::string sticker_shape = "rect";
    std::array<int, 4> sticker_color{128, 128, 128, 255};
    int alpha_threshold = 128;

    // color_jitter multipliers (1.0 = no change)
    double brightness = 1.0, contrast = 1.0, saturation = 1.0;

    int radius = 1; // blur

    std::array<int, 3> fill{0, 0, 0}; // out-of-frame / matte / erase color
};

/// JSON-level op whose numeric parameters may be fixed values or [lo, hi]
/// ranges, resolved at apply time with a deterministic draw.
struct EditSpec {
    std::string kind;
    std::string params_json; // compact JSON object ("{}" when no params)
};

struct EditPipeline {
    std::uint64_t seed = 0;
    std::vector<EditSpec> ops;
    Resample resample = Resample::nearest;
    bool keep_occluded = false;
};

struct PipelineResult {
    Image image;
    CoordTable table; // maps result-frame pixels to source-frame pixels
    std::vector<EditOp> resolved_ops;
};

/// Both edited views of one source plus the four coordinate tables.
struct EditedPair {
    Image image_a;
    Image image_b;
    CoordTable table_ao; // I_a -> I_o
    CoordTable table_bo; // I_b -> I_o
    CoordTable table_ba; // I_b -> I_a
    CoordTable table_ab; // I_a -> I_b
};

/// Applies one resolved edit. Geometric ops build the new frame by
/// inverse warping (each new pixel is inverse-mapped to the previous
/// frame, rounded, then chained through `table`); photometric ops return
/// the table unchanged; occluding ops mark covered pixels absent unless
/// keep_occluded. Throws ParamError on invalid parameters.
std::pair<Image, CoordTable> apply_edit(const Image& image, const CoordTable& table, const EditOp& op,
                                        Resample resample = Resample::nearest, bool keep_occluded = false);

/// Draws any ranged parameters of `spec` using `rng` (one op's private
/// stream) and returns the resolved op. Throws FormatError for unknown
/// kinds or malformed parameters.
EditOp resolve_op(const EditSpec& spec, Rng& rng);

/// Sequential fold of apply_edit over the pipeline starting from the
/// identity table; randomized parameters are drawn from streams keyed by
/// (seed, op index). Throws ParamError on an empty pipeline; errors in
/// step k are rethrown with the step index and kind attached.
PipelineResult apply_pipeline(const Image& source, const EditPipeline& pipeline, std::uint64_t seed);

/// apply_pipeline with the pipeline's own seed.
PipelineResult apply_pipeline(const Image& source, const EditPipeline& pipeline);

/// Runs both pipelines on one source and bridges the two views:
/// table_ba = compose(reverse(table_ao), table_bo), table_ab = reverse(table_ba).
EditedPair make_pair(const Image& source, const EditPipeline& pipeline_a, const EditPipeline& pipeline_b,
                     std::uint64_t seed_a, std::uint64_t seed_b);
EditedPair make_pair(const Image& source, const EditPipeline& pipeline_a, const EditPipeline& pipeline_b);

/// Parses `{"seed": u64, "ops": [{"kind": ..., ...params}], "resample":
/// "nearest"|"bilinear", "keep_occluded": bool}` (last two optional).
/// Numeric op parameters may be a number or a [lo, hi] range. Throws
/// FormatError on malformed input.
EditPipeline parse_pipeline_text(const std::string& json_text);

/// Reads and parses a pipeline file. Missing file throws ParamError with
/// the path in the message; bad content throws FormatError.
EditPipeline load_pipeline(const std::string& path);

} // namespace copytrace
