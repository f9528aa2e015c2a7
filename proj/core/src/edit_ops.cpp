#include "copytrace/edit_ops.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "json.hpp"

#include "copytrace/errors.hpp"

namespace copytrace {

namespace {

using nlohmann::json;

constexpr std::array<const char*, 15> kKindNames = {
    "crop",        "resize",       "pad",
    "hflip",       "vflip",        "rotate",
    "affine",      "perspective",  "matting_mask",
    "overlay_onto_canvas", "erase_rect", "overlay_sticker",
    "color_jitter", "grayscale",   "blur",
};

std::uint8_t to_u8(double x) {
    return static_cast<std::uint8_t>(std::clamp(round_half_up(x), 0, 255));
}

double luma(const Pixel& p) { return 0.299 * p.r + 0.587 * p.g + 0.114 * p.b; }

Pixel fill_pixel(const EditOp& op) {
    return Pixel{static_cast<std::uint8_t>(std::clamp(op.fill[0], 0, 255)),
                 static_cast<std::uint8_t>(std::clamp(op.fill[1], 0, 255)),
                 static_cast<std::uint8_t>(std::clamp(op.fill[2], 0, 255)), 255};
}

/// Builds the new frame by inverse warping: each new pixel is mapped to a
/// previous-frame real point by `inv` (absent = untracked fill), rounded
/// half-up to a previous pixel for the table chain, and resampled for the
/// image. Out-of-frame pixels get the fill color and stay untracked.
std::pair<Image, CoordTable> warp(const Image& image, const CoordTable& table, int out_h, int out_w,
                                  const std::function<std::optional<Point>(Point)>& inv, Pixel fill,
                                  Resample resample) {
    Image out(out_h, out_w, fill);
    CoordTable out_table(out_h, out_w, table.source_height(), table.source_width());
    for (int r = 0; r < out_h; ++r) {
        for (int c = 0; c < out_w; ++c) {
            std::optional<Point> p = inv(Point{static_cast<double>(r), static_cast<double>(c)});
            if (!p) continue;
            const int pr = round_half_up(p->row);
            const int pc = round_half_up(p->col);
            if (!image.in_bounds(pr, pc)) continue;
            if (resample == Resample::nearest) {
                out.at(r, c) = image.at(pr, pc);
            } else {
                auto s = bilinear_sample(image, p->row, p->col);
                out.at(r, c) = Pixel{to_u8(s[0]), to_u8(s[1]), to_u8(s[2]), to_u8(s[3])};
            }
            out_table.set({r, c}, table.at(pr, pc));
        }
    }
    return {std::move(out), std::move(out_table)};
}

void check_rect_inside(const EditOp& op, const Image& image, const char* what) {
    if (op.height <= 0 || op.width <= 0) throw ParamError(std::string(what) + ": rectangle dims must be positive");
    if (op.top < 0 || op.left < 0 || op.top + op.height > image.height() || op.left + op.width > image.width()) {
        throw ParamError(std::string(what) + ": rectangle exceeds the image bounds");
    }
}

std::pair<Image, CoordTable> do_crop(const Image& image, const CoordTable& table, const EditOp& op,
                                     Resample resample) {
    check_rect_inside(op, image, "crop");
    auto inv = [&](Point p) -> std::optional<Point> {
        return Point{p.row + op.top, p.col + op.left};
    };
    return warp(image, table, op.height, op.width, inv, fill_pixel(op), resample);
}

std::pair<Image, CoordTable> do_resize(const Image& image, const CoordTable& table, const EditOp& op,
                                       Resample resample) {
    if (op.out_height <= 0 || op.out_width <= 0) throw ParamError("resize: output dims must be positive");
    // Pixel-center convention: new center (r+0.5) maps from old center
    // (r+0.5)/s, so upscaling covers every output pixel without holes.
    const double sr = static_cast<double>(op.out_height) / image.height();
    const double sc = static_cast<double>(op.out_width) / image.width();
    auto inv = [&](Point p) -> std::optional<Point> {
        return Point{(p.row + 0.5) / sr - 0.5, (p.col + 0.5) / sc - 0.5};
    };
    return warp(image, table, op.out_height, op.out_width, inv, fill_pixel(op), resample);
}

std::pair<Image, CoordTable> do_pad(const Image& image, const CoordTable& table, const EditOp& op,
                                    Resample resample) {
    if (op.top < 0 || op.bottom < 0 || op.left < 0 || op.right < 0) {
        throw ParamError("pad: margins must be nonnegative");
    }
    const int out_h = image.height() + op.top + op.bottom;
    const int out_w = image.width() + op.left + op.right;
    auto inv = [&](Point p) -> std::optional<Point> {
        const double r = p.row - op.top;
        const double c = p.col - op.left;
        if (r < 0 || c < 0 || r > image.height() - 1 || c > image.width() - 1) return std::nullopt;
        return Point{r, c};
    };
    return warp(image, table, out_h, out_w, inv, fill_pixel(op), resample);
}

std::pair<Image, CoordTable> do_flip(const Image& image, const CoordTable& table, const EditOp& op,
                                     Resample resample) {
    const int h = image.height();
    const int w = image.width();
    auto inv = [&](Point p) -> std::optional<Point> {
        if (op.kind == EditKind::hflip) return Point{p.row, (w - 1) - p.col};
        return Point{(h - 1) - p.row, p.col};
    };
    return warp(image, table, h, w, inv, fill_pixel(op), resample);
}

std::pair<Image, CoordTable> do_rotate(const Image& image, const CoordTable& table, const EditOp& op,
                                       Resample resample) {
    const double theta = op.degrees * std::numbers::pi / 180.0;
    const double ct = std::cos(theta);
    const double st = std::sin(theta);
    const double cr = (image.height() - 1) / 2.0;
    const double cc = (image.width() - 1) / 2.0;
    // Forward rotation about the center; inverse rotates by -theta.
    auto inv = [&](Point p) -> std::optional<Point> {
        const double dr = p.row - cr;
        const double dc = p.col - cc;
        return Point{ct * dr + st * dc + cr, -st * dr + ct * dc + cc};
    };
    return warp(image, table, image.height(), image.width(), inv, fill_pixel(op), resample);
}

std::pair<Image, CoordTable> do_affine(const Image& image, const CoordTable& table, const EditOp& op,
                                       Resample resample) {
    const auto& m = op.coeffs; // new = [[a,b],[d,e]] * prev + (tr, tc)
    const double det = m[0] * m[4] - m[1] * m[3];
    if (std::abs(det) <= 1e-9) throw ParamError("affine: linear part is singular");
    const int out_h = op.out_height > 0 ? op.out_height : image.height();
    const int out_w = op.out_width > 0 ? op.out_width : image.width();
    const double ia = m[4] / det, ib = -m[1] / det, ic = -m[3] / det, id = m[0] / det;
    auto inv = [&](Point p) -> std::optional<Point> {
        const double r = p.row - m[2];
        const double c = p.col - m[5];
        return Point{ia * r + ib * c, ic * r + id * c};
    };
    return warp(image, table, out_h, out_w, inv, fill_pixel(op), resample);
}

std::pair<Image, CoordTable> do_perspective(const Image& image, const CoordTable& table, const EditOp& op,
                                            Resample resample) {
    Eigen::Matrix3d H;
    H << op.homography[0], op.homography[1], op.homography[2],
         op.homography[3], op.homography[4], op.homography[5],
         op.homography[6], op.homography[7], op.homography[8];
    if (std::abs(H.determinant()) <= 1e-9) throw ParamError("perspective: homography is singular");
    const Eigen::Matrix3d Hinv = H.inverse();
    const int out_h = op.out_height > 0 ? op.out_height : image.height();
    const int out_w = op.out_width > 0 ? op.out_width : image.width();
    auto inv = [&, Hinv](Point p) -> std::optional<Point> {
        const Eigen::Vector3d v = Hinv * Eigen::Vector3d(p.row, p.col, 1.0);
        if (std::abs(v[2]) < 1e-12) return std::nullopt;
        return Point{v[0] / v[2], v[1] / v[2]};
    };
    return warp(image, table, out_h, out_w, inv, fill_pixel(op), resample);
}

std::pair<Image, CoordTable> do_matting(const Image& image, const CoordTable& table, const EditOp& op) {
    const bool rect = op.mask_shape == "rect";
    if (!rect && op.mask_shape != "ellipse") throw ParamError("matting_mask: shape must be rect or ellipse");
    if (rect) check_rect_inside(op, image, "matting_mask");
    if (!rect && (op.radius_row <= 0 || op.radius_col <= 0)) {
        throw ParamError("matting_mask: ellipse radii must be positive");
    }
    Image out = image;
    CoordTable out_table = table;
    const Pixel fill = fill_pixel(op);
    for (int r = 0; r < image.height(); ++r) {
        for (int c = 0; c < image.width(); ++c) {
            bool inside;
            if (rect) {
                inside = r >= op.top && r < op.top + op.height && c >= op.left && c < op.left + op.width;
            } else {
                const double dr = (r - op.center_row) / op.radius_row;
                const double dc = (c - op.center_col) / op.radius_col;
                inside = dr * dr + dc * dc <= 1.0;
            }
            if (!inside) {
                out.at(r, c) = fill;
                out_table.set({r, c}, std::nullopt);
            }
        }
    }
    return {std::move(out), std::move(out_table)};
}

std::pair<Image, CoordTable> do_overlay_canvas(const Image& image, const CoordTable& table, const EditOp& op,
                                               Resample resample) {
    if (op.out_height <= 0 || op.out_width <= 0) throw ParamError("overlay_onto_canvas: canvas dims must be positive");
    if (op.scale <= 0) throw ParamError("overlay_onto_canvas: scale must be positive");
    // Forward paste transform p_new = scale * p_prev + offset.
    auto inv = [&](Point p) -> std::optional<Point> {
        return Point{(p.row - op.offset_row) / op.scale, (p.col - op.offset_col) / op.scale};
    };
    return warp(image, table, op.out_height, op.out_width, inv, fill_pixel(op), resample);
}

std::pair<Image, CoordTable> do_erase(const Image& image, const CoordTable& table, const EditOp& op,
                                      bool keep_occluded) {
    check_rect_inside(op, image, "erase_rect");
    Image out = image;
    CoordTable out_table = table;
    const Pixel fill = fill_pixel(op);
    for (int r = op.top; r < op.top + op.height; ++r) {
        for (int c = op.left; c < op.left + op.width; ++c) {
            out.at(r, c) = fill;
            if (!keep_occluded) out_table.set({r, c}, std::nullopt);
        }
    }
    return {std::move(out), std::move(out_table)};
}

Image make_sticker(const EditOp& op) {
    if (!op.sticker_path.empty()) return load_png(op.sticker_path);
    if (op.height <= 0 || op.width <= 0) throw ParamError("overlay_sticker: sticker dims must be positive");
    if (op.sticker_shape != "rect" && op.sticker_shape != "disk") {
        throw ParamError("overlay_sticker: shape must be rect or disk");
    }
    const Pixel color{static_cast<std::uint8_t>(std::clamp(op.sticker_color[0], 0, 255)),
                      static_cast<std::uint8_t>(std::clamp(op.sticker_color[1], 0, 255)),
                      static_cast<std::uint8_t>(std::clamp(op.sticker_color[2], 0, 255)),
                      static_cast<std::uint8_t>(std::clamp(op.sticker_color[3], 0, 255))};
    Image sticker(op.height, op.width, Pixel{0, 0, 0, 0});
    const double cr = (op.height - 1) / 2.0;
    const double cc = (op.width - 1) / 2.0;
    const double rr = op.height / 2.0;
    const double rc = op.width / 2.0;
    for (int r = 0; r < op.height; ++r) {
        for (int c = 0; c < op.width; ++c) {
            if (op.sticker_shape == "rect") {
                sticker.at(r, c) = color;
            } else {
                const double dr = (r - cr) / rr;
                const double dc = (c - cc) / rc;
                if (dr * dr + dc * dc <= 1.0) sticker.at(r, c) = color;
            }
        }
    }
    return sticker;
}

std::pair<Image, CoordTable> do_sticker(const Image& image, const CoordTable& table, const EditOp& op,
                                        bool keep_occluded) {
    if (op.alpha_threshold < 0 || op.alpha_threshold > 255) {
        throw ParamError("overlay_sticker: alpha threshold must be in [0,255]");
    }
    const Image sticker = make_sticker(op);
    Image out = image;
    CoordTable out_table = table;
    for (int sr = 0; sr < sticker.height(); ++sr) {
        for (int sc = 0; sc < sticker.width(); ++sc) {
            const int r = op.top + sr;
            const int c = op.left + sc;
            if (!image.in_bounds(r, c)) continue;
            const Pixel& s = sticker.at(sr, sc);
            if (s.a == 0) continue;
            const Pixel& base = out.at(r, c);
            const double a = s.a / 255.0;
            out.at(r, c) = Pixel{to_u8(a * s.r + (1 - a) * base.r), to_u8(a * s.g + (1 - a) * base.g),
                                 to_u8(a * s.b + (1 - a) * base.b), base.a};
            if (s.a >= op.alpha_threshold && !keep_occluded) out_table.set({r, c}, std::nullopt);
        }
    }
    return {std::move(out), std::move(out_table)};
}

Image do_color_jitter(const Image& image, const EditOp& op) {
    if (op.brightness < 0 || op.contrast < 0 || op.saturation < 0) {
        throw ParamError("color_jitter: factors must be nonnegative");
    }
    Image out = image;
    for (Pixel& p : out.pixels()) {
        const double l = luma(p);
        // saturation blends toward per-pixel luma, contrast is anchored at
        // mid-gray, brightness scales; fixed order keeps results reproducible
        double r = l + op.saturation * (p.r - l);
        double g = l + op.saturation * (p.g - l);
        double b = l + op.saturation * (p.b - l);
        r = 128.0 + op.contrast * (r - 128.0);
        g = 128.0 + op.contrast * (g - 128.0);
        b = 128.0 + op.contrast * (b - 128.0);
        p = Pixel{to_u8(r * op.brightness), to_u8(g * op.brightness), to_u8(b * op.brightness), p.a};
    }
    return out;
}

Image do_grayscale(const Image& image) {
    Image out = image;
    for (Pixel& p : out.pixels()) {
        const std::uint8_t l = to_u8(luma(p));
        p = Pixel{l, l, l, p.a};
    }
    return out;
}

Image do_blur(const Image& image, int radius) {
    if (radius < 1) throw ParamError("blur: radius must be >= 1");
    const int h = image.height();
    const int w = image.width();
    const int win = 2 * radius + 1;
    // Separable box blur with clamp-to-edge, double accumulation.
    std::vector<std::array<double, 4>> tmp(static_cast<std::size_t>(h) * w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            std::array<double, 4> acc{0, 0, 0, 0};
            for (int k = -radius; k <= radius; ++k) {
                const Pixel& p = image.at(r, std::clamp(c + k, 0, w - 1));
                acc[0] += p.r;
                acc[1] += p.g;
                acc[2] += p.b;
                acc[3] += p.a;
            }
            for (double& v : acc) v /= win;
            tmp[static_cast<std::size_t>(r) * w + c] = acc;
        }
    }
    Image out(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            std::array<double, 4> acc{0, 0, 0, 0};
            for (int k = -radius; k <= radius; ++k) {
                const auto& p = tmp[static_cast<std::size_t>(std::clamp(r + k, 0, h - 1)) * w + c];
                for (int ch = 0; ch < 4; ++ch) acc[ch] += p[ch];
            }
            out.at(r, c) = Pixel{to_u8(acc[0] / win), to_u8(acc[1] / win), to_u8(acc[2] / win), to_u8(acc[3] / win)};
        }
    }
    return out;
}

// ---- JSON parameter resolution -----------------------------------------

/// Reads a scalar that may be fixed (number) or ranged ([lo, hi]).
double draw_real(const json& params, const char* name, double fallback, Rng& rng) {
    if (!params.contains(name)) return fallback;
    const json& v = params.at(name);
    if (v.is_number()) return v.get<double>();
    if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number()) {
        const double lo = v[0].get<double>();
        const double hi = v[1].get<double>();
        if (hi < lo) throw FormatError(std::string("parameter ") + name + ": range upper bound below lower");
        return rng.uniform(lo, hi);
    }
    throw FormatError(std::string("parameter ") + name + ": expected number or [lo, hi]");
}

int draw_int(const json& params, const char* name, int fallback, Rng& rng) {
    if (!params.contains(name)) return fallback;
    const json& v = params.at(name);
    if (v.is_number_integer()) return v.get<int>();
    if (v.is_number()) return round_half_up(v.get<double>());
    if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number()) {
        const auto lo = static_cast<std::int64_t>(v[0].get<double>());
        const auto hi = static_cast<std::int64_t>(v[1].get<double>());
        if (hi < lo) throw FormatError(std::string("parameter ") + name + ": range upper bound below lower");
        return static_cast<int>(rng.uniform_int(lo, hi));
    }
    throw FormatError(std::string("parameter ") + name + ": expected integer or [lo, hi]");
}

void read_color(const json& params, const char* name, std::array<int, 3>& out) {
    if (!params.contains(name)) return;
    const json& v = params.at(name);
    if (!v.is_array() || v.size() != 3) throw FormatError(std::string("parameter ") + name + ": expected [r, g, b]");
    for (int i = 0; i < 3; ++i) out[i] = v[i].get<int>();
}

json parse_params(const EditSpec& spec) {
    json params = json::parse(spec.params_json, nullptr, false);
    if (params.is_discarded() || !params.is_object()) {
        throw FormatError("edit op '" + spec.kind + "': parameters are not a JSON object");
    }
    return params;
}

} // namespace

const char* edit_kind_name(EditKind kind) { return kKindNames[static_cast<int>(kind)]; }

EditKind edit_kind_from_name(const std::string& name) {
    for (std::size_t i = 0; i < kKindNames.size(); ++i) {
        if (name == kKindNames[i]) return static_cast<EditKind>(i);
    }
    throw FormatError("unknown edit kind: " + name);
}

std::pair<Image, CoordTable> apply_edit(const Image& image, const CoordTable& table, const EditOp& op,
                                        Resample resample, bool keep_occluded) {
    if (table.height() != image.height() || table.width() != image.width()) {
        throw ParamError("apply_edit: table must be keyed on the image dims");
    }
    switch (op.kind) {
        case EditKind::crop: return do_crop(image, table, op, resample);
        case EditKind::resize: return do_resize(image, table, op, resample);
        case EditKind::pad: return do_pad(image, table, op, resample);
        case EditKind::hflip:
        case EditKind::vflip: return do_flip(image, table, op, resample);
        case EditKind::rotate: return do_rotate(image, table, op, resample);
        case EditKind::affine: return do_affine(image, table, op, resample);
        case EditKind::perspective: return do_perspective(image, table, op, resample);
        case EditKind::matting_mask: return do_matting(image, table, op);
        case EditKind::overlay_onto_canvas: return do_overlay_canvas(image, table, op, resample);
        case EditKind::erase_rect: return do_erase(image, table, op, keep_occluded);
        case EditKind::overlay_sticker: return do_sticker(image, table, op, keep_occluded);
        case EditKind::color_jitter: return {do_color_jitter(image, op), table};
        case EditKind::grayscale: return {do_grayscale(image), table};
        case EditKind::blur: return {do_blur(image, op.radius), table};
    }
    throw ParamError("apply_edit: unhandled op kind");
}

EditOp resolve_op(const EditSpec& spec, Rng& rng) {
    EditOp op;
    json params = parse_params(spec);

    // "jpeg" is accepted in configs as a quality-reducing blur proxy; it
    // resolves to a blur op rather than adding a codec dependency.
    if (spec.kind == "jpeg") {
        const int quality = draw_int(params, "quality", 50, rng);
        if (quality < 1 || quality > 100) throw FormatError("jpeg: quality must be in [1,100]");
        op.kind = EditKind::blur;
        op.radius = std::clamp((100 - quality) / 30 + 1, 1, 3);
        return op;
    }

    op.kind = edit_kind_from_name(spec.kind);
    read_color(params, "fill", op.fill);
    switch (op.kind) {
        case EditKind::crop:
            op.top = draw_int(params, "top", 0, rng);
            op.left = draw_int(params, "left", 0, rng);
            op.height = draw_int(params, "height", 0, rng);
            op.width = draw_int(params, "width", 0, rng);
            break;
        case EditKind::resize:
            op.out_height = draw_int(params, "height", 0, rng);
            op.out_width = draw_int(params, "width", 0, rng);
            break;
        case EditKind::pad:
            op.top = draw_int(params, "top", 0, rng);
            op.bottom = draw_int(params, "bottom", 0, rng);
            op.left = draw_int(params, "left", 0, rng);
            op.right = draw_int(params, "right", 0, rng);
            break;
        case EditKind::hflip:
        case EditKind::vflip:
        case EditKind::grayscale:
            break;
        case EditKind::rotate:
            op.degrees = draw_real(params, "degrees", 0.0, rng);
            break;
        case EditKind::affine: {
            if (params.contains("coeffs")) {
                const json& m = params.at("coeffs");
                if (!m.is_array() || m.size() != 6) throw FormatError("affine: coeffs must have 6 entries");
                for (int i = 0; i < 6; ++i) op.coeffs[i] = m[i].get<double>();
            }
            op.out_height = draw_int(params, "out_height", 0, rng);
            op.out_width = draw_int(params, "out_width", 0, rng);
            break;
        }
        case EditKind::perspective: {
            if (!params.contains("homography")) throw FormatError("perspective: homography required");
            const json& m = params.at("homography");
            if (!m.is_array() || m.size() != 9) throw FormatError("perspective: homography must have 9 entries");
            for (int i = 0; i < 9; ++i) op.homography[i] = m[i].get<double>();
            op.out_height = draw_int(params, "out_height", 0, rng);
            op.out_width = draw_int(params, "out_width", 0, rng);
            break;
        }
        case EditKind::matting_mask:
            op.mask_shape = params.value("shape", "ellipse");
            if (op.mask_shape == "rect") {
                op.top = draw_int(params, "top", 0, rng);
                op.left = draw_int(params, "left", 0, rng);
                op.height = draw_int(params, "height", 0, rng);
                op.width = draw_int(params, "width", 0, rng);
            } else {
                op.center_row = draw_real(params, "center_row", 0.0, rng);
                op.center_col = draw_real(params, "center_col", 0.0, rng);
                op.radius_row = draw_real(params, "radius_row", 0.0, rng);
                op.radius_col = draw_real(params, "radius_col", 0.0, rng);
            }
            break;
        case EditKind::overlay_onto_canvas:
            op.out_height = draw_int(params, "canvas_height", 0, rng);
            op.out_width = draw_int(params, "canvas_width", 0, rng);
            op.scale = draw_real(params, "scale", 1.0, rng);
            op.offset_row = draw_real(params, "top", 0.0, rng);
            op.offset_col = draw_real(params, "left", 0.0, rng);
            break;
        case EditKind::erase_rect:
            op.top = draw_int(params, "top", 0, rng);
            op.left = draw_int(params, "left", 0, rng);
            op.height = draw_int(params, "height", 0, rng);
            op.width = draw_int(params, "width", 0, rng);
            break;
        case EditKind::overlay_sticker: {
            op.sticker_path = params.value("path", "");
            op.sticker_shape = params.value("shape", "rect");
            op.top = draw_int(params, "top", 0, rng);
            op.left = draw_int(params, "left", 0, rng);
            op.height = draw_int(params, "height", 0, rng);
            op.width = draw_int(params, "width", 0, rng);
            op.alpha_threshold = draw_int(params, "alpha_threshold", 128, rng);
            if (params.contains("color")) {
                const json& v = params.at("color");
                if (!v.is_array() || v.size() != 4) throw FormatError("overlay_sticker: color must be [r,g,b,a]");
                for (int i = 0; i < 4; ++i) op.sticker_color[i] = v[i].get<int>();
            }
            break;
        }
        case EditKind::color_jitter:
            op.brightness = draw_real(params, "brightness", 1.0, rng);
            op.contrast = draw_real(params, "contrast", 1.0, rng);
            op.saturation = draw_real(params, "saturation", 1.0, rng);
            break;
        case EditKind::blur:
            op.radius = draw_int(params, "radius", 1, rng);
            break;
    }
    return op;
}

PipelineResult apply_pipeline(const Image& source, const EditPipeline& pipeline, std::uint64_t seed) {
    if (pipeline.ops.empty()) throw ParamError("pipeline has no ops");
    PipelineResult result{source, identity_table(source.height(), source.width()), {}};
    const Rng base(seed);
    for (std::size_t i = 0; i < pipeline.ops.size(); ++i) {
        try {
            Rng op_rng = base.stream(i);
            EditOp op = resolve_op(pipeline.ops[i], op_rng);
            auto [img, tab] = apply_edit(result.image, result.table, op, pipeline.resample, pipeline.keep_occluded);
            result.image = std::move(img);
            result.table = std::move(tab);
            result.resolved_ops.push_back(std::move(op));
        } catch (const ParamError& e) {
            throw ParamError("pipeline step " + std::to_string(i) + " (" + pipeline.ops[i].kind + "): " + e.what());
        } catch (const FormatError& e) {
            throw FormatError("pipeline step " + std::to_string(i) + " (" + pipeline.ops[i].kind + "): " + e.what());
        }
    }
    return result;
}

PipelineResult apply_pipeline(const Image& source, const EditPipeline& pipeline) {
    return apply_pipeline(source, pipeline, pipeline.seed);
}

EditedPair make_pair(const Image& source, const EditPipeline& pipeline_a, const EditPipeline& pipeline_b,
                     std::uint64_t seed_a, std::uint64_t seed_b) {
    PipelineResult a = apply_pipeline(source, pipeline_a, seed_a);
    PipelineResult b = apply_pipeline(source, pipeline_b, seed_b);
    CoordTable ba = compose(reverse(a.table), b.table);
    CoordTable ab = reverse(ba);
    return EditedPair{std::move(a.image), std::move(b.image), std::move(a.table), std::move(b.table),
                      std::move(ba), std::move(ab)};
}

EditedPair make_pair(const Image& source, const EditPipeline& pipeline_a, const EditPipeline& pipeline_b) {
    return make_pair(source, pipeline_a, pipeline_b, pipeline_a.seed, pipeline_b.seed);
}

EditPipeline parse_pipeline_text(const std::string& json_text) {
    json j = json::parse(json_text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw FormatError("pipeline config: not a JSON object");
    EditPipeline pipe;
    pipe.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("resample")) {
        const std::string r = j.at("resample").get<std::string>();
        if (r == "nearest") {
            pipe.resample = Resample::nearest;
        } else if (r == "bilinear") {
            pipe.resample = Resample::bilinear;
        } else {
            throw FormatError("pipeline config: resample must be nearest or bilinear");
        }
    }
    pipe.keep_occluded = j.value("keep_occluded", false);
    if (!j.contains("ops") || !j.at("ops").is_array()) throw FormatError("pipeline config: missing ops array");
    for (const json& jop : j.at("ops")) {
        if (!jop.is_object() || !jop.contains("kind")) throw FormatError("pipeline config: op missing kind");
        EditSpec spec;
        spec.kind = jop.at("kind").get<std::string>();
        json params = jop;
        params.erase("kind");
        spec.params_json = params.dump();
        pipe.ops.push_back(std::move(spec));
    }
    return pipe;
}

EditPipeline load_pipeline(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParamError("cannot open pipeline file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    try {
        return parse_pipeline_text(ss.str());
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

} // namespace copytrace
