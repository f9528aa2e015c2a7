#include "copytrace/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include <png.h>

#include "copytrace/errors.hpp"

namespace copytrace {

Image::Image(int height, int width, Pixel fill) : height_(height), width_(width) {
    if (height <= 0 || width <= 0) throw ParamError("image dimensions must be positive");
    data_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
}

Image load_png(const std::string& path) {
    if (FILE* probe = std::fopen(path.c_str(), "rb")) {
        std::fclose(probe);
    } else {
        throw ParamError("cannot open: " + path);
    }

    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        std::string msg = img.message;
        png_image_free(&img);
        throw FormatError("png decode failed for " + path + ": " + msg);
    }
    img.format = PNG_FORMAT_RGBA;

    Image out(static_cast<int>(img.height), static_cast<int>(img.width));
    if (!png_image_finish_read(&img, nullptr, out.pixels().data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw FormatError("png decode failed for " + path + ": " + msg);
    }
    return out;
}

void save_png(const Image& image, const std::string& path) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width());
    img.height = static_cast<png_uint_32>(image.height());
    img.format = PNG_FORMAT_RGBA;
    if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels().data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw ParamError("png write failed for " + path + ": " + msg);
    }
}

std::array<double, 4> bilinear_sample(const Image& image, double row, double col) {
    const int h = image.height();
    const int w = image.width();
    const double r = std::clamp(row, 0.0, static_cast<double>(h - 1));
    const double c = std::clamp(col, 0.0, static_cast<double>(w - 1));
    const int r0 = static_cast<int>(std::floor(r));
    const int c0 = static_cast<int>(std::floor(c));
    const int r1 = std::min(r0 + 1, h - 1);
    const int c1 = std::min(c0 + 1, w - 1);
    const double fr = r - r0;
    const double fc = c - c0;

    const Pixel& p00 = image.at(r0, c0);
    const Pixel& p01 = image.at(r0, c1);
    const Pixel& p10 = image.at(r1, c0);
    const Pixel& p11 = image.at(r1, c1);

    auto lerp2 = [&](std::uint8_t a00, std::uint8_t a01, std::uint8_t a10, std::uint8_t a11) {
        const double top = a00 * (1.0 - fc) + a01 * fc;
        const double bot = a10 * (1.0 - fc) + a11 * fc;
        return top * (1.0 - fr) + bot * fr;
    };

    return {lerp2(p00.r, p01.r, p10.r, p11.r), lerp2(p00.g, p01.g, p10.g, p11.g),
            lerp2(p00.b, p01.b, p10.b, p11.b), lerp2(p00.a, p01.a, p10.a, p11.a)};
}

int max_abs_rgb_diff(const Image& a, const Image& b) {
    if (a.height() != b.height() || a.width() != b.width()) {
        throw ParamError("max_abs_rgb_diff: image dimensions differ");
    }
    int worst = 0;
    for (std::size_t i = 0; i < a.pixels().size(); ++i) {
        const Pixel& pa = a.pixels()[i];
        const Pixel& pb = b.pixels()[i];
        worst = std::max({worst, std::abs(int(pa.r) - int(pb.r)), std::abs(int(pa.g) - int(pb.g)),
                          std::abs(int(pa.b) - int(pb.b))});
    }
    return worst;
}

} // namespace copytrace
