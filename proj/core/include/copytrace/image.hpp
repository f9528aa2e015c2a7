#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace copytrace {

/// 8-bit RGBA pixel.
struct Pixel {
    std::uint8_t r = 0, g = 0, b = 0, a = 255;

    friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Dense row-major RGBA8 image.
class Image {
public:
    Image() = default;
    Image(int height, int width, Pixel fill = Pixel{0, 0, 0, 255});

    int height() const { return height_; }
    int width() const { return width_; }

    Pixel& at(int r, int c) { return data_[idx(r, c)]; }
    const Pixel& at(int r, int c) const { return data_[idx(r, c)]; }

    bool in_bounds(int r, int c) const { return r >= 0 && r < height_ && c >= 0 && c < width_; }

    const std::vector<Pixel>& pixels() const { return data_; }
    std::vector<Pixel>& pixels() { return data_; }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t idx(int r, int c) const {
        return static_cast<std::size_t>(r) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(c);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<Pixel> data_;
};

/// Reads a PNG file as RGBA8. Throws ParamError when the file cannot be
/// opened and FormatError when it is not a decodable PNG.
Image load_png(const std::string& path);

/// Writes RGBA8 PNG. Throws ParamError on I/O failure.
void save_png(const Image& image, const std::string& path);

/// Bilinear sample at real (row, col) with clamp-to-edge behaviour,
/// channel-wise, returning real values in [0,255].
std::array<double, 4> bilinear_sample(const Image& image, double row, double col);

/// Max absolute per-channel difference over RGB (alpha ignored).
int max_abs_rgb_diff(const Image& a, const Image& b);

} // namespace copytrace
