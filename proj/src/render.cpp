#include "geofeat/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <png.h>

#include "geofeat/error.hpp"

namespace geofeat {
namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 5> kRamp{{
    {68, 1, 84},
    {59, 82, 139},
    {33, 145, 140},
    {94, 201, 98},
    {253, 231, 37},
}};

std::uint8_t to_byte(double v) { return std::uint8_t(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

double percentile(std::vector<float> values, double q) {
    values.erase(std::remove_if(values.begin(), values.end(), [](float v) { return !std::isfinite(v); }),
                 values.end());
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * double(values.size() - 1);
    const auto lo = std::size_t(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - double(lo)) * (double(values[hi]) - values[lo]);
}

RgbaImage stretch_composite(const PixelBlock& block) {
    const int bands = block.band_count();
    if (bands != 1 && bands != 3) throw ConfigError("composite needs 1 or 3 bands, got " + std::to_string(bands));
    RgbaImage img{block.window.width, block.window.height, {}};
    const Eigen::Index n = block.values.rows();
    img.pixels.assign(std::size_t(n) * 4, 0);
    for (int b = 0; b < bands; ++b) {
        const auto col = block.values.col(b);
        std::vector<float> v(col.data(), col.data() + n);
        const double lo = percentile(v, 2.0), hi = percentile(v, 98.0);
        const bool flat = !(hi > lo);
        for (Eigen::Index i = 0; i < n; ++i) {
            const float x = col(i);
            const std::uint8_t byte = flat ? 128 : to_byte((double(x) - lo) / (hi - lo) * 255.0);
            for (int c = (bands == 1 ? 0 : b); c <= (bands == 1 ? 2 : b); ++c) img.pixels[std::size_t(i) * 4 + c] = byte;
        }
    }
    for (Eigen::Index i = 0; i < n; ++i)
        img.pixels[std::size_t(i) * 4 + 3] = block.values.row(i).array().isNaN().any() ? 0 : 255;
    return img;
}

std::array<std::uint8_t, 3> ramp_color(double t) {
    t = std::clamp(t, 0.0, 1.0);
    const double pos = t * double(kRamp.size() - 1);
    const auto i = std::min(std::size_t(pos), kRamp.size() - 2);
    const double f = pos - double(i);
    std::array<std::uint8_t, 3> c{};
    for (int k = 0; k < 3; ++k) c[k] = to_byte(kRamp[i][k] + f * (double(kRamp[i + 1][k]) - kRamp[i][k]));
    return c;
}

RgbaImage ramp_image(const PixelBlock& block, double lo, double hi) {
    if (block.band_count() != 1) throw ConfigError("ramp rendering needs a single band");
    RgbaImage img{block.window.width, block.window.height, {}};
    const Eigen::Index n = block.values.rows();
    img.pixels.assign(std::size_t(n) * 4, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
        const float v = block.values(i, 0);
        if (std::isnan(v)) continue;
        const double t = hi > lo ? (double(v) - lo) / (hi - lo) : 0.5;
        const auto c = ramp_color(t);
        std::copy(c.begin(), c.end(), img.pixels.begin() + i * 4);
        img.pixels[std::size_t(i) * 4 + 3] = 255;
    }
    return img;
}

std::string encode_png(const RgbaImage& image) {
    if (image.width < 1 || image.height < 1) throw ConfigError("cannot encode an empty image");
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = png_uint_32(image.width);
    png.height = png_uint_32(image.height);
    png.format = PNG_FORMAT_RGBA;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.pixels.data(), 0, nullptr))
        throw Error(std::string("png encoding failed: ") + png.message);
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.pixels.data(), 0, nullptr))
        throw Error(std::string("png encoding failed: ") + png.message);
    out.resize(size);
    return out;
}

}  // namespace geofeat
