/**
 * @file render.hpp
 * @brief PNG previews of raster windows.
 */
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "geofeat/raster_io.hpp"

namespace geofeat {

struct RgbaImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  ///< row-major RGBA
};

/// Linear-interpolated percentile of the finite values; NaN when there are none.
double percentile(std::vector<float> values, double q);

/// False-colour composite of one or three bands, each stretched from its
/// 2nd to 98th percentile onto 0..255. A band with no spread renders as 128.
/// NaN pixels are transparent.
RgbaImage stretch_composite(const PixelBlock& block);

/// Colour at t in [0, 1] on the fixed five-stop ramp; t = 1 is the top stop.
std::array<std::uint8_t, 3> ramp_color(double t);

/// Single-band rendering: (v - lo) / (hi - lo) through ramp_color.
RgbaImage ramp_image(const PixelBlock& block, double lo, double hi);

std::string encode_png(const RgbaImage& image);

}  // namespace geofeat
