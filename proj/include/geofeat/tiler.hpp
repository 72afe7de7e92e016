/**
 * @file tiler.hpp
 * @brief Sliding-window tile plans and per-band input normalization.
 */
#pragma once

#include <cstdint>
#include <vector>

#include "geofeat/raster_io.hpp"

namespace geofeat {

struct TileOffset {
    int col_off = 0;
    int row_off = 0;
    bool operator==(const TileOffset&) const = default;
    auto operator<=>(const TileOffset& o) const {
        if (auto c = row_off <=> o.row_off; c != 0) return c;
        return col_off <=> o.col_off;
    }
};

/// Square tiles of `sample_size` pixels laid out row-major. The last tile on
/// each axis is shifted flush with the raster edge instead of padded.
struct TilePlan {
    int sample_size = 0;
    int stride = 0;
    int raster_width = 0;
    int raster_height = 0;
    std::vector<TileOffset> offsets;

    std::size_t size() const { return offsets.size(); }
    Window window(std::size_t i) const {
        return {offsets[i].col_off, offsets[i].row_off, sample_size, sample_size};
    }
};

/// Offsets {0, stride, 2*stride, ...} <= dim - sample_size, plus dim - sample_size.
std::vector<int> axis_offsets(int dim, int sample_size, int stride);

TilePlan plan_tiles(int raster_width, int raster_height, int sample_size, int stride);

/// (v - mean) / std per band; zero-std bands become 0 and NaN stays NaN.
PixelBlock normalize_block(const PixelBlock& block, const BandStats& stats);

}  // namespace geofeat
