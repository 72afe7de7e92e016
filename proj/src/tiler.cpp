#include "geofeat/tiler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "geofeat/error.hpp"

namespace geofeat {

std::vector<int> axis_offsets(int dim, int sample_size, int stride) {
    std::vector<int> out;
    const int last = dim - sample_size;
    for (int o = 0; o <= last; o += stride) out.push_back(o);
    if (out.back() != last) out.push_back(last);
    return out;
}

TilePlan plan_tiles(int raster_width, int raster_height, int sample_size, int stride) {
    if (sample_size < 1 || sample_size > std::min(raster_width, raster_height))
        throw ConfigError("sample size " + std::to_string(sample_size) + " does not fit a " +
                          std::to_string(raster_width) + "x" + std::to_string(raster_height) + " raster");
    if (stride < 1 || stride > sample_size)
        throw ConfigError("stride " + std::to_string(stride) + " must be in [1, " + std::to_string(sample_size) + "]");
    TilePlan plan{sample_size, stride, raster_width, raster_height, {}};
    const auto cols = axis_offsets(raster_width, sample_size, stride);
    const auto rows = axis_offsets(raster_height, sample_size, stride);
    plan.offsets.reserve(cols.size() * rows.size());
    for (int r : rows)
        for (int c : cols) plan.offsets.push_back({c, r});
    return plan;
}

PixelBlock normalize_block(const PixelBlock& block, const BandStats& stats) {
    if (stats.band_count() != block.band_count())
        throw InputError("band-count mismatch: block has " + std::to_string(block.band_count()) +
                         " bands, stats have " + std::to_string(stats.band_count()));
    PixelBlock out = block;
    for (int b = 0; b < block.band_count(); ++b) {
        auto col = out.values.col(b);
        if (stats.std[b] == 0.0) {
            col = col.unaryExpr([](float v) { return std::isnan(v) ? v : 0.0f; });
        } else {
            const double mean = stats.mean[b];
            const double inv = 1.0 / stats.std[b];
            col = col.unaryExpr([=](float v) { return static_cast<float>((double(v) - mean) * inv); });
        }
    }
    return out;
}

}  // namespace geofeat
