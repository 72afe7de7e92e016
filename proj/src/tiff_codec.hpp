/**
 * @file tiff_codec.hpp
 * @brief Minimal classic-TIFF reader/writer with the GeoTIFF tags we use.
 *
 * Supported on read: strips or tiles, chunky or planar layout, uint8/uint16/
 * int16/float32 samples, no compression or DEFLATE, either byte order.
 * The writer always produces little-endian, tiled, planar-separate files.
 */
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geofeat/raster_io.hpp"

namespace geofeat::detail {

struct TiffLayout {
    bool big_endian = false;
    bool tiled = false;
    bool planar_separate = false;
    int chunk_width = 0;   ///< tile width, or raster width for strips
    int chunk_height = 0;  ///< tile height, or rows per strip
    int samples_per_pixel = 1;
    int bytes_per_sample = 1;
    int compression = 1;  ///< 1 none, 8 / 32946 deflate
    std::vector<std::uint64_t> offsets;
    std::vector<std::uint64_t> byte_counts;

    int chunks_across(int width) const { return (width + chunk_width - 1) / chunk_width; }
    int chunks_down(int height) const { return (height + chunk_height - 1) / chunk_height; }
};

/// Parses the first IFD of a TIFF file into dataset metadata.
RasterDataset read_tiff_header(const std::filesystem::path& path);

/// Raw decoded chunk bytes (decompressed, still in file byte order).
std::vector<std::uint8_t> read_chunk(std::ifstream& in, const RasterDataset& ds, std::size_t chunk);

struct TiffWriteRequest {
    int width = 0;
    int height = 0;
    int band_count = 0;
    /// GDAL-order affine coefficients (x0, dx, rx, y0, ry, dy).
    std::array<double, 6> affine{0, 1, 0, 0, 0, -1};
    std::string crs_id;
    WriteOptions options;
};

void write_tiff(const std::filesystem::path& path, const TiffWriteRequest& req,
                const PixelSource& source);

std::size_t sample_size_bytes(SampleType t);

}  // namespace geofeat::detail
