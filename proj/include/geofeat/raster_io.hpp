/**
 * @file raster_io.hpp
 * @brief GeoTIFF rasters, geotransform arithmetic and per-band statistics.
 *
 * Pixel blocks are stored as Eigen column-major matrices of shape
 * (block_w * block_h) x band_count: column b holds band b in row-major pixel
 * order, so the underlying buffer is band-major and each matrix row is the
 * value vector of one pixel.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace geofeat {

/// Affine map from pixel corners to CRS coordinates (north-up only).
struct GeoTransform {
    double origin_x = 0.0;
    double origin_y = 0.0;
    double pixel_width = 1.0;
    double pixel_height = -1.0;
    double row_rotation = 0.0;
    double col_rotation = 0.0;

    bool operator==(const GeoTransform&) const = default;
};

struct GeoPoint {
    double x = 0.0;
    double y = 0.0;
};

struct PixelIndex {
    std::int64_t col = 0;
    std::int64_t row = 0;
    bool operator==(const PixelIndex&) const = default;
};

/// Top-left corner of pixel (col, row).
GeoPoint geo_of_pixel(const GeoTransform& gt, double col, double row);

/// Pixel containing a point, by floor of the inverse affine map. Throws
/// InputError when the point falls outside a width x height extent.
PixelIndex pixel_of_geo(const GeoTransform& gt, double x, double y, std::int64_t width,
                        std::int64_t height);

/// Throws InputError if the transform is degenerate or rotated.
void validate_geotransform(const GeoTransform& gt);

enum class SampleType { UInt8, UInt16, Int16, Float32 };

const char* to_string(SampleType t);

enum class Compression { None, Deflate };

namespace detail {
struct TiffLayout;
}

/// Metadata of an opened GeoTIFF. Pixel data stays on disk.
struct RasterDataset {
    std::filesystem::path path;
    int width = 0;
    int height = 0;
    int band_count = 0;
    SampleType sample_type = SampleType::Float32;
    GeoTransform geotransform;
    std::string crs_id;             ///< e.g. "EPSG:32647"; empty when unknown
    std::optional<double> nodata;   ///< applies to every band
    std::shared_ptr<const detail::TiffLayout> layout;
};

struct Window {
    int col_off = 0;
    int row_off = 0;
    int width = 0;
    int height = 0;

    std::int64_t pixel_count() const { return std::int64_t(width) * height; }
    bool operator==(const Window&) const = default;
};

struct PixelBlock {
    Window window;
    Eigen::MatrixXf values;  ///< (width*height) x bands, band-major storage

    int band_count() const { return static_cast<int>(values.cols()); }
    float at(int band, int col, int row) const {
        return values(std::int64_t(row) * window.width + col, band);
    }
};

struct BandStats {
    std::vector<double> mean;
    std::vector<double> std;
    std::vector<double> min;
    std::vector<double> max;

    int band_count() const { return static_cast<int>(mean.size()); }
};

RasterDataset open_raster(const std::filesystem::path& path);

/// Reads a window for the given bands (all bands when empty). Values become
/// float32 and nodata pixels become NaN.
PixelBlock read_window(const RasterDataset& ds, const Window& window,
                       const std::vector<int>& bands = {});

inline Window full_window(const RasterDataset& ds) { return {0, 0, ds.width, ds.height}; }

struct WriteOptions {
    Compression compression = Compression::Deflate;
    SampleType sample_type = SampleType::Float32;
    std::optional<double> nodata;  ///< NaN values are written as this sentinel
    int tile_size = 256;
};

/// Callback producing all bands for one window, shaped like PixelBlock::values.
using PixelSource = std::function<Eigen::MatrixXf(const Window&)>;

struct RasterSpec {
    int width = 0;
    int height = 0;
    int band_count = 0;
    GeoTransform geotransform;
    std::string crs_id;
};

/// Writes a tiled GeoTIFF, pulling pixel data one internal tile at a time.
void write_raster(const std::filesystem::path& path, const RasterSpec& spec,
                  const PixelSource& source, const WriteOptions& options = {});

/// In-memory convenience overload; values is (width*height) x band_count.
void write_raster(const std::filesystem::path& path, const RasterSpec& spec,
                  const Eigen::MatrixXf& values, const WriteOptions& options = {});

/// Per-band statistics from a seeded uniform pixel sample (population std).
BandStats compute_band_stats(const RasterDataset& ds, std::int64_t max_samples,
                             std::uint64_t seed);

/// Row strips of at most `rows` rows covering the raster, top to bottom.
std::vector<Window> row_strips(const RasterDataset& ds, int rows);

}  // namespace geofeat

namespace geofeat {

/// A raster held fully in memory; values is (width*height) x band_count.
struct RasterImage {
    RasterSpec spec;
    Eigen::MatrixXf values;

    std::int64_t cell_count() const { return std::int64_t(spec.width) * spec.height; }
};

RasterImage read_image(const RasterDataset& ds);
void write_image(const std::filesystem::path& path, const RasterImage& image, const WriteOptions& options = {});

}  // namespace geofeat
