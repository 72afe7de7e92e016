/**
 * @file mosaic.hpp
 * @brief Merge per-tile patch grids into one feature raster at patch resolution.
 */
#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "geofeat/encoder.hpp"
#include "geofeat/raster_io.hpp"

namespace geofeat {

struct OutputGeometry {
    int width = 0;
    int height = 0;
    GeoTransform geotransform;
};

/// ceil(dim / p) cells per axis, pixel size scaled by p, same origin.
OutputGeometry output_grid_geometry(const GeoTransform& gt, int raster_width, int raster_height, int patch_size);

/// Running per-cell sums (float64) and counts; overlaps blend by unweighted mean.
class FeatureAccumulator {
public:
    FeatureAccumulator(OutputGeometry geometry, int feature_dim, int patch_size, std::string crs_id = {});

    /// Each patch lands in the output cell containing its centre pixel.
    void accumulate(const PatchFeatureGrid& grid);
    void merge(const FeatureAccumulator& other);

    const OutputGeometry& geometry() const { return geometry_; }
    int feature_dim() const { return dim_; }
    std::int32_t count(int col, int row) const { return counts_[std::size_t(row) * geometry_.width + col]; }
    std::int64_t total_count() const;
    const Eigen::MatrixXd& sums() const { return sums_; }

    /// Mean per cell as float32; cells never touched are NaN.
    RasterImage finalize() const;

private:
    OutputGeometry geometry_;
    int dim_;
    int patch_size_;
    std::string crs_id_;
    Eigen::MatrixXd sums_;  ///< cells x dim
    std::vector<std::int32_t> counts_;
};

/// Write options for feature rasters: float32, NaN nodata, DEFLATE unless overridden.
WriteOptions feature_write_options(Compression compression = Compression::Deflate);

}  // namespace geofeat
