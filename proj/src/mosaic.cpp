#include "geofeat/mosaic.hpp"

#include <cassert>
#include <limits>
#include <numeric>

#include "geofeat/error.hpp"

namespace geofeat {

OutputGeometry output_grid_geometry(const GeoTransform& gt, int raster_width, int raster_height, int patch_size) {
    if (patch_size < 1) throw ConfigError("patch size must be >= 1");
    OutputGeometry g;
    g.width = (raster_width + patch_size - 1) / patch_size;
    g.height = (raster_height + patch_size - 1) / patch_size;
    g.geotransform = gt;
    g.geotransform.pixel_width *= patch_size;
    g.geotransform.pixel_height *= patch_size;
    return g;
}

FeatureAccumulator::FeatureAccumulator(OutputGeometry geometry, int feature_dim, int patch_size, std::string crs_id)
    : geometry_(geometry), dim_(feature_dim), patch_size_(patch_size), crs_id_(std::move(crs_id)) {
    if (feature_dim < 1 || patch_size < 1 || geometry.width < 1 || geometry.height < 1)
        throw ConfigError("invalid accumulator geometry");
    sums_ = Eigen::MatrixXd::Zero(std::int64_t(geometry.width) * geometry.height, feature_dim);
    counts_.assign(static_cast<std::size_t>(sums_.rows()), 0);
}

void FeatureAccumulator::accumulate(const PatchFeatureGrid& grid) {
    if (grid.dim != dim_ || grid.features.cols() != dim_ || grid.features.rows() != std::int64_t(grid.grid) * grid.grid)
        throw InputError("patch grid does not match the accumulator feature dimension");
    const int p = patch_size_;
    for (int ly = 0; ly < grid.grid; ++ly) {
        const int cy = (grid.offset.row_off + ly * p + p / 2) / p;
        for (int lx = 0; lx < grid.grid; ++lx) {
            const int cx = (grid.offset.col_off + lx * p + p / 2) / p;
            assert(cx >= 0 && cy >= 0 && cx < geometry_.width && cy < geometry_.height);
            if (cx < 0 || cy < 0 || cx >= geometry_.width || cy >= geometry_.height)
                throw Error("patch maps outside the output grid");
            const std::int64_t cell = std::int64_t(cy) * geometry_.width + cx;
            sums_.row(cell) += grid.features.row(std::int64_t(ly) * grid.grid + lx).cast<double>();
            ++counts_[static_cast<std::size_t>(cell)];
        }
    }
}

void FeatureAccumulator::merge(const FeatureAccumulator& other) {
    if (other.dim_ != dim_ || other.sums_.rows() != sums_.rows())
        throw InputError("cannot merge accumulators of different shapes");
    sums_ += other.sums_;
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::int64_t FeatureAccumulator::total_count() const {
    return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

RasterImage FeatureAccumulator::finalize() const {
    if (total_count() == 0) throw InputError("empty accumulator: no tiles were accumulated");
    RasterImage img{{geometry_.width, geometry_.height, dim_, geometry_.geotransform, crs_id_}, {}};
    img.values.resize(sums_.rows(), dim_);
    const float nan = std::numeric_limits<float>::quiet_NaN();
    for (Eigen::Index c = 0; c < sums_.rows(); ++c) {
        const auto n = counts_[static_cast<std::size_t>(c)];
        if (n == 0) img.values.row(c).setConstant(nan);
        else img.values.row(c) = (sums_.row(c) / double(n)).cast<float>();
    }
    return img;
}

WriteOptions feature_write_options(Compression compression) {
    WriteOptions o;
    o.compression = compression;
    o.sample_type = SampleType::Float32;
    o.nodata = std::numeric_limits<double>::quiet_NaN();
    return o;
}

}  // namespace geofeat
