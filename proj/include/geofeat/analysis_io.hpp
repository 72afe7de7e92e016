/**
 * @file analysis_io.hpp
 * @brief Raster sampling, streamed model application and JSON model files.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "geofeat/analysis.hpp"
#include "geofeat/raster_io.hpp"

namespace geofeat {

/// Feature vectors drawn without replacement from cells that hold no NaN.
struct PixelSample {
    Eigen::MatrixXd values;           ///< n x d
    std::vector<std::int64_t> cells;  ///< row-major cell index of each row, ascending
    std::uint64_t seed = 0;
};

/// min(n, valid cells) rows, uniform without replacement, deterministic for a seed.
PixelSample sample_pixels(const RasterDataset& ds, std::int64_t n, std::uint64_t seed);

/// Projects every cell onto the PCA axes, one block at a time. NaN cells stay NaN.
void transform_raster_pca(const RasterDataset& in, const PcaModel<double>& model, const std::filesystem::path& out,
                          const WriteOptions& options = {});

constexpr double kClusterNodata = -1.0;

/// Nearest-centroid label per cell as an int16 band; NaN cells get -1.
void predict_kmeans(const RasterDataset& in, const KMeansModel<double>& model, const std::filesystem::path& out,
                    Compression compression = Compression::Deflate);

nlohmann::json to_json(const PcaModel<double>& m);
PcaModel<double> pca_from_json(const nlohmann::json& j);
nlohmann::json to_json(const KMeansModel<double>& m);
KMeansModel<double> kmeans_from_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

/// Block-streaming helper: applies `fn` to every window of `in` (all bands),
/// feeding the results to write_raster.
PixelSource map_windows(const RasterDataset& in, std::function<Eigen::MatrixXf(const PixelBlock&)> fn);

}  // namespace geofeat
