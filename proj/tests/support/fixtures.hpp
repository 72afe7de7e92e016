// Synthetic rasters, point files and scratch directories for tests.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "geofeat/raster_io.hpp"

namespace fixtures {

class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// 10 m UTM-like grid used by most fixtures.
geofeat::GeoTransform default_gt();
inline const char* kCrs = "EPSG:32631";

using PixelFn = std::function<double(int band, int col, int row)>;

/// Writes a width x height raster whose band b pixel (c, r) is fn(b, c, r).
void write_fixture(const std::filesystem::path& path, int width, int height, int bands, const PixelFn& fn,
                   geofeat::WriteOptions options = {}, geofeat::GeoTransform gt = default_gt(),
                   const std::string& crs = kCrs);

/// Smooth multi-band pattern with enough texture for a non-trivial encoder output.
double smooth_pattern(int band, int col, int row);

/// Geo coordinate of the centre of pixel (col, row) under `gt`.
geofeat::GeoPoint pixel_center(const geofeat::GeoTransform& gt, int col, int row);

/// Two planted textures split at column 128: spectral offset plus a stripe
/// pattern that differs in orientation and period.
struct TwoTextures {
    int width = 256;
    int height = 256;
    int bands = 4;
    bool right_side(int col) const { return col >= width / 2; }
    double value(int band, int col, int row) const;
};

/// Writes a GeoJSON FeatureCollection of points with the given properties.
void write_points_file(const std::filesystem::path& path, const std::vector<geofeat::GeoPoint>& pts,
                       const std::vector<nlohmann::json>& props, const std::string& crs = kCrs);

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& path);

/// Runs a shell command, returning its exit status and captured stdout+stderr.
struct CommandResult {
    int status = -1;
    std::string output;
};
CommandResult run_command(const std::string& cmd);

}  // namespace fixtures
