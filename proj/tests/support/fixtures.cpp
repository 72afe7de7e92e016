#include "fixtures.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <sys/wait.h>

namespace fixtures {

TempDir::TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "geofeat-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

geofeat::GeoTransform default_gt() { return {500000.0, 4200000.0, 10.0, -10.0, 0.0, 0.0}; }

void write_fixture(const std::filesystem::path& path, int width, int height, int bands, const PixelFn& fn,
                   geofeat::WriteOptions options, geofeat::GeoTransform gt, const std::string& crs) {
    Eigen::MatrixXf values(std::int64_t(width) * height, bands);
    for (int b = 0; b < bands; ++b)
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c) values(std::int64_t(r) * width + c, b) = float(fn(b, c, r));
    geofeat::write_raster(path, {width, height, bands, gt, crs}, values, options);
}

double smooth_pattern(int band, int col, int row) {
    return 100.0 + 40.0 * std::sin(0.07 * col + 0.5 * band) * std::cos(0.05 * row - 0.3 * band) +
           10.0 * std::sin(0.31 * (col + 2 * row) + band);
}

geofeat::GeoPoint pixel_center(const geofeat::GeoTransform& gt, int col, int row) {
    return {gt.origin_x + (col + 0.5) * gt.pixel_width, gt.origin_y + (row + 0.5) * gt.pixel_height};
}

double TwoTextures::value(int band, int col, int row) const {
    if (!right_side(col)) {
        // Horizontal stripes, period 8.
        const double s = (row / 4) % 2 ? 1.0 : -1.0;
        return 60.0 + 10.0 * band + 25.0 * s;
    }
    // Vertical stripes, period 4, different spectral profile.
    const double s = (col / 2) % 2 ? 1.0 : -1.0;
    return 140.0 - 15.0 * band + 25.0 * s;
}

void write_points_file(const std::filesystem::path& path, const std::vector<geofeat::GeoPoint>& pts,
                       const std::vector<nlohmann::json>& props, const std::string& crs) {
    nlohmann::json fc{{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
    if (!crs.empty()) fc["crs"] = {{"type", "name"}, {"properties", {{"name", crs}}}};
    for (std::size_t i = 0; i < pts.size(); ++i) {
        fc["features"].push_back({{"type", "Feature"},
                                  {"geometry", {{"type", "Point"}, {"coordinates", {pts[i].x, pts[i].y}}}},
                                  {"properties", i < props.size() ? props[i] : nlohmann::json::object()}});
    }
    std::ofstream(path) << fc.dump(2);
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CommandResult run_command(const std::string& cmd) {
    CommandResult r;
    std::FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
    if (!pipe) return r;
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
    const int st = pclose(pipe);
    r.status = WIFEXITED(st) ? WEXITSTATUS(st) : (WIFSIGNALED(st) ? 128 + WTERMSIG(st) : -1);
    return r;
}

}  // namespace fixtures
