/**
 * @file points.hpp
 * @brief GeoJSON point collections (templates and labelled samples).
 */
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "geofeat/raster_io.hpp"

namespace geofeat {

struct PointFeature {
    GeoPoint location;
    nlohmann::json properties = nlohmann::json::object();
};

struct PointCollection {
    std::vector<PointFeature> points;
    std::string crs_id;  ///< from a legacy "crs" member; empty means unspecified
};

/// Parses a GeoJSON FeatureCollection of Point features.
PointCollection read_points(const std::filesystem::path& path);
PointCollection parse_points(const nlohmann::json& doc);

void write_points(const std::filesystem::path& path, const PointCollection& points);

/// Throws InputError when both CRS ids are known and differ.
void require_same_crs(const std::string& points_crs, const std::string& raster_crs);

}  // namespace geofeat
