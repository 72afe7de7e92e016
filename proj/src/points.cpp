#include "geofeat/points.hpp"

#include <fstream>
#include <regex>

#include "geofeat/error.hpp"

namespace geofeat {
namespace {

// Accepts "EPSG:32647", "urn:ogc:def:crs:EPSG::32647" and OGC CRS84.
std::string normalize_crs(const std::string& name) {
    if (name.find("CRS84") != std::string::npos) return "EPSG:4326";
    static const std::regex epsg(R"(EPSG:+(\d+))", std::regex::icase);
    std::smatch m;
    if (std::regex_search(name, m, epsg)) return "EPSG:" + m[1].str();
    return name;
}

}  // namespace

PointCollection parse_points(const nlohmann::json& doc) {
    if (!doc.is_object() || doc.value("type", "") != "FeatureCollection")
        throw InputError("malformed GeoJSON: expected a FeatureCollection");
    PointCollection out;
    if (doc.contains("crs")) {
        const auto& crs = doc["crs"];
        if (crs.is_object() && crs.contains("properties") && crs["properties"].contains("name"))
            out.crs_id = normalize_crs(crs["properties"]["name"].get<std::string>());
    }
    if (!doc.contains("features") || !doc["features"].is_array())
        throw InputError("malformed GeoJSON: missing features array");
    for (const auto& f : doc["features"]) {
        if (!f.is_object() || !f.contains("geometry") || !f["geometry"].is_object())
            throw InputError("malformed GeoJSON feature");
        const auto& g = f["geometry"];
        if (g.value("type", "") != "Point") throw InputError("points only: found " + g.value("type", "?") + " geometry");
        const auto& c = g.at("coordinates");
        if (!c.is_array() || c.size() < 2 || !c[0].is_number() || !c[1].is_number())
            throw InputError("malformed GeoJSON point coordinates");
        PointFeature p;
        p.location = {c[0].get<double>(), c[1].get<double>()};
        if (f.contains("properties") && f["properties"].is_object()) p.properties = f["properties"];
        out.points.push_back(std::move(p));
    }
    return out;
}

PointCollection read_points(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("not found: " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed GeoJSON " + path.string() + ": " + e.what());
    }
    return parse_points(doc);
}

void write_points(const std::filesystem::path& path, const PointCollection& points) {
    nlohmann::json doc{{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
    if (!points.crs_id.empty())
        doc["crs"] = {{"type", "name"}, {"properties", {{"name", points.crs_id}}}};
    for (const auto& p : points.points)
        doc["features"].push_back({{"type", "Feature"},
                                   {"geometry", {{"type", "Point"}, {"coordinates", {p.location.x, p.location.y}}}},
                                   {"properties", p.properties}});
    std::ofstream out(path);
    if (!out) throw InputError("cannot write: " + path.string());
    out << doc.dump(2) << '\n';
}

void require_same_crs(const std::string& points_crs, const std::string& raster_crs) {
    if (!points_crs.empty() && !raster_crs.empty() && points_crs != raster_crs)
        throw InputError("CRS mismatch: points are " + points_crs + " but the raster is " + raster_crs);
}

}  // namespace geofeat
