#include "geofeat/raster_io.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <unordered_set>

#include "geofeat/error.hpp"
#include "tiff_codec.hpp"

namespace geofeat {

GeoPoint geo_of_pixel(const GeoTransform& gt, double col, double row) {
    return {gt.origin_x + col * gt.pixel_width + row * gt.row_rotation,
            gt.origin_y + col * gt.col_rotation + row * gt.pixel_height};
}

PixelIndex pixel_of_geo(const GeoTransform& gt, double x, double y, std::int64_t width, std::int64_t height) {
    const double fc = (x - gt.origin_x) / gt.pixel_width;
    const double fr = (y - gt.origin_y) / gt.pixel_height;
    const PixelIndex p{static_cast<std::int64_t>(std::floor(fc)), static_cast<std::int64_t>(std::floor(fr))};
    if (!std::isfinite(fc) || !std::isfinite(fr) || p.col < 0 || p.row < 0 || p.col >= width || p.row >= height)
        throw InputError("point (" + std::to_string(x) + ", " + std::to_string(y) + ") is outside the raster extent");
    return p;
}

void validate_geotransform(const GeoTransform& gt) {
    if (gt.row_rotation != 0.0 || gt.col_rotation != 0.0) throw InputError("rotated raster unsupported");
    if (gt.pixel_width == 0.0 || gt.pixel_height == 0.0 || !std::isfinite(gt.pixel_width) ||
        !std::isfinite(gt.pixel_height))
        throw InputError("degenerate geotransform (zero pixel size)");
}

const char* to_string(SampleType t) {
    switch (t) {
        case SampleType::UInt8: return "uint8";
        case SampleType::UInt16: return "uint16";
        case SampleType::Int16: return "int16";
        case SampleType::Float32: return "float32";
    }
    return "?";
}

RasterDataset open_raster(const std::filesystem::path& path) { return detail::read_tiff_header(path); }

namespace {

float decode_sample(const std::uint8_t* p, SampleType type, bool big_endian) {
    auto load = [&](auto tag) {
        using T = decltype(tag);
        std::array<std::uint8_t, sizeof(T)> b;
        std::memcpy(b.data(), p, sizeof(T));
        if (big_endian) std::reverse(b.begin(), b.end());
        T v;
        std::memcpy(&v, b.data(), sizeof(T));
        return static_cast<float>(v);
    };
    switch (type) {
        case SampleType::UInt8: return *p;
        case SampleType::UInt16: return load(std::uint16_t{});
        case SampleType::Int16: return load(std::int16_t{});
        case SampleType::Float32: return load(float{});
    }
    return 0.0f;
}

}  // namespace

PixelBlock read_window(const RasterDataset& ds, const Window& window, const std::vector<int>& bands_in) {
    if (!ds.layout) throw InputError("raster dataset is not open");
    if (window.width < 1 || window.height < 1 || window.col_off < 0 || window.row_off < 0 ||
        window.col_off + window.width > ds.width || window.row_off + window.height > ds.height)
        throw InputError("window out of bounds");
    std::vector<int> bands = bands_in;
    if (bands.empty())
        for (int b = 0; b < ds.band_count; ++b) bands.push_back(b);
    for (int b : bands)
        if (b < 0 || b >= ds.band_count) throw InputError("invalid band index " + std::to_string(b));

    const detail::TiffLayout& L = *ds.layout;
    PixelBlock block;
    block.window = window;
    block.values.resize(window.pixel_count(), static_cast<Eigen::Index>(bands.size()));

    std::ifstream in(ds.path, std::ios::binary);
    if (!in) throw InputError("not found: " + ds.path.string());

    const int across = L.chunks_across(ds.width);
    const std::size_t per_band = std::size_t(across) * L.chunks_down(ds.height);
    const int cy0 = window.row_off / L.chunk_height;
    const int cy1 = (window.row_off + window.height - 1) / L.chunk_height;
    const int cx0 = window.col_off / L.chunk_width;
    const int cx1 = (window.col_off + window.width - 1) / L.chunk_width;
    const std::size_t bps = L.bytes_per_sample;
    const bool map_nodata = ds.nodata && !std::isnan(*ds.nodata);
    const float nodata = map_nodata ? static_cast<float>(*ds.nodata) : 0.0f;
    const float nan = std::numeric_limits<float>::quiet_NaN();

    auto copy_chunk = [&](const std::vector<std::uint8_t>& raw, int cx, int cy, int sample, int stride,
                          Eigen::Index out_col) {
        const int x0 = std::max(window.col_off, cx * L.chunk_width);
        const int x1 = std::min(window.col_off + window.width, (cx + 1) * L.chunk_width);
        const int y0 = std::max(window.row_off, cy * L.chunk_height);
        const int y1 = std::min(window.row_off + window.height, (cy + 1) * L.chunk_height);
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                const std::size_t local = std::size_t(y - cy * L.chunk_height) * L.chunk_width + (x - cx * L.chunk_width);
                float v = decode_sample(raw.data() + (local * stride + sample) * bps, ds.sample_type, L.big_endian);
                if (map_nodata && v == nodata) v = nan;
                block.values(std::int64_t(y - window.row_off) * window.width + (x - window.col_off), out_col) = v;
            }
        }
    };

    for (int cy = cy0; cy <= cy1; ++cy) {
        for (int cx = cx0; cx <= cx1; ++cx) {
            const std::size_t idx = std::size_t(cy) * across + cx;
            if (L.planar_separate) {
                for (std::size_t i = 0; i < bands.size(); ++i) {
                    const auto raw = detail::read_chunk(in, ds, std::size_t(bands[i]) * per_band + idx);
                    copy_chunk(raw, cx, cy, 0, 1, static_cast<Eigen::Index>(i));
                }
            } else {
                const auto raw = detail::read_chunk(in, ds, idx);
                for (std::size_t i = 0; i < bands.size(); ++i)
                    copy_chunk(raw, cx, cy, bands[i], L.samples_per_pixel, static_cast<Eigen::Index>(i));
            }
        }
    }
    return block;
}

void write_raster(const std::filesystem::path& path, const RasterSpec& spec, const PixelSource& source,
                  const WriteOptions& options) {
    validate_geotransform(spec.geotransform);
    detail::TiffWriteRequest req;
    req.width = spec.width;
    req.height = spec.height;
    req.band_count = spec.band_count;
    const auto& g = spec.geotransform;
    req.affine = {g.origin_x, g.pixel_width, g.row_rotation, g.origin_y, g.col_rotation, g.pixel_height};
    req.crs_id = spec.crs_id;
    req.options = options;
    detail::write_tiff(path, req, source);
}

void write_raster(const std::filesystem::path& path, const RasterSpec& spec, const Eigen::MatrixXf& values,
                  const WriteOptions& options) {
    if (values.rows() != std::int64_t(spec.width) * spec.height || values.cols() != spec.band_count)
        throw InputError("dimension mismatch: values are " + std::to_string(values.rows()) + "x" +
                         std::to_string(values.cols()) + " for a " + std::to_string(spec.width) + "x" +
                         std::to_string(spec.height) + "x" + std::to_string(spec.band_count) + " raster");
    write_raster(
        path, spec,
        [&](const Window& w) {
            Eigen::MatrixXf out(w.pixel_count(), spec.band_count);
            for (int r = 0; r < w.height; ++r)
                out.middleRows(std::int64_t(r) * w.width, w.width) =
                    values.middleRows(std::int64_t(w.row_off + r) * spec.width + w.col_off, w.width);
            return out;
        },
        options);
}

std::vector<Window> row_strips(const RasterDataset& ds, int rows) {
    rows = std::max(1, rows);
    std::vector<Window> out;
    for (int r = 0; r < ds.height; r += rows) out.push_back({0, r, ds.width, std::min(rows, ds.height - r)});
    return out;
}

BandStats compute_band_stats(const RasterDataset& ds, std::int64_t max_samples, std::uint64_t seed) {
    if (max_samples < 2) throw InputError("max_samples must be at least 2");
    const std::int64_t total = std::int64_t(ds.width) * ds.height;
    std::vector<std::int64_t> picks;
    const bool all = total <= max_samples;
    if (!all) {
        // Floyd's algorithm: max_samples distinct indices, uniform.
        std::mt19937_64 rng(seed);
        std::unordered_set<std::int64_t> chosen;
        chosen.reserve(static_cast<std::size_t>(max_samples) * 2);
        for (std::int64_t j = total - max_samples; j < total; ++j) {
            std::uniform_int_distribution<std::int64_t> dist(0, j);
            const std::int64_t t = dist(rng);
            chosen.insert(chosen.count(t) ? j : t);
        }
        picks.assign(chosen.begin(), chosen.end());
        std::sort(picks.begin(), picks.end());
    }

    const int nb = ds.band_count;
    std::vector<std::int64_t> n(nb, 0);
    std::vector<double> mean(nb, 0.0), m2(nb, 0.0);
    std::vector<double> lo(nb, std::numeric_limits<double>::infinity());
    std::vector<double> hi(nb, -std::numeric_limits<double>::infinity());
    auto add = [&](const PixelBlock& blk, std::int64_t local) {
        for (int b = 0; b < nb; ++b) {
            const double v = blk.values(local, b);
            if (std::isnan(v)) continue;
            ++n[b];
            const double d = v - mean[b];
            mean[b] += d / double(n[b]);
            m2[b] += d * (v - mean[b]);
            lo[b] = std::min(lo[b], v);
            hi[b] = std::max(hi[b], v);
        }
    };

    auto it = picks.begin();
    for (const Window& strip : row_strips(ds, 256)) {
        const std::int64_t first = std::int64_t(strip.row_off) * ds.width;
        const std::int64_t last = first + strip.pixel_count();
        if (!all && (it == picks.end() || *it >= last)) continue;
        const PixelBlock blk = read_window(ds, strip);
        if (all) {
            for (std::int64_t i = 0; i < blk.values.rows(); ++i) add(blk, i);
        } else {
            for (; it != picks.end() && *it < last; ++it) add(blk, *it - first);
        }
    }

    BandStats s;
    for (int b = 0; b < nb; ++b) {
        if (n[b] == 0) throw InputError("band " + std::to_string(b) + " is entirely nodata");
        s.mean.push_back(mean[b]);
        s.std.push_back(std::sqrt(std::max(0.0, m2[b] / double(n[b]))));
        s.min.push_back(lo[b]);
        s.max.push_back(hi[b]);
    }
    return s;
}

}  // namespace geofeat

namespace geofeat {

RasterImage read_image(const RasterDataset& ds) {
    RasterImage img{{ds.width, ds.height, ds.band_count, ds.geotransform, ds.crs_id}, {}};
    img.values = read_window(ds, full_window(ds)).values;
    return img;
}

void write_image(const std::filesystem::path& path, const RasterImage& image, const WriteOptions& options) {
    write_raster(path, image.spec, image.values, options);
}

}  // namespace geofeat
