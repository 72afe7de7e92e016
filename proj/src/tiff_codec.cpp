/**
 * @file tiff_codec.cpp
 * @brief TIFF/GeoTIFF parsing and tiled writing on top of zlib.
 */
#include "tiff_codec.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

#include <zlib.h>

#include "geofeat/error.hpp"

namespace geofeat::detail {
namespace {

enum Tag : std::uint16_t {
    kImageWidth = 256,
    kImageLength = 257,
    kBitsPerSample = 258,
    kCompression = 259,
    kPhotometric = 262,
    kStripOffsets = 273,
    kSamplesPerPixel = 277,
    kRowsPerStrip = 278,
    kStripByteCounts = 279,
    kPlanarConfig = 284,
    kPredictor = 317,
    kTileWidth = 322,
    kTileLength = 323,
    kTileOffsets = 324,
    kTileByteCounts = 325,
    kExtraSamples = 338,
    kSampleFormat = 339,
    kModelPixelScale = 33550,
    kModelTiepoint = 33922,
    kModelTransformation = 34264,
    kGeoKeyDirectory = 34735,
    kGdalNodata = 42113,
};

enum FieldType : std::uint16_t {
    kByte = 1,
    kAscii = 2,
    kShort = 3,
    kLong = 4,
    kRational = 5,
    kSByte = 6,
    kUndefined = 7,
    kSShort = 8,
    kSLong = 9,
    kSRational = 10,
    kFloat = 11,
    kDouble = 12,
};

std::size_t field_size(std::uint16_t type) {
    switch (type) {
        case kByte: case kAscii: case kSByte: case kUndefined: return 1;
        case kShort: case kSShort: return 2;
        case kLong: case kSLong: case kFloat: return 4;
        case kRational: case kSRational: case kDouble: return 8;
        default: return 0;
    }
}

constexpr std::uint16_t kGeoKeyModelType = 1024;
constexpr std::uint16_t kGeoKeyRasterType = 1025;
constexpr std::uint16_t kGeoKeyGeographicType = 2048;
constexpr std::uint16_t kGeoKeyProjectedType = 3072;

/// Random-access view of a file in its declared byte order.
class ByteReader {
public:
    ByteReader(const std::filesystem::path& path, bool big_endian) : in_(path, std::ios::binary), big_(big_endian) {
        if (!in_) throw InputError("not found: " + path.string());
        in_.seekg(0, std::ios::end);
        size_ = static_cast<std::size_t>(in_.tellg());
    }

    std::vector<std::uint8_t> bytes(std::size_t off, std::size_t len) {
        if (off + len > size_) throw InputError("truncated TIFF file");
        std::vector<std::uint8_t> out(len);
        in_.seekg(static_cast<std::streamoff>(off));
        in_.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(len));
        if (!in_) throw InputError("truncated TIFF file");
        return out;
    }

    template <class T>
    T get(std::size_t off) {
        return decode<T>(bytes(off, sizeof(T)).data());
    }

    template <class T>
    T decode(const std::uint8_t* p) const {
        T v;
        std::memcpy(&v, p, sizeof(T));
        if (big_) {
            std::array<std::uint8_t, sizeof(T)> b;
            std::memcpy(b.data(), &v, sizeof(T));
            std::reverse(b.begin(), b.end());
            std::memcpy(&v, b.data(), sizeof(T));
        }
        return v;
    }

private:
    std::ifstream in_;
    bool big_;
    std::size_t size_ = 0;
};

struct Entry {
    std::uint16_t type = 0;
    std::uint32_t count = 0;
    std::size_t value_offset = 0;  ///< absolute offset of the value bytes
};

std::vector<double> entry_numbers(ByteReader& r, const Entry& e) {
    const std::size_t sz = field_size(e.type);
    const std::vector<std::uint8_t> raw = r.bytes(e.value_offset, sz * e.count);
    std::vector<double> out;
    out.reserve(e.count);
    for (std::uint32_t i = 0; i < e.count; ++i) {
        const std::uint8_t* p = raw.data() + i * sz;
        switch (e.type) {
            case kByte: case kUndefined: out.push_back(r.decode<std::uint8_t>(p)); break;
            case kSByte: out.push_back(r.decode<std::int8_t>(p)); break;
            case kShort: out.push_back(r.decode<std::uint16_t>(p)); break;
            case kSShort: out.push_back(r.decode<std::int16_t>(p)); break;
            case kLong: out.push_back(r.decode<std::uint32_t>(p)); break;
            case kSLong: out.push_back(r.decode<std::int32_t>(p)); break;
            case kFloat: out.push_back(r.decode<float>(p)); break;
            case kDouble: out.push_back(r.decode<double>(p)); break;
            case kRational:
                out.push_back(double(r.decode<std::uint32_t>(p)) / r.decode<std::uint32_t>(p + 4));
                break;
            case kSRational:
                out.push_back(double(r.decode<std::int32_t>(p)) / r.decode<std::int32_t>(p + 4));
                break;
            default: throw InputError("unsupported TIFF field type " + std::to_string(e.type));
        }
    }
    return out;
}

std::string entry_ascii(ByteReader& r, const Entry& e) {
    const std::vector<std::uint8_t> raw = r.bytes(e.value_offset, e.count);
    std::string s(raw.begin(), raw.end());
    while (!s.empty() && (s.back() == '\0' || s.back() == ' ')) s.pop_back();
    return s;
}

SampleType sample_type_of(int bits, int format) {
    if (format == 1 && bits == 8) return SampleType::UInt8;
    if (format == 1 && bits == 16) return SampleType::UInt16;
    if (format == 2 && bits == 16) return SampleType::Int16;
    if (format == 3 && bits == 32) return SampleType::Float32;
    throw InputError("unsupported sample type (bits " + std::to_string(bits) + ", format " +
                     std::to_string(format) + ")");
}

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

std::size_t sample_size_bytes(SampleType t) {
    switch (t) {
        case SampleType::UInt8: return 1;
        case SampleType::UInt16: case SampleType::Int16: return 2;
        case SampleType::Float32: return 4;
    }
    return 0;
}

RasterDataset read_tiff_header(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) throw InputError("not found: " + path.string());
    std::array<char, 2> order{};
    {
        std::ifstream probe(path, std::ios::binary);
        probe.read(order.data(), 2);
        if (!probe) throw InputError("not a TIFF file: " + path.string());
    }
    bool big = false;
    if (order[0] == 'I' && order[1] == 'I') big = false;
    else if (order[0] == 'M' && order[1] == 'M') big = true;
    else throw InputError("not a TIFF file: " + path.string());
    ByteReader r(path, big);
    const auto magic = r.get<std::uint16_t>(2);
    if (magic == 43) throw InputError("BigTIFF is not supported: " + path.string());
    if (magic != 42) throw InputError("not a TIFF file: " + path.string());
    const std::size_t ifd = r.get<std::uint32_t>(4);
    const auto n_entries = r.get<std::uint16_t>(ifd);

    std::map<std::uint16_t, Entry> entries;
    for (std::uint16_t i = 0; i < n_entries; ++i) {
        const std::size_t eoff = ifd + 2 + std::size_t(i) * 12;
        Entry e;
        const auto tag = r.get<std::uint16_t>(eoff);
        e.type = r.get<std::uint16_t>(eoff + 2);
        e.count = r.get<std::uint32_t>(eoff + 4);
        const std::size_t sz = field_size(e.type);
        if (sz == 0) continue;
        e.value_offset = sz * e.count <= 4 ? eoff + 8 : r.get<std::uint32_t>(eoff + 8);
        entries[tag] = e;
    }
    auto has = [&](std::uint16_t t) { return entries.count(t) > 0; };
    auto nums = [&](std::uint16_t t) { return entry_numbers(r, entries.at(t)); };
    auto scalar = [&](std::uint16_t t, double fallback) {
        return has(t) ? nums(t).at(0) : fallback;
    };

    RasterDataset ds;
    ds.path = path;
    if (!has(kImageWidth) || !has(kImageLength)) throw InputError("TIFF missing image dimensions");
    ds.width = static_cast<int>(scalar(kImageWidth, 0));
    ds.height = static_cast<int>(scalar(kImageLength, 0));
    if (ds.width < 1 || ds.height < 1) throw InputError("TIFF has empty extent");

    auto layout = std::make_shared<TiffLayout>();
    layout->big_endian = big;
    layout->samples_per_pixel = static_cast<int>(scalar(kSamplesPerPixel, 1));
    ds.band_count = layout->samples_per_pixel;

    std::vector<double> bits = has(kBitsPerSample) ? nums(kBitsPerSample) : std::vector<double>{1};
    std::vector<double> fmt = has(kSampleFormat) ? nums(kSampleFormat) : std::vector<double>{1};
    for (double b : bits)
        if (b != bits[0]) throw InputError("unsupported sample type (mixed bit depths)");
    for (double f : fmt)
        if (f != fmt[0]) throw InputError("unsupported sample type (mixed formats)");
    ds.sample_type = sample_type_of(static_cast<int>(bits[0]), static_cast<int>(fmt[0]));
    layout->bytes_per_sample = static_cast<int>(sample_size_bytes(ds.sample_type));

    layout->compression = static_cast<int>(scalar(kCompression, 1));
    if (layout->compression != 1 && layout->compression != 8 && layout->compression != 32946)
        throw InputError("unsupported TIFF compression " + std::to_string(layout->compression));
    if (scalar(kPredictor, 1) != 1) throw InputError("unsupported TIFF predictor");
    layout->planar_separate = scalar(kPlanarConfig, 1) == 2 && ds.band_count > 1;

    if (has(kTileWidth)) {
        layout->tiled = true;
        layout->chunk_width = static_cast<int>(scalar(kTileWidth, 0));
        layout->chunk_height = static_cast<int>(scalar(kTileLength, 0));
        if (!has(kTileOffsets) || !has(kTileByteCounts)) throw InputError("TIFF missing tile table");
        for (double v : nums(kTileOffsets)) layout->offsets.push_back(std::uint64_t(v));
        for (double v : nums(kTileByteCounts)) layout->byte_counts.push_back(std::uint64_t(v));
    } else {
        layout->chunk_width = ds.width;
        layout->chunk_height = static_cast<int>(std::min<double>(scalar(kRowsPerStrip, ds.height), ds.height));
        if (!has(kStripOffsets) || !has(kStripByteCounts)) throw InputError("TIFF missing strip table");
        for (double v : nums(kStripOffsets)) layout->offsets.push_back(std::uint64_t(v));
        for (double v : nums(kStripByteCounts)) layout->byte_counts.push_back(std::uint64_t(v));
    }
    if (layout->chunk_width < 1 || layout->chunk_height < 1) throw InputError("TIFF has invalid chunk size");
    const std::size_t expected = std::size_t(layout->chunks_across(ds.width)) *
                                 layout->chunks_down(ds.height) *
                                 (layout->planar_separate ? ds.band_count : 1);
    if (layout->offsets.size() != expected || layout->byte_counts.size() != expected)
        throw InputError("TIFF chunk table has wrong length");

    // Georeferencing.
    GeoTransform gt{0.0, 0.0, 1.0, 1.0, 0.0, 0.0};
    if (has(kModelTransformation)) {
        auto m = nums(kModelTransformation);
        if (m.size() < 16) throw InputError("malformed ModelTransformation tag");
        gt = {m[3], m[7], m[0], m[5], m[1], m[4]};
    } else if (has(kModelTiepoint) && has(kModelPixelScale)) {
        auto tp = nums(kModelTiepoint);
        auto sc = nums(kModelPixelScale);
        if (tp.size() < 6 || sc.size() < 2) throw InputError("malformed georeferencing tags");
        gt.pixel_width = sc[0];
        gt.pixel_height = -sc[1];
        gt.origin_x = tp[3] - tp[0] * sc[0];
        gt.origin_y = tp[4] + tp[1] * sc[1];
    }
    if (has(kGeoKeyDirectory)) {
        auto keys = nums(kGeoKeyDirectory);
        const std::size_t nkeys = keys.size() >= 4 ? std::size_t(keys[3]) : 0;
        int epsg = 0;
        for (std::size_t i = 0; i < nkeys && 4 + 4 * i + 3 < keys.size(); ++i) {
            const auto id = static_cast<std::uint16_t>(keys[4 + 4 * i]);
            const auto loc = keys[4 + 4 * i + 1];
            const auto value = keys[4 + 4 * i + 3];
            if (loc != 0) continue;
            if (id == kGeoKeyProjectedType || (id == kGeoKeyGeographicType && epsg == 0))
                epsg = static_cast<int>(value);
            if (id == kGeoKeyRasterType && value == 2) {
                // PixelIsPoint: tie point refers to pixel centres.
                gt.origin_x -= 0.5 * gt.pixel_width;
                gt.origin_y -= 0.5 * gt.pixel_height;
            }
        }
        if (epsg > 0 && epsg != 32767) ds.crs_id = "EPSG:" + std::to_string(epsg);
    }
    validate_geotransform(gt);
    ds.geotransform = gt;

    if (has(kGdalNodata)) {
        const std::string s = entry_ascii(r, entries.at(kGdalNodata));
        if (s == "nan" || s == "NaN" || s == "-nan") {
            ds.nodata = std::numeric_limits<double>::quiet_NaN();
        } else {
            try {
                ds.nodata = std::stod(s);
            } catch (const std::exception&) {
                throw InputError("malformed nodata tag '" + s + "'");
            }
        }
    }
    ds.layout = std::move(layout);
    return ds;
}

std::vector<std::uint8_t> read_chunk(std::ifstream& in, const RasterDataset& ds, std::size_t chunk) {
    const TiffLayout& L = *ds.layout;
    const std::size_t chunks_across = L.chunks_across(ds.width);
    const std::size_t chunk_in_band = chunk % (chunks_across * L.chunks_down(ds.height));
    const std::size_t chunk_row = chunk_in_band / chunks_across;
    std::size_t rows = L.chunk_height;
    if (!L.tiled) rows = std::min<std::size_t>(rows, ds.height - chunk_row * L.chunk_height);
    const std::size_t spp = L.planar_separate ? 1 : L.samples_per_pixel;
    const std::size_t raw_size = std::size_t(L.chunk_width) * rows * spp * L.bytes_per_sample;

    std::vector<std::uint8_t> stored(L.byte_counts.at(chunk));
    in.seekg(static_cast<std::streamoff>(L.offsets.at(chunk)));
    in.read(reinterpret_cast<char*>(stored.data()), static_cast<std::streamsize>(stored.size()));
    if (!in) throw InputError("truncated TIFF data in " + ds.path.string());

    if (L.compression == 1) {
        if (stored.size() < raw_size) throw InputError("short TIFF chunk in " + ds.path.string());
        stored.resize(raw_size);
        return stored;
    }
    std::vector<std::uint8_t> raw(raw_size);
    uLongf dest_len = static_cast<uLongf>(raw_size);
    const int rc = uncompress(raw.data(), &dest_len, stored.data(), static_cast<uLong>(stored.size()));
    if (rc != Z_OK && rc != Z_BUF_ERROR) throw InputError("corrupt DEFLATE chunk in " + ds.path.string());
    if (dest_len != raw_size) throw InputError("short DEFLATE chunk in " + ds.path.string());
    return raw;
}

namespace {

class TiffFileWriter {
public:
    explicit TiffFileWriter(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw InputError("cannot write: " + path.string());
    }

    std::uint64_t tell() { return static_cast<std::uint64_t>(out_.tellp()); }

    void write(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!out_) throw ResumableError("write failed (disk full?)");
    }

    template <class T>
    void put(T v) { write(&v, sizeof(T)); }

    void pad_to_word() {
        if (tell() % 2) put<std::uint8_t>(0);
    }

    void seek(std::uint64_t pos) { out_.seekp(static_cast<std::streamoff>(pos)); }

    void close() {
        out_.flush();
        if (!out_) throw ResumableError("write failed (disk full?)");
        out_.close();
    }

private:
    std::ofstream out_;
};

struct OutEntry {
    std::uint16_t tag;
    std::uint16_t type;
    std::vector<std::uint8_t> bytes;  ///< little-endian value bytes
    std::uint32_t count;
};

template <class T>
OutEntry make_entry(std::uint16_t tag, std::uint16_t type, const std::vector<T>& values) {
    OutEntry e{tag, type, {}, static_cast<std::uint32_t>(values.size())};
    e.bytes.resize(values.size() * sizeof(T));
    std::memcpy(e.bytes.data(), values.data(), e.bytes.size());
    return e;
}

OutEntry make_ascii(std::uint16_t tag, const std::string& s) {
    OutEntry e{tag, kAscii, std::vector<std::uint8_t>(s.begin(), s.end()), 0};
    e.bytes.push_back(0);
    e.count = static_cast<std::uint32_t>(e.bytes.size());
    return e;
}

void encode_samples(const float* src, std::size_t n, SampleType type,
                    const std::optional<double>& nodata, std::vector<std::uint8_t>& dst) {
    const std::size_t bps = sample_size_bytes(type);
    dst.resize(n * bps);
    const double fill = nodata && !std::isnan(*nodata) ? *nodata : 0.0;
    auto integral = [&](double lo, double hi, auto tag) {
        using T = decltype(tag);
        for (std::size_t i = 0; i < n; ++i) {
            double v = std::isnan(src[i]) ? fill : std::round(double(src[i]));
            v = std::clamp(v, lo, hi);
            T t = static_cast<T>(v);
            std::memcpy(dst.data() + i * sizeof(T), &t, sizeof(T));
        }
    };
    switch (type) {
        case SampleType::UInt8: integral(0.0, 255.0, std::uint8_t{}); break;
        case SampleType::UInt16: integral(0.0, 65535.0, std::uint16_t{}); break;
        case SampleType::Int16: integral(-32768.0, 32767.0, std::int16_t{}); break;
        case SampleType::Float32:
            for (std::size_t i = 0; i < n; ++i) {
                float v = src[i];
                if (std::isnan(v) && nodata && !std::isnan(*nodata)) v = static_cast<float>(*nodata);
                std::memcpy(dst.data() + i * 4, &v, 4);
            }
            break;
    }
}

}  // namespace

void write_tiff(const std::filesystem::path& path, const TiffWriteRequest& req, const PixelSource& source) {
    static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");
    const WriteOptions& opt = req.options;
    if (req.width < 1 || req.height < 1 || req.band_count < 1)
        throw InputError("raster dimensions must be positive");
    if (req.band_count > 65535) throw InputError("too many bands for TIFF");
    const int ts = opt.tile_size;
    if (ts < 16 || ts % 16 != 0) throw InputError("tile size must be a positive multiple of 16");

    const int across = (req.width + ts - 1) / ts;
    const int down = (req.height + ts - 1) / ts;
    const std::size_t tiles_per_band = std::size_t(across) * down;
    std::vector<std::uint32_t> offsets(tiles_per_band * req.band_count, 0);
    std::vector<std::uint32_t> counts(offsets.size(), 0);

    TiffFileWriter w(path);
    w.write("II", 2);
    w.put<std::uint16_t>(42);
    w.put<std::uint32_t>(0);  // IFD offset patched at the end

    constexpr std::uint64_t kLimit = std::numeric_limits<std::uint32_t>::max();
    std::vector<float> tile(std::size_t(ts) * ts);
    std::vector<std::uint8_t> encoded;
    std::vector<std::uint8_t> compressed;
    for (int ty = 0; ty < down; ++ty) {
        for (int tx = 0; tx < across; ++tx) {
            Window win{tx * ts, ty * ts, std::min(ts, req.width - tx * ts), std::min(ts, req.height - ty * ts)};
            const Eigen::MatrixXf block = source(win);
            if (block.rows() != win.pixel_count() || block.cols() != req.band_count)
                throw InputError("dimension mismatch: pixel source returned " + std::to_string(block.rows()) +
                                 "x" + std::to_string(block.cols()) + " for a " + std::to_string(win.width) +
                                 "x" + std::to_string(win.height) + " window of " +
                                 std::to_string(req.band_count) + " bands");
            for (int b = 0; b < req.band_count; ++b) {
                const float pad = (opt.nodata && opt.sample_type != SampleType::Float32)
                                      ? static_cast<float>(*opt.nodata) : 0.0f;
                std::fill(tile.begin(), tile.end(), pad);
                for (int r = 0; r < win.height; ++r)
                    for (int c = 0; c < win.width; ++c)
                        tile[std::size_t(r) * ts + c] = block(std::int64_t(r) * win.width + c, b);
                encode_samples(tile.data(), tile.size(), opt.sample_type, opt.nodata, encoded);
                const std::vector<std::uint8_t>* payload = &encoded;
                if (opt.compression == Compression::Deflate) {
                    uLongf len = compressBound(static_cast<uLong>(encoded.size()));
                    compressed.resize(len);
                    if (compress2(compressed.data(), &len, encoded.data(), static_cast<uLong>(encoded.size()),
                                  Z_DEFAULT_COMPRESSION) != Z_OK)
                        throw Error("DEFLATE compression failed");
                    compressed.resize(len);
                    payload = &compressed;
                }
                const std::uint64_t pos = w.tell();
                if (pos + payload->size() > kLimit)
                    throw InputError("output exceeds classic TIFF 4 GiB limit: " + path.string());
                const std::size_t idx = std::size_t(b) * tiles_per_band + std::size_t(ty) * across + tx;
                offsets[idx] = static_cast<std::uint32_t>(pos);
                counts[idx] = static_cast<std::uint32_t>(payload->size());
                w.write(payload->data(), payload->size());
            }
        }
    }

    const int nb = req.band_count;
    std::uint16_t bits = static_cast<std::uint16_t>(8 * sample_size_bytes(opt.sample_type));
    std::uint16_t fmt = opt.sample_type == SampleType::Float32 ? 3 : (opt.sample_type == SampleType::Int16 ? 2 : 1);

    std::vector<OutEntry> entries;
    entries.push_back(make_entry<std::uint32_t>(kImageWidth, kLong, {std::uint32_t(req.width)}));
    entries.push_back(make_entry<std::uint32_t>(kImageLength, kLong, {std::uint32_t(req.height)}));
    entries.push_back(make_entry<std::uint16_t>(kBitsPerSample, kShort, std::vector<std::uint16_t>(nb, bits)));
    entries.push_back(make_entry<std::uint16_t>(kCompression, kShort,
                                                {std::uint16_t(opt.compression == Compression::Deflate ? 8 : 1)}));
    entries.push_back(make_entry<std::uint16_t>(kPhotometric, kShort, {1}));
    entries.push_back(make_entry<std::uint16_t>(kSamplesPerPixel, kShort, {std::uint16_t(nb)}));
    entries.push_back(make_entry<std::uint16_t>(kPlanarConfig, kShort, {2}));
    entries.push_back(make_entry<std::uint32_t>(kTileWidth, kLong, {std::uint32_t(ts)}));
    entries.push_back(make_entry<std::uint32_t>(kTileLength, kLong, {std::uint32_t(ts)}));
    entries.push_back(make_entry<std::uint32_t>(kTileOffsets, kLong, offsets));
    entries.push_back(make_entry<std::uint32_t>(kTileByteCounts, kLong, counts));
    if (nb > 1)
        entries.push_back(make_entry<std::uint16_t>(kExtraSamples, kShort, std::vector<std::uint16_t>(nb - 1, 0)));
    entries.push_back(make_entry<std::uint16_t>(kSampleFormat, kShort, std::vector<std::uint16_t>(nb, fmt)));

    const auto& a = req.affine;
    const bool rotated = a[2] != 0.0 || a[4] != 0.0;
    if (rotated) {
        entries.push_back(make_entry<double>(kModelTransformation, kDouble,
                                             {a[1], a[2], 0, a[0], a[4], a[5], 0, a[3], 0, 0, 0, 0, 0, 0, 0, 1}));
    } else {
        entries.push_back(make_entry<double>(kModelPixelScale, kDouble, {a[1], -a[5], 0.0}));
        entries.push_back(make_entry<double>(kModelTiepoint, kDouble, {0, 0, 0, a[0], a[3], 0}));
    }
    std::vector<std::uint16_t> keys{1, 1, 0, 0};
    auto add_key = [&](std::uint16_t id, std::uint16_t value) {
        keys.insert(keys.end(), {id, 0, 1, value});
        ++keys[3];
    };
    int epsg = 0;
    if (!req.crs_id.empty()) {
        const std::string prefix = "EPSG:";
        if (req.crs_id.rfind(prefix, 0) != 0) throw InputError("unsupported CRS id '" + req.crs_id + "'");
        try {
            epsg = std::stoi(req.crs_id.substr(prefix.size()));
        } catch (const std::exception&) {
            throw InputError("unsupported CRS id '" + req.crs_id + "'");
        }
        if (epsg <= 0 || epsg > 65535) throw InputError("unsupported CRS id '" + req.crs_id + "'");
    }
    const bool geographic = epsg >= 4000 && epsg < 5000;
    if (epsg) add_key(kGeoKeyModelType, geographic ? 2 : 1);
    add_key(kGeoKeyRasterType, 1);
    if (epsg) add_key(geographic ? kGeoKeyGeographicType : kGeoKeyProjectedType, std::uint16_t(epsg));
    entries.push_back(make_entry<std::uint16_t>(kGeoKeyDirectory, kShort, keys));
    if (opt.nodata) entries.push_back(make_ascii(kGdalNodata, format_number(*opt.nodata)));

    std::sort(entries.begin(), entries.end(), [](const OutEntry& l, const OutEntry& r) { return l.tag < r.tag; });

    // Out-of-line values first, then the IFD.
    w.pad_to_word();
    std::vector<std::uint32_t> value_offsets(entries.size(), 0);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].bytes.size() > 4) {
            w.pad_to_word();
            value_offsets[i] = static_cast<std::uint32_t>(w.tell());
            w.write(entries[i].bytes.data(), entries[i].bytes.size());
        }
    }
    w.pad_to_word();
    const std::uint64_t ifd_pos = w.tell();
    if (ifd_pos + 6 + 12 * entries.size() > kLimit)
        throw InputError("output exceeds classic TIFF 4 GiB limit: " + path.string());
    w.put<std::uint16_t>(static_cast<std::uint16_t>(entries.size()));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const OutEntry& e = entries[i];
        w.put<std::uint16_t>(e.tag);
        w.put<std::uint16_t>(e.type);
        w.put<std::uint32_t>(e.count);
        std::array<std::uint8_t, 4> inline_value{0, 0, 0, 0};
        if (e.bytes.size() <= 4) std::memcpy(inline_value.data(), e.bytes.data(), e.bytes.size());
        else std::memcpy(inline_value.data(), &value_offsets[i], 4);
        w.write(inline_value.data(), 4);
    }
    w.put<std::uint32_t>(0);
    w.seek(4);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ifd_pos));
    w.close();
}

}  // namespace geofeat::detail
