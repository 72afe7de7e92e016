#include "geofeat/analysis_io.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <random>

#include "geofeat/error.hpp"

namespace geofeat {

PixelSample sample_pixels(const RasterDataset& ds, std::int64_t n, std::uint64_t seed) {
    if (n < 1) throw InputError("sample size must be >= 1");
    std::vector<std::int64_t> valid;
    for (const Window& strip : row_strips(ds, 256)) {
        const PixelBlock blk = read_window(ds, strip);
        const std::int64_t first = std::int64_t(strip.row_off) * ds.width;
        for (Eigen::Index i = 0; i < blk.values.rows(); ++i)
            if (!blk.values.row(i).array().isNaN().any()) valid.push_back(first + i);
    }
    if (valid.empty()) throw InputError("raster is entirely nodata: " + ds.path.string());

    PixelSample s;
    s.seed = seed;
    if (std::int64_t(valid.size()) <= n) {
        s.cells = std::move(valid);
    } else {
        // Partial Fisher-Yates over the valid cell list.
        std::mt19937_64 rng(seed);
        for (std::int64_t i = 0; i < n; ++i) {
            std::uniform_int_distribution<std::int64_t> pick(i, std::int64_t(valid.size()) - 1);
            std::swap(valid[i], valid[pick(rng)]);
        }
        s.cells.assign(valid.begin(), valid.begin() + n);
        std::sort(s.cells.begin(), s.cells.end());
    }

    s.values.resize(std::int64_t(s.cells.size()), ds.band_count);
    auto it = s.cells.begin();
    std::int64_t row = 0;
    for (const Window& strip : row_strips(ds, 256)) {
        const std::int64_t first = std::int64_t(strip.row_off) * ds.width;
        const std::int64_t last = first + strip.pixel_count();
        if (it == s.cells.end()) break;
        if (*it >= last) continue;
        const PixelBlock blk = read_window(ds, strip);
        for (; it != s.cells.end() && *it < last; ++it) s.values.row(row++) = blk.values.row(*it - first).cast<double>();
    }
    return s;
}

PixelSource map_windows(const RasterDataset& in, std::function<Eigen::MatrixXf(const PixelBlock&)> fn) {
    return [&in, fn = std::move(fn)](const Window& w) { return fn(read_window(in, w)); };
}

void transform_raster_pca(const RasterDataset& in, const PcaModel<double>& model, const std::filesystem::path& out,
                          const WriteOptions& options) {
    if (model.input_dim() != in.band_count)
        throw InputError("dimension mismatch: PCA model expects " + std::to_string(model.input_dim()) +
                         " bands, raster has " + std::to_string(in.band_count));
    const RasterSpec spec{in.width, in.height, model.output_dim(), in.geotransform, in.crs_id};
    WriteOptions opt = options;
    opt.sample_type = SampleType::Float32;
    opt.nodata = std::numeric_limits<double>::quiet_NaN();
    write_raster(out, spec, map_windows(in, [&](const PixelBlock& blk) {
                     Eigen::MatrixXf y = model.transform(blk.values.cast<double>()).cast<float>();
                     for (Eigen::Index i = 0; i < y.rows(); ++i)
                         if (blk.values.row(i).array().isNaN().any())
                             y.row(i).setConstant(std::numeric_limits<float>::quiet_NaN());
                     return y;
                 }),
                 opt);
}

void predict_kmeans(const RasterDataset& in, const KMeansModel<double>& model, const std::filesystem::path& out,
                    Compression compression) {
    if (model.centroids.cols() != in.band_count)
        throw InputError("dimension mismatch: k-means model expects " + std::to_string(model.centroids.cols()) +
                         " bands, raster has " + std::to_string(in.band_count));
    WriteOptions opt;
    opt.compression = compression;
    opt.sample_type = SampleType::Int16;
    opt.nodata = kClusterNodata;
    const RasterSpec spec{in.width, in.height, 1, in.geotransform, in.crs_id};
    write_raster(out, spec, map_windows(in, [&](const PixelBlock& blk) {
                     Eigen::MatrixXf labels(blk.values.rows(), 1);
                     for (Eigen::Index i = 0; i < blk.values.rows(); ++i) {
                         const auto row = blk.values.row(i);
                         labels(i, 0) = row.array().isNaN().any()
                                            ? std::numeric_limits<float>::quiet_NaN()
                                            : float(model.predict_one(row.cast<double>()));
                     }
                     return labels;
                 }),
                 opt);
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> r(m.cols());
        for (Eigen::Index j = 0; j < m.cols(); ++j) r[j] = m(i, j);
        rows.push_back(r);
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    const Eigen::Index cols = rows.empty() ? 0 : Eigen::Index(rows[0].size());
    Eigen::MatrixXd m(Eigen::Index(rows.size()), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (Eigen::Index(rows[i].size()) != cols) throw InputError("ragged matrix in model file");
        for (Eigen::Index c = 0; c < cols; ++c) m(Eigen::Index(i), c) = rows[i][c];
    }
    return m;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

}  // namespace

nlohmann::json to_json(const PcaModel<double>& m) {
    return {{"type", "pca"},
            {"mean", to_std(m.mean)},
            {"components", matrix_json(m.components)},
            {"explained_variance", to_std(m.explained_variance)}};
}

PcaModel<double> pca_from_json(const nlohmann::json& j) {
    try {
        if (j.at("type") != "pca") throw InputError("model file is not a PCA model");
        PcaModel<double> m;
        m.mean = vector_from_json(j.at("mean"));
        m.components = matrix_from_json(j.at("components"));
        m.explained_variance = vector_from_json(j.at("explained_variance"));
        if (m.components.cols() != m.mean.size() || m.components.rows() != m.explained_variance.size())
            throw InputError("inconsistent PCA model shapes");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed PCA model: ") + e.what());
    }
}

nlohmann::json to_json(const KMeansModel<double>& m) {
    return {{"type", "kmeans"},         {"k", m.k},
            {"centroids", matrix_json(m.centroids)}, {"inertia", m.inertia},
            {"seed", m.seed},           {"iterations", m.iterations}};
}

KMeansModel<double> kmeans_from_json(const nlohmann::json& j) {
    try {
        if (j.at("type") != "kmeans") throw InputError("model file is not a k-means model");
        KMeansModel<double> m;
        m.k = j.at("k");
        m.centroids = matrix_from_json(j.at("centroids"));
        m.inertia = j.at("inertia");
        m.seed = j.at("seed");
        m.iterations = j.value("iterations", 0);
        if (m.centroids.rows() != m.k) throw InputError("k-means model has wrong centroid count");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed k-means model: ") + e.what());
    }
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("not found: " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed JSON " + path.string() + ": " + e.what());
    }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write: " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw ResumableError("write failed: " + path.string());
}

}  // namespace geofeat
