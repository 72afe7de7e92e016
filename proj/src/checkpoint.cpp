#include <cstdio>
#include <cstring>
#include <fstream>

#include <unistd.h>

#include "geofeat/error.hpp"
#include "geofeat/inference.hpp"

namespace geofeat {
namespace {

/// Writes bytes to `target` via a temporary file, fsync and rename.
void atomic_write(const std::filesystem::path& target, const std::string& head, const void* body, std::size_t body_len) {
    const std::filesystem::path tmp = target.string() + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw ResumableError("cannot write checkpoint file " + tmp.string());
    bool ok = std::fwrite(head.data(), 1, head.size(), f) == head.size();
    if (ok && body_len) ok = std::fwrite(body, 1, body_len, f) == body_len;
    ok = ok && std::fflush(f) == 0 && ::fsync(fileno(f)) == 0;
    ok = (std::fclose(f) == 0) && ok;
    if (!ok) {
        std::error_code ec;
        std::filesystem::remove(tmp, ec);
        throw ResumableError("failed writing checkpoint file " + target.string() + " (disk full?)");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, target, ec);
    if (ec) throw ResumableError("cannot commit checkpoint file " + target.string() + ": " + ec.message());
}

}  // namespace

nlohmann::json CheckpointManifest::to_json() const {
    return {{"format", "geofeat-checkpoint/1"},
            {"model_fingerprint", model_fingerprint},
            {"plan_fingerprint", plan_fingerprint},
            {"params", params},
            {"batch_size", batch_size},
            {"tile_count", tile_count},
            {"completed", std::vector<int>(completed.begin(), completed.end())}};
}

CheckpointManifest CheckpointManifest::from_json(const nlohmann::json& j) {
    CheckpointManifest m;
    m.model_fingerprint = j.at("model_fingerprint").get<std::string>();
    m.plan_fingerprint = j.at("plan_fingerprint").get<std::string>();
    m.params = j.at("params");
    m.batch_size = j.at("batch_size").get<int>();
    m.tile_count = j.at("tile_count").get<std::size_t>();
    for (int id : j.at("completed").get<std::vector<int>>()) m.completed.insert(id);
    if (m.batch_size < 1) throw InputError("manifest has invalid batch size");
    for (int id : m.completed)
        if (id < 0 || id >= m.batch_count()) throw InputError("manifest lists unknown batch " + std::to_string(id));
    return m;
}

CheckpointManifest load_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    std::ifstream in(path);
    if (!in) throw InputError("no checkpoint manifest in " + dir.string());
    try {
        return CheckpointManifest::from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed checkpoint manifest " + path.string() + ": " + e.what());
    }
}

void save_manifest(const std::filesystem::path& dir, const CheckpointManifest& m) {
    atomic_write(dir / "manifest.json", m.to_json().dump(2) + "\n", nullptr, 0);
}

std::filesystem::path batch_path(const std::filesystem::path& dir, int batch_id) {
    return dir / ("batch_" + std::to_string(batch_id) + ".bin");
}

void write_batch(const std::filesystem::path& dir, int batch_id, const std::vector<PatchFeatureGrid>& grids) {
    nlohmann::json header{{"batch_id", batch_id}, {"tiles", nlohmann::json::array()}, {"grid", 0}, {"dim", 0}};
    std::vector<float> body;
    for (const auto& g : grids) {
        header["tiles"].push_back({g.offset.col_off, g.offset.row_off});
        header["grid"] = g.grid;
        header["dim"] = g.dim;
        // token-major: all features of token 0, then token 1, ...
        for (Eigen::Index t = 0; t < g.features.rows(); ++t)
            for (Eigen::Index d = 0; d < g.features.cols(); ++d) body.push_back(g.features(t, d));
    }
    const std::string text = header.dump();
    std::string head(4, '\0');
    const auto len = static_cast<std::uint32_t>(text.size());
    std::memcpy(head.data(), &len, 4);
    head += text;
    atomic_write(batch_path(dir, batch_id), head, body.data(), body.size() * sizeof(float));
}

std::vector<PatchFeatureGrid> read_batch(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("missing batch file " + path.string());
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    std::string text(len, '\0');
    in.read(text.data(), len);
    if (!in) throw InputError("truncated batch file " + path.string());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed batch header in " + path.string() + ": " + e.what());
    }
    const int grid = header.at("grid");
    const int dim = header.at("dim");
    std::vector<PatchFeatureGrid> out;
    std::vector<float> buf(std::size_t(grid) * grid * dim);
    for (const auto& t : header.at("tiles")) {
        PatchFeatureGrid g;
        g.offset = {t.at(0).get<int>(), t.at(1).get<int>()};
        g.grid = grid;
        g.dim = dim;
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!in) throw InputError("truncated batch file " + path.string());
        g.features = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            buf.data(), std::int64_t(grid) * grid, dim);
        out.push_back(std::move(g));
    }
    return out;
}

void remove_checkpoint(const std::filesystem::path& dir) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) return;
    for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
        const std::string name = entry.path().filename().string();
        const bool ours = name.rfind("batch_", 0) == 0 || name.rfind("manifest.json", 0) == 0 ||
                          name.rfind("pca_input", 0) == 0;
        if (ours) std::filesystem::remove(entry.path(), ec);
    }
    if (std::filesystem::is_empty(dir, ec)) std::filesystem::remove(dir, ec);
}

}  // namespace geofeat
