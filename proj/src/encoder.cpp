#include "geofeat/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "geofeat/error.hpp"

namespace geofeat {

void ViTConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("invalid ViT config: " + m); };
    if (patch_size < 1) fail("patch_size must be >= 1");
    if (sample_size < patch_size || sample_size % patch_size != 0) fail("sample_size must be a multiple of patch_size");
    if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) fail("embed_dim must be a positive multiple of heads");
    if (depth < 1) fail("depth must be >= 1");
    if (in_bands < 1) fail("in_bands must be >= 1");
    if (!(mlp_ratio > 0.0) || mlp_hidden() < 1) fail("mlp_ratio too small");
}

std::size_t Tensor::numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * std::size_t(b); });
}

std::vector<TensorSpec> tensor_layout(const ViTConfig& cfg) {
    cfg.validate();
    const int D = cfg.embed_dim;
    const int H = cfg.mlp_hidden();
    const int p = cfg.patch_size;
    std::vector<TensorSpec> specs;
    specs.push_back({"patch_embed.weight", {D, cfg.in_bands, p, p}});
    specs.push_back({"patch_embed.bias", {D}});
    specs.push_back({"pos_embed", {cfg.tokens(), D}});
    for (int b = 0; b < cfg.depth; ++b) {
        const std::string pre = "blocks." + std::to_string(b) + ".";
        specs.push_back({pre + "norm1.weight", {D}});
        specs.push_back({pre + "norm1.bias", {D}});
        for (const char* n : {"attn.q", "attn.k", "attn.v", "attn.proj"}) {
            specs.push_back({pre + n + ".weight", {D, D}});
            specs.push_back({pre + n + ".bias", {D}});
        }
        specs.push_back({pre + "norm2.weight", {D}});
        specs.push_back({pre + "norm2.bias", {D}});
        specs.push_back({pre + "mlp.fc1.weight", {H, D}});
        specs.push_back({pre + "mlp.fc1.bias", {H}});
        specs.push_back({pre + "mlp.fc2.weight", {D, H}});
        specs.push_back({pre + "mlp.fc2.bias", {D}});
    }
    specs.push_back({"norm.weight", {D}});
    specs.push_back({"norm.bias", {D}});
    return specs;
}

const Tensor& ModelWeights::get(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw InputError("model has no tensor '" + name + "'");
}

Tensor& ModelWeights::get(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const ModelWeights&>(*this).get(name));
}

std::size_t ModelWeights::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
}

ModelWeights build_reference_vit(const ViTConfig& cfg) {
    ModelWeights w;
    w.config = cfg;
    std::size_t j = 0;
    for (auto& spec : tensor_layout(cfg)) {
        Tensor t{std::move(spec.name), std::move(spec.shape), {}};
        t.data.resize(t.numel());
        for (float& v : t.data) v = static_cast<float>(0.02 * std::sin(double(++j)));
        w.tensors.push_back(std::move(t));
    }
    return w;
}

BandStrategy parse_band_strategy(const std::string& s) {
    if (s == "none") return BandStrategy::None;
    if (s == "replicate-mod3") return BandStrategy::ReplicateMod3;
    if (s == "average-mod") return BandStrategy::AverageMod;
    if (s == "select-bands") return BandStrategy::SelectBands;
    throw ConfigError("unknown band strategy '" + s + "'");
}

const char* to_string(BandStrategy s) {
    switch (s) {
        case BandStrategy::None: return "none";
        case BandStrategy::ReplicateMod3: return "replicate-mod3";
        case BandStrategy::AverageMod: return "average-mod";
        case BandStrategy::SelectBands: return "select-bands";
    }
    return "?";
}

AdaptedWeights adapt_input_layer(const ModelWeights& weights, int raster_bands, BandStrategy strategy,
                                 const std::vector<int>& selected) {
    const int in = weights.config.in_bands;
    auto mismatch = [&](const std::string& why) {
        throw ConfigError(std::string("band strategy ") + to_string(strategy) + " cannot adapt a " +
                          std::to_string(in) + "-band model to " + std::to_string(raster_bands) + " bands: " + why);
    };
    AdaptedWeights out{weights, {}};
    if (raster_bands < 1) mismatch("target must be >= 1");

    if (strategy == BandStrategy::None) {
        if (raster_bands != in) mismatch("band counts differ");
        for (int b = 0; b < in; ++b) out.raster_bands.push_back(b);
        return out;
    }
    if (strategy == BandStrategy::SelectBands) {
        if (static_cast<int>(selected.size()) != in) mismatch("selection must list exactly " + std::to_string(in) + " bands");
        for (int b : selected)
            if (b < 0 || b >= raster_bands) mismatch("selected band " + std::to_string(b) + " out of range");
        out.raster_bands = selected;
        return out;
    }
    if (in != 3) mismatch("original model must have 3 input bands");
    if (strategy == BandStrategy::ReplicateMod3 && raster_bands < 3) mismatch("replicate-mod3 needs >= 3 bands");
    if (strategy == BandStrategy::AverageMod && raster_bands > 3) mismatch("average-mod needs <= 3 bands");

    const Tensor& src = weights.get("patch_embed.weight");
    const int D = src.shape[0];
    const std::size_t kk = std::size_t(src.shape[2]) * src.shape[3];
    Tensor& dst = out.weights.get("patch_embed.weight");
    dst.shape[1] = raster_bands;
    dst.data.assign(std::size_t(D) * raster_bands * kk, 0.0f);
    for (int d = 0; d < D; ++d) {
        const float* s = src.data.data() + std::size_t(d) * in * kk;
        float* t = dst.data.data() + std::size_t(d) * raster_bands * kk;
        for (int c = 0; c < raster_bands; ++c) {
            if (strategy == BandStrategy::ReplicateMod3) {
                std::copy_n(s + std::size_t(c % 3) * kk, kk, t + std::size_t(c) * kk);
            } else {
                int members = 0;
                for (int j = c; j < in; j += raster_bands) ++members;
                for (std::size_t e = 0; e < kk; ++e) {
                    double acc = 0.0;
                    for (int j = c; j < in; j += raster_bands) acc += s[std::size_t(j) * kk + e];
                    t[std::size_t(c) * kk + e] = static_cast<float>(acc / members);
                }
            }
        }
    }
    out.weights.config.in_bands = raster_bands;
    for (int b = 0; b < raster_bands; ++b) out.raster_bands.push_back(b);
    return out;
}

// ---------------------------------------------------------------------------
// Quantization

QuantizedTensor quantize_tensor(const Tensor& t) {
    if (t.data.empty()) throw InputError("cannot quantize empty tensor '" + t.name + "'");
    double lo = t.data[0], hi = t.data[0];
    for (float v : t.data) {
        if (!std::isfinite(v)) throw InputError("non-finite weights in tensor '" + t.name + "'");
        lo = std::min(lo, double(v));
        hi = std::max(hi, double(v));
    }
    QuantizedTensor q{t.name, t.shape, {}, 1.0, 0};
    if (!(lo == hi && std::abs(lo) <= 255.0)) {
        // The representable range always contains zero so the zero point
        // never clamps.
        lo = std::min(lo, 0.0);
        hi = std::max(hi, 0.0);
        q.scale = hi > lo ? (hi - lo) / 255.0 : 1.0;
    }
    q.zero_point = static_cast<int>(std::clamp(std::round(-lo / q.scale), 0.0, 255.0));
    q.data.resize(t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        const double code = std::round(double(t.data[i]) / q.scale) + q.zero_point;
        q.data[i] = static_cast<std::uint8_t>(std::clamp(code, 0.0, 255.0));
    }
    return q;
}

std::vector<float> dequantize(const QuantizedTensor& q) {
    std::vector<float> out(q.data.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<float>((int(q.data[i]) - q.zero_point) * q.scale);
    return out;
}

std::size_t QuantizedWeights::byte_size() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.data.size() + sizeof(t.scale) + sizeof(t.zero_point);
    return n;
}

QuantizedWeights quantize_weights(const ModelWeights& w) {
    QuantizedWeights q{w.config, {}};
    for (const auto& t : w.tensors) q.tensors.push_back(quantize_tensor(t));
    return q;
}

ModelWeights dequantize(const QuantizedWeights& q) {
    ModelWeights w{q.config, {}};
    for (const auto& t : q.tensors) w.tensors.push_back({t.name, t.shape, dequantize(t)});
    return w;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMatrix as_matrix(const Tensor& t, int rows, int cols) {
    if (t.numel() != std::size_t(rows) * cols) throw InputError("tensor '" + t.name + "' has the wrong shape");
    return Eigen::Map<const RowMatrix>(t.data.data(), rows, cols);
}

Eigen::VectorXf as_vector(const Tensor& t, int n) {
    if (t.numel() != std::size_t(n)) throw InputError("tensor '" + t.name + "' has the wrong shape");
    return Eigen::Map<const Eigen::VectorXf>(t.data.data(), n);
}

Eigen::MatrixXf layer_norm(const Eigen::MatrixXf& x, const Eigen::VectorXf& w, const Eigen::VectorXf& b) {
    constexpr float kEps = 1e-6f;
    Eigen::MatrixXf out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const float mean = x.row(i).mean();
        const Eigen::RowVectorXf centered = x.row(i).array() - mean;
        const float var = centered.squaredNorm() / float(x.cols());
        out.row(i) = (centered.array() / std::sqrt(var + kEps)) * w.transpose().array() + b.transpose().array();
    }
    return out;
}

float gelu(float v) { return 0.5f * v * (1.0f + std::erf(v * 0.70710678118654752f)); }

void softmax_rows(Eigen::MatrixXf& a) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        a.row(i).array() -= a.row(i).maxCoeff();
        a.row(i) = a.row(i).array().exp();
        a.row(i) /= a.row(i).sum();
    }
}

}  // namespace

ReferenceEncoder::ReferenceEncoder(ModelWeights weights) : weights_(std::move(weights)) {
    const ViTConfig& c = weights_.config;
    c.validate();
    const int D = c.embed_dim;
    const int H = c.mlp_hidden();
    const int k = c.in_bands * c.patch_size * c.patch_size;
    patch_w_ = as_matrix(weights_.get("patch_embed.weight"), D, k);
    patch_b_ = as_vector(weights_.get("patch_embed.bias"), D).transpose();
    pos_ = as_matrix(weights_.get("pos_embed"), c.tokens(), D);
    for (int b = 0; b < c.depth; ++b) {
        const std::string pre = "blocks." + std::to_string(b) + ".";
        auto vec = [&](const std::string& n, int len) { return as_vector(weights_.get(pre + n), len); };
        auto mat = [&](const std::string& n, int r, int cc) { return as_matrix(weights_.get(pre + n), r, cc); };
        Block blk;
        blk.norm1_w = vec("norm1.weight", D);
        blk.norm1_b = vec("norm1.bias", D);
        blk.q_w = mat("attn.q.weight", D, D);
        blk.q_b = vec("attn.q.bias", D).transpose();
        blk.k_w = mat("attn.k.weight", D, D);
        blk.k_b = vec("attn.k.bias", D).transpose();
        blk.v_w = mat("attn.v.weight", D, D);
        blk.v_b = vec("attn.v.bias", D).transpose();
        blk.proj_w = mat("attn.proj.weight", D, D);
        blk.proj_b = vec("attn.proj.bias", D).transpose();
        blk.norm2_w = vec("norm2.weight", D);
        blk.norm2_b = vec("norm2.bias", D);
        blk.fc1_w = mat("mlp.fc1.weight", H, D);
        blk.fc1_b = vec("mlp.fc1.bias", H).transpose();
        blk.fc2_w = mat("mlp.fc2.weight", D, H);
        blk.fc2_b = vec("mlp.fc2.bias", D).transpose();
        blocks_.push_back(std::move(blk));
    }
    norm_w_ = as_vector(weights_.get("norm.weight"), D);
    norm_b_ = as_vector(weights_.get("norm.bias"), D);
    fingerprint_ = geofeat::fingerprint(weights_);
}

EncoderInfo ReferenceEncoder::info() const {
    const ViTConfig& c = weights_.config;
    return {c.patch_size, c.embed_dim, c.sample_size, c.in_bands};
}

Eigen::MatrixXf ReferenceEncoder::patchify(const PixelBlock& tile) const {
    const ViTConfig& c = weights_.config;
    const int S = c.sample_size;
    const int p = c.patch_size;
    if (tile.window.width != S || tile.window.height != S || tile.band_count() != c.in_bands)
        throw InputError("shape mismatch: encoder expects " + std::to_string(S) + "x" + std::to_string(S) + "x" +
                         std::to_string(c.in_bands) + " tiles, got " + std::to_string(tile.window.width) + "x" +
                         std::to_string(tile.window.height) + "x" + std::to_string(tile.band_count()));
    const int G = c.grid();
    Eigen::MatrixXf patches(G * G, c.in_bands * p * p);
    for (int gy = 0; gy < G; ++gy)
        for (int gx = 0; gx < G; ++gx)
            for (int b = 0; b < c.in_bands; ++b)
                for (int i = 0; i < p; ++i)
                    for (int j = 0; j < p; ++j)
                        patches(gy * G + gx, (b * p + i) * p + j) = tile.at(b, gx * p + j, gy * p + i);
    return patches;
}

Eigen::MatrixXf ReferenceEncoder::patch_embedding(const PixelBlock& tile, bool with_bias) const {
    // Accumulated in double so that duplicated input bands scale the embedding exactly.
    const Eigen::MatrixXd acc = patchify(tile).cast<double>() * patch_w_.cast<double>().transpose();
    Eigen::MatrixXf tokens = acc.cast<float>();
    if (with_bias) tokens.rowwise() += patch_b_;
    return tokens;
}

PatchFeatureGrid ReferenceEncoder::encode(const PixelBlock& tile) const {
    const ViTConfig& c = weights_.config;
    const int D = c.embed_dim;
    const int dh = D / c.heads;
    const float att_scale = 1.0f / std::sqrt(float(dh));

    Eigen::MatrixXf x = patch_embedding(tile, true) + pos_;
    for (const Block& blk : blocks_) {
        const Eigen::MatrixXf h = layer_norm(x, blk.norm1_w, blk.norm1_b);
        const Eigen::MatrixXf q = (h * blk.q_w.transpose()).rowwise() + blk.q_b;
        const Eigen::MatrixXf k = (h * blk.k_w.transpose()).rowwise() + blk.k_b;
        const Eigen::MatrixXf v = (h * blk.v_w.transpose()).rowwise() + blk.v_b;
        Eigen::MatrixXf attended(x.rows(), D);
        for (int head = 0; head < c.heads; ++head) {
            Eigen::MatrixXf a = q.middleCols(head * dh, dh) * k.middleCols(head * dh, dh).transpose() * att_scale;
            softmax_rows(a);
            attended.middleCols(head * dh, dh) = a * v.middleCols(head * dh, dh);
        }
        x += (attended * blk.proj_w.transpose()).rowwise() + blk.proj_b;

        const Eigen::MatrixXf h2 = layer_norm(x, blk.norm2_w, blk.norm2_b);
        Eigen::MatrixXf m = (h2 * blk.fc1_w.transpose()).rowwise() + blk.fc1_b;
        m = m.unaryExpr(&gelu);
        x += (m * blk.fc2_w.transpose()).rowwise() + blk.fc2_b;
    }
    x = layer_norm(x, norm_w_, norm_b_);
    if (!x.allFinite()) throw Error("non-finite intermediate values in encoder forward pass");

    PatchFeatureGrid out;
    out.offset = {tile.window.col_off, tile.window.row_off};
    out.grid = c.grid();
    out.dim = D;
    out.features = std::move(x);
    return out;
}

PatchFeatureGrid encode_tile(const ModelWeights& weights, const PixelBlock& tile) {
    return ReferenceEncoder(weights).encode(tile);
}

// ---------------------------------------------------------------------------
// Fingerprints and serialization

Fnv1a& Fnv1a::update(const void* data, std::size_t size) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        state_ ^= p[i];
        state_ *= 1099511628211ULL;
    }
    return *this;
}

std::string Fnv1a::hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
    return buf;
}

namespace {

nlohmann::json config_json(const ViTConfig& c) {
    return {{"patch_size", c.patch_size}, {"embed_dim", c.embed_dim}, {"depth", c.depth}, {"heads", c.heads},
            {"mlp_ratio", c.mlp_ratio},   {"in_bands", c.in_bands},   {"sample_size", c.sample_size}};
}

ViTConfig config_from_json(const nlohmann::json& j) {
    ViTConfig c;
    c.patch_size = j.at("patch_size");
    c.embed_dim = j.at("embed_dim");
    c.depth = j.at("depth");
    c.heads = j.at("heads");
    c.mlp_ratio = j.at("mlp_ratio");
    c.in_bands = j.at("in_bands");
    c.sample_size = j.at("sample_size");
    c.validate();
    return c;
}

constexpr char kModelMagic[8] = {'G', 'F', 'V', 'I', 'T', '\x01', '\n', '\0'};

}  // namespace

std::string fingerprint(const ModelWeights& w) {
    Fnv1a h;
    h.update(config_json(w.config).dump());
    for (const auto& t : w.tensors) {
        h.update(t.name);
        h.update(t.shape.data(), t.shape.size() * sizeof(int));
        h.update(t.data.data(), t.data.size() * sizeof(float));
    }
    return h.hex();
}

void save_model(const std::filesystem::path& path, const ModelWeights& w) {
    nlohmann::json header{{"config", config_json(w.config)}, {"tensors", nlohmann::json::array()}};
    for (const auto& t : w.tensors) header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write: " + path.string());
    out.write(kModelMagic, sizeof(kModelMagic));
    const auto len = static_cast<std::uint32_t>(text.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : w.tensors)
        out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
    if (!out) throw ResumableError("write failed: " + path.string());
}

ModelWeights load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("not found: " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kModelMagic, 8) != 0) throw InputError("not a reference model file: " + path.string());
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    std::string text(len, '\0');
    in.read(text.data(), len);
    if (!in) throw InputError("truncated model file: " + path.string());
    ModelWeights w;
    try {
        const auto header = nlohmann::json::parse(text);
        w.config = config_from_json(header.at("config"));
        for (const auto& t : header.at("tensors"))
            w.tensors.push_back({t.at("name").get<std::string>(), t.at("shape").get<std::vector<int>>(), {}});
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed model header in " + path.string() + ": " + e.what());
    }
    const auto layout = tensor_layout(w.config);
    if (layout.size() != w.tensors.size()) throw InputError("model tensors do not match its config: " + path.string());
    for (std::size_t i = 0; i < layout.size(); ++i) {
        Tensor& t = w.tensors[i];
        if (t.name != layout[i].name || t.shape != layout[i].shape)
            throw InputError("model tensor '" + t.name + "' does not match its config");
        t.data.resize(t.numel());
        in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
    }
    if (!in) throw InputError("truncated model file: " + path.string());
    return w;
}

std::unique_ptr<TileEncoder> load_external_model(const std::filesystem::path& path) {
    if (path.extension() == ".gfvit") return std::make_unique<ReferenceEncoder>(load_model(path));
    throw InputError("no adapter available for model file " + path.string());
}

}  // namespace geofeat
