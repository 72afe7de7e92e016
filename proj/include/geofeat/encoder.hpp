/**
 * @file encoder.hpp
 * @brief Reference vision transformer, band adaptation and weight quantization.
 *
 * The reference model is a pre-norm ViT without a class token: every output
 * token is a spatial patch. Its weights are analytic (no RNG) so runs are
 * reproducible bit for bit on a given platform.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geofeat/raster_io.hpp"
#include "geofeat/tiler.hpp"

namespace geofeat {

struct ViTConfig {
    int patch_size = 8;
    int embed_dim = 16;
    int depth = 2;
    int heads = 2;
    double mlp_ratio = 2.0;
    int in_bands = 3;
    int sample_size = 64;

    int grid() const { return sample_size / patch_size; }
    int tokens() const { return grid() * grid(); }
    int mlp_hidden() const { return static_cast<int>(embed_dim * mlp_ratio); }

    /// Throws ConfigError if an invariant fails.
    void validate() const;
    bool operator==(const ViTConfig&) const = default;
};

struct Tensor {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;

    std::size_t numel() const;
};

struct TensorSpec {
    std::string name;
    std::vector<int> shape;
};

/// Parameter names and shapes in declaration order.
std::vector<TensorSpec> tensor_layout(const ViTConfig& cfg);

struct ModelWeights {
    ViTConfig config;
    std::vector<Tensor> tensors;

    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);
    std::size_t parameter_count() const;
};

/// Element j of the row-major concatenation of all tensors is 0.02*sin(j+1).
ModelWeights build_reference_vit(const ViTConfig& cfg);

enum class BandStrategy { None, ReplicateMod3, AverageMod, SelectBands };

BandStrategy parse_band_strategy(const std::string& s);
const char* to_string(BandStrategy s);

struct AdaptedWeights {
    ModelWeights weights;
    std::vector<int> raster_bands;  ///< raster band indices fed to the encoder, in order
};

/**
 * Adapts a model to a raster with `raster_bands` bands.
 *
 * ReplicateMod3 copies original channel (c mod 3) into new channel c;
 * AverageMod sets channel c to the mean of original channels j with
 * j mod target == c. SelectBands keeps the weights and routes the listed
 * raster bands. Only the patch-embedding kernel changes.
 */
AdaptedWeights adapt_input_layer(const ModelWeights& weights, int raster_bands, BandStrategy strategy,
                                 const std::vector<int>& selected = {});

/// Per-tensor affine uint8 quantization.
struct QuantizedTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<std::uint8_t> data;
    double scale = 1.0;
    int zero_point = 0;
};

struct QuantizedWeights {
    ViTConfig config;
    std::vector<QuantizedTensor> tensors;

    std::size_t byte_size() const;
};

QuantizedTensor quantize_tensor(const Tensor& t);
std::vector<float> dequantize(const QuantizedTensor& q);
QuantizedWeights quantize_weights(const ModelWeights& w);
ModelWeights dequantize(const QuantizedWeights& q);

/// Features of one tile: one row per patch token, row-major over the patch grid.
struct PatchFeatureGrid {
    TileOffset offset;
    int grid = 0;
    int dim = 0;
    Eigen::MatrixXf features;  ///< (grid*grid) x dim
};

struct EncoderInfo {
    int patch_size = 0;
    int feature_dim = 0;
    int sample_size = 0;
    int in_bands = 0;
};

/// Anything that turns an S x S normalized tile into a patch feature grid.
class TileEncoder {
public:
    virtual ~TileEncoder() = default;
    virtual EncoderInfo info() const = 0;
    virtual PatchFeatureGrid encode(const PixelBlock& tile) const = 0;
    virtual std::string fingerprint() const = 0;
};

class ReferenceEncoder final : public TileEncoder {
public:
    explicit ReferenceEncoder(ModelWeights weights);

    EncoderInfo info() const override;
    PatchFeatureGrid encode(const PixelBlock& tile) const override;
    std::string fingerprint() const override { return fingerprint_; }

    /// Patch tokens straight after the patch projection (no position embedding).
    Eigen::MatrixXf patch_embedding(const PixelBlock& tile, bool with_bias) const;

    const ModelWeights& weights() const { return weights_; }

private:
    using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    struct Block {
        Eigen::VectorXf norm1_w, norm1_b, norm2_w, norm2_b;
        RowMatrix q_w, k_w, v_w, proj_w, fc1_w, fc2_w;
        Eigen::RowVectorXf q_b, k_b, v_b, proj_b, fc1_b, fc2_b;
    };

    Eigen::MatrixXf patchify(const PixelBlock& tile) const;

    ModelWeights weights_;
    std::string fingerprint_;
    RowMatrix patch_w_;
    Eigen::RowVectorXf patch_b_;
    RowMatrix pos_;
    std::vector<Block> blocks_;
    Eigen::VectorXf norm_w_, norm_b_;
};

/// Runs the reference model on one normalized tile.
PatchFeatureGrid encode_tile(const ModelWeights& weights, const PixelBlock& tile);

/// Incremental FNV-1a 64-bit hash; stable across runs and platforms.
class Fnv1a {
public:
    Fnv1a& update(const void* data, std::size_t size);
    Fnv1a& update(const std::string& s) { return update(s.data(), s.size()); }
    std::string hex() const;

private:
    std::uint64_t state_ = 1469598103934665603ULL;
};

std::string fingerprint(const ModelWeights& w);

void save_model(const std::filesystem::path& path, const ModelWeights& w);
ModelWeights load_model(const std::filesystem::path& path);

/// Opens a model file through a compiled-in adapter chosen by extension.
/// The only adapter shipped reads the reference format (".gfvit").
std::unique_ptr<TileEncoder> load_external_model(const std::filesystem::path& path);

}  // namespace geofeat
