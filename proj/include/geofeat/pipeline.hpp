/**
 * @file pipeline.hpp
 * @brief JSON run configuration and the stage functions behind each CLI subcommand.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "geofeat/encoder.hpp"
#include "geofeat/geoml.hpp"
#include "geofeat/inference.hpp"
#include "geofeat/mosaic.hpp"
#include "geofeat/raster_io.hpp"

namespace geofeat {

struct InputSection {
    std::filesystem::path raster;    ///< source image for `features`
    std::filesystem::path features;  ///< feature raster for the analysis stages
    std::filesystem::path points;    ///< GeoJSON points
    std::filesystem::path model;     ///< model JSON for `predict`
};

struct EncoderSection {
    std::string model = "reference";  ///< "reference" or a model file path
    int patch_size = 8;
    int embed_dim = 16;
    int depth = 2;
    int heads = 2;
    double mlp_ratio = 2.0;
    int in_bands = 3;
    int sample_size = 64;
    int stride = 32;
    int batch_size = 4;
    std::string band_strategy = "none";  ///< none, replicate-mod3, average-mod, select-bands, pca
    std::vector<int> bands;              ///< select-bands list, 0-based
    bool quantize = false;
    std::int64_t stats_samples = 100000;
    int pause_ms = 0;
    std::filesystem::path checkpoint_dir;  ///< empty means "<output>.ckpt"
};

struct MosaicSection {
    bool keep_checkpoint = false;
};

struct AnalysisSection {
    std::string method = "pca";  ///< reduce: pca or tsne
    int components = 3;
    std::int64_t sample_size = 100000;
    int k = 5;
    int max_iter = 300;
    double tol = 1e-6;
    double perplexity = 30.0;
    int iterations = 1000;
    int tsne_dims = 2;
};

struct GeomlSection {
    std::string aggregation = "mean";
    std::string negative = "clamp";
    std::optional<double> threshold;
    std::string algorithm = "knn";
    int k = 5;
    std::string metric = "euclidean";
    int n_trees = 100;
    int max_depth = -1;
    int min_samples_leaf = 1;
    int features_per_split = 0;
    bool bootstrap = true;
    std::string scheme = "random-kfold";
    int folds = 5;
};

struct OutputSection {
    std::filesystem::path path;
    std::string compression = "deflate";  ///< deflate or none
};

struct PipelineConfig {
    InputSection input;
    EncoderSection encoder;
    MosaicSection mosaic;
    AnalysisSection analysis;
    GeomlSection geoml;
    OutputSection output;
    std::uint64_t seed = 0;
    int workers = 1;

    /// Rejects unknown keys and wrong types with ConfigError.
    static PipelineConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    Compression compression() const;
    ClassifierSpec classifier_spec() const;
    SimilarityOptions similarity_options() const;
};

PipelineConfig load_config(const std::filesystem::path& path);

/// Sub-seed streams derived from the single config seed by fixed offsets.
enum class SeedStream : std::uint64_t {
    Stats = 0,
    PcaSample = 1,
    Tsne = 2,
    KMeansSample = 3,
    KMeansInit = 4,
    Forest = 5,
    CvShuffle = 6,
};

inline std::uint64_t sub_seed(std::uint64_t seed, SeedStream s) { return seed + static_cast<std::uint64_t>(s); }

/// Writes "<out>.config.json" with the effective configuration.
void write_config_echo(const PipelineConfig& cfg, const std::filesystem::path& out);

struct FeaturesControl {
    bool resume = false;
    bool dry_run = false;
    std::function<bool(int batch_id)> after_batch;  ///< false stops the run
    std::function<void(int done, int total)> progress;
    std::function<void(bool paused)> pause_state;
};

struct FeaturesReport {
    TilePlan plan;
    OutputGeometry geometry;
    int feature_dim = 0;
    int batch_count = 0;
    int batches_run = 0;
    bool complete = false;
    std::filesystem::path output;
};

FeaturesReport run_features(const PipelineConfig& cfg, const FeaturesControl& control, std::ostream& log);

/// PCA: transformed raster at output.path plus "<out>.pca.json".
/// t-SNE: embedding JSON at output.path.
void run_reduce(const PipelineConfig& cfg, std::ostream& log);

/// Cluster raster at output.path plus "<out>.kmeans.json".
void run_cluster(const PipelineConfig& cfg, std::ostream& log);

struct SimilarityOutputs {
    std::filesystem::path similarity;
    std::optional<std::filesystem::path> mask;
    TemplateSet templ;
};

std::filesystem::path mask_path(const std::filesystem::path& similarity_path);

/// Shared by the CLI and the HTTP service.
SimilarityOutputs compute_similarity(const RasterDataset& fr, const std::vector<GeoPoint>& points,
                                     const SimilarityOptions& opt, std::optional<double> threshold,
                                     const std::filesystem::path& out, Compression compression);

SimilarityOutputs run_similarity(const PipelineConfig& cfg, std::ostream& log);

/// Points file read against the feature raster, with the CRS checked.
LabeledDataset load_labeled(const RasterDataset& fr, const std::filesystem::path& points);

void run_fit(const PipelineConfig& cfg, std::ostream& log);
void run_predict(const PipelineConfig& cfg, std::ostream& log);
CvReport run_validate(const PipelineConfig& cfg, std::ostream& log);

}  // namespace geofeat
