/**
 * @file inference.hpp
 * @brief Disk-backed, resumable batch inference over a tile plan.
 *
 * Checkpoint directory layout:
 *   manifest.json     progress record (JSON)
 *   batch_<id>.bin    uint32 LE header length, JSON header, then float32 LE
 *                     patch grids, tile after tile, token-major.
 *
 * A batch file is renamed into place before the manifest lists it, so every
 * id in `completed` always has a complete file on disk.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "geofeat/encoder.hpp"
#include "geofeat/raster_io.hpp"
#include "geofeat/tiler.hpp"

namespace geofeat {

struct CheckpointManifest {
    std::string model_fingerprint;
    std::string plan_fingerprint;
    nlohmann::json params = nlohmann::json::object();  ///< sample_size, stride, bands, adaptation, quantized
    std::set<int> completed;
    int batch_size = 1;
    std::size_t tile_count = 0;

    int batch_count() const { return static_cast<int>((tile_count + batch_size - 1) / batch_size); }
    nlohmann::json to_json() const;
    static CheckpointManifest from_json(const nlohmann::json& j);
};

CheckpointManifest load_manifest(const std::filesystem::path& dir);
void save_manifest(const std::filesystem::path& dir, const CheckpointManifest& m);

std::filesystem::path batch_path(const std::filesystem::path& dir, int batch_id);
void write_batch(const std::filesystem::path& dir, int batch_id, const std::vector<PatchFeatureGrid>& grids);
std::vector<PatchFeatureGrid> read_batch(const std::filesystem::path& path);

/// Parameters recorded in the manifest and compared on resume.
struct RunParams {
    std::string adaptation = "none";
    bool quantized = false;
};

struct InferenceOptions {
    int batch_size = 4;
    int pause_ms = 0;
    int workers = 1;
    std::filesystem::path checkpoint_dir;
    bool resume = false;  ///< reuse a matching checkpoint instead of discarding it
    /// Called after each committed batch; returning false stops the run there.
    std::function<bool(int batch_id)> after_batch;
    std::function<void(int done, int total)> progress;
    std::function<void(bool paused)> pause_state;  ///< brackets each inter-batch sleep
};

struct InferenceResult {
    CheckpointManifest manifest;
    bool complete = false;
    int batches_run = 0;  ///< batches computed in this invocation
};

/// Hash of everything that determines which pixels each tile sees.
std::string plan_fingerprint(const RasterDataset& ds, const TilePlan& plan, const std::vector<int>& raster_bands,
                             const BandStats& stats);

/**
 * Encodes the plan's tiles in batches, persisting each batch before
 * recording it. With `resume`, a manifest whose fingerprints and parameters
 * match lets completed batches be skipped; a mismatch throws ConfigError
 * naming the field. `stats` must describe the selected raster bands.
 */
InferenceResult run_inference(const RasterDataset& ds, const TilePlan& plan, const TileEncoder& encoder,
                              const std::vector<int>& raster_bands, const BandStats& stats, const RunParams& params,
                              const InferenceOptions& options);

/// Reads, normalizes and encodes one tile (NaN pixels are imputed as 0 after normalization).
PatchFeatureGrid encode_plan_tile(const RasterDataset& ds, const TilePlan& plan, std::size_t tile,
                                  const TileEncoder& encoder, const std::vector<int>& raster_bands,
                                  const BandStats& stats);

/// Deletes batch files and the manifest, then the directory if it is empty.
void remove_checkpoint(const std::filesystem::path& dir);

}  // namespace geofeat
