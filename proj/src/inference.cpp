#include "geofeat/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

#include "geofeat/error.hpp"

namespace geofeat {

std::string plan_fingerprint(const RasterDataset& ds, const TilePlan& plan, const std::vector<int>& raster_bands,
                             const BandStats& stats) {
    Fnv1a h;
    const int dims[] = {ds.width, ds.height, ds.band_count, plan.sample_size, plan.stride};
    h.update(dims, sizeof(dims));
    for (const auto& o : plan.offsets) {
        const int xy[] = {o.col_off, o.row_off};
        h.update(xy, sizeof(xy));
    }
    h.update(raster_bands.data(), raster_bands.size() * sizeof(int));
    for (const auto* v : {&stats.mean, &stats.std}) h.update(v->data(), v->size() * sizeof(double));
    return h.hex();
}

PatchFeatureGrid encode_plan_tile(const RasterDataset& ds, const TilePlan& plan, std::size_t tile,
                                  const TileEncoder& encoder, const std::vector<int>& raster_bands,
                                  const BandStats& stats) {
    PixelBlock block = normalize_block(read_window(ds, plan.window(tile), raster_bands), stats);
    block.values = block.values.unaryExpr([](float v) { return std::isnan(v) ? 0.0f : v; });
    return encoder.encode(block);
}

namespace {

void check_resume(const CheckpointManifest& saved, const CheckpointManifest& current) {
    static const char* plan_fields[] = {"sample_size", "stride", "bands"};
    for (const char* f : plan_fields) {
        if (saved.params.value(f, nlohmann::json()) != current.params.value(f, nlohmann::json()))
            throw ConfigError(std::string("plan fingerprint mismatch: ") + f + " is " + current.params[f].dump() +
                              " but the checkpoint was made with " + saved.params.value(f, nlohmann::json()).dump());
    }
    for (const char* f : {"adaptation", "quantized"}) {
        if (saved.params.value(f, nlohmann::json()) != current.params.value(f, nlohmann::json()))
            throw ConfigError(std::string("model fingerprint mismatch: ") + f + " is " + current.params[f].dump() +
                              " but the checkpoint was made with " + saved.params.value(f, nlohmann::json()).dump());
    }
    if (saved.batch_size != current.batch_size)
        throw ConfigError("checkpoint mismatch: batch_size is " + std::to_string(current.batch_size) +
                          " but the checkpoint was made with " + std::to_string(saved.batch_size));
    if (saved.plan_fingerprint != current.plan_fingerprint)
        throw ConfigError("plan fingerprint mismatch: input raster or normalization differs from the checkpoint");
    if (saved.model_fingerprint != current.model_fingerprint)
        throw ConfigError("model fingerprint mismatch: encoder weights differ from the checkpoint");
}

}  // namespace

InferenceResult run_inference(const RasterDataset& ds, const TilePlan& plan, const TileEncoder& encoder,
                              const std::vector<int>& raster_bands, const BandStats& stats, const RunParams& params,
                              const InferenceOptions& options) {
    if (plan.raster_width != ds.width || plan.raster_height != ds.height)
        throw ConfigError("tile plan does not match the raster dimensions");
    if (options.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (options.checkpoint_dir.empty()) throw ConfigError("checkpoint directory is required");
    const EncoderInfo info = encoder.info();
    if (info.sample_size != plan.sample_size)
        throw ConfigError("encoder sample size " + std::to_string(info.sample_size) + " differs from the plan's " +
                          std::to_string(plan.sample_size));
    if (static_cast<int>(raster_bands.size()) != info.in_bands)
        throw ConfigError("encoder expects " + std::to_string(info.in_bands) + " bands, " +
                          std::to_string(raster_bands.size()) + " routed");

    CheckpointManifest current;
    current.model_fingerprint = encoder.fingerprint();
    current.plan_fingerprint = plan_fingerprint(ds, plan, raster_bands, stats);
    current.params = {{"sample_size", plan.sample_size},
                      {"stride", plan.stride},
                      {"bands", raster_bands},
                      {"adaptation", params.adaptation},
                      {"quantized", params.quantized}};
    current.batch_size = options.batch_size;
    current.tile_count = plan.size();

    const auto& dir = options.checkpoint_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ResumableError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

    CheckpointManifest manifest = current;
    if (std::filesystem::exists(dir / "manifest.json")) {
        if (options.resume) {
            const CheckpointManifest saved = load_manifest(dir);
            check_resume(saved, current);
            manifest.completed = saved.completed;
        } else {
            remove_checkpoint(dir);
            std::filesystem::create_directories(dir, ec);
        }
    }
    save_manifest(dir, manifest);

    InferenceResult result;
    const int total = manifest.batch_count();
    const int workers = std::max(1, options.workers);
    bool first = true;
    for (int batch = 0; batch < total; ++batch) {
        if (manifest.completed.count(batch)) continue;
        if (!first && options.pause_ms > 0) {
            if (options.pause_state) options.pause_state(true);
            std::this_thread::sleep_for(std::chrono::milliseconds(options.pause_ms));
            if (options.pause_state) options.pause_state(false);
        }
        first = false;

        const std::size_t begin = std::size_t(batch) * options.batch_size;
        const std::size_t end = std::min(plan.size(), begin + options.batch_size);
        std::vector<PatchFeatureGrid> grids(end - begin);
        std::vector<std::exception_ptr> errors(workers);
        auto work = [&](int w) {
            try {
                for (std::size_t i = begin + w; i < end; i += workers)
                    grids[i - begin] = encode_plan_tile(ds, plan, i, encoder, raster_bands, stats);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        };
        if (workers == 1) {
            work(0);
        } else {
            std::vector<std::thread> pool;
            for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
            for (auto& t : pool) t.join();
        }
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);

        write_batch(dir, batch, grids);
        manifest.completed.insert(batch);
        save_manifest(dir, manifest);
        ++result.batches_run;
        if (options.progress) options.progress(static_cast<int>(manifest.completed.size()), total);
        if (options.after_batch && !options.after_batch(batch)) break;
    }
    result.complete = static_cast<int>(manifest.completed.size()) == total;
    result.manifest = std::move(manifest);
    return result;
}

}  // namespace geofeat
