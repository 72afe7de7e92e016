#include "geofeat/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <ostream>
#include <set>

#include "geofeat/analysis.hpp"
#include "geofeat/analysis_io.hpp"
#include "geofeat/error.hpp"
#include "geofeat/points.hpp"
#include "geofeat/tiler.hpp"

namespace geofeat {
namespace {

using nlohmann::json;

/// Strict accessor for one config object.
class Section {
public:
    Section(const json& parent, const std::string& name, std::initializer_list<const char*> keys) : name_(name) {
        if (!parent.contains(name)) {
            obj_ = json::object();
            return;
        }
        obj_ = parent.at(name);
        if (!obj_.is_object()) throw ConfigError("config section '" + name + "' must be an object");
        const std::set<std::string> allowed(keys.begin(), keys.end());
        for (const auto& [k, v] : obj_.items())
            if (!allowed.count(k)) throw ConfigError("unknown config key '" + name + "." + k + "'");
    }

    template <class T>
    void get(const char* key, T& out) const {
        if (!obj_.contains(key)) return;
        try {
            out = obj_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config key '" + name_ + "." + key + "' has the wrong type: " + obj_.at(key).dump());
        }
    }

    template <class T>
    void get(const char* key, std::optional<T>& out) const {
        if (!obj_.contains(key)) return;
        if (obj_.at(key).is_null()) {
            out.reset();
            return;
        }
        T v{};
        get(key, v);
        out = v;
    }

    void get_path(const char* key, std::filesystem::path& out) const {
        std::string s = out.string();
        get(key, s);
        out = s;
    }

private:
    std::string name_;
    json obj_;
};

template <class T>
void require(bool ok, const T& msg) {
    if (!ok) throw ConfigError(msg);
}

Compression parse_compression(const std::string& s) {
    if (s == "deflate") return Compression::Deflate;
    if (s == "none") return Compression::None;
    throw ConfigError("unknown compression '" + s + "' (expected deflate or none)");
}

std::filesystem::path suffixed(const std::filesystem::path& p, const std::string& suffix) {
    return p.string() + suffix;
}

const std::filesystem::path& need(const std::filesystem::path& p, const char* key) {
    if (p.empty()) throw ConfigError(std::string("config key '") + key + "' is required");
    return p;
}

BandStats subset_stats(const BandStats& s, const std::vector<int>& bands) {
    BandStats out;
    for (int b : bands) {
        out.mean.push_back(s.mean[std::size_t(b)]);
        out.std.push_back(s.std[std::size_t(b)]);
        out.min.push_back(s.min[std::size_t(b)]);
        out.max.push_back(s.max[std::size_t(b)]);
    }
    return out;
}

ModelWeights base_weights(const EncoderSection& e) {
    if (e.model == "reference") {
        ViTConfig c;
        c.patch_size = e.patch_size;
        c.embed_dim = e.embed_dim;
        c.depth = e.depth;
        c.heads = e.heads;
        c.mlp_ratio = e.mlp_ratio;
        c.in_bands = e.in_bands;
        c.sample_size = e.sample_size;
        try {
            c.validate();
        } catch (const InputError& err) {
            throw ConfigError(err.what());
        }
        return build_reference_vit(c);
    }
    const std::filesystem::path path(e.model);
    if (path.extension() != ".gfvit") (void)load_external_model(path);  // throws "no adapter available"
    ModelWeights w = load_model(path);
    if (w.config.sample_size != e.sample_size)
        throw ConfigError("encoder.sample_size " + std::to_string(e.sample_size) + " differs from the model's " +
                          std::to_string(w.config.sample_size));
    return w;
}

void print_plan(std::ostream& log, const TilePlan& plan, const OutputGeometry& g, int dim) {
    log << "tile plan: " << plan.size() << " tiles of " << plan.sample_size << "x" << plan.sample_size
        << " px, stride " << plan.stride << "\n";
    const auto cols = axis_offsets(plan.raster_width, plan.sample_size, plan.stride);
    const auto rows = axis_offsets(plan.raster_height, plan.sample_size, plan.stride);
    auto list = [](const std::vector<int>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
        return s;
    };
    log << "  column offsets: " << list(cols) << "\n  row offsets: " << list(rows) << "\n";
    log << "output geometry: " << g.width << "x" << g.height << " cells, " << dim << " bands, pixel size "
        << g.geotransform.pixel_width << " x " << g.geotransform.pixel_height << ", origin ("
        << g.geotransform.origin_x << ", " << g.geotransform.origin_y << ")\n";
}

RasterDataset open_features(const PipelineConfig& cfg) {
    return open_raster(need(cfg.input.features, "input.features"));
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    PipelineConfig c;
    const Section root(json{{"config", j}}, "config",
                       {"input", "encoder", "mosaic", "analysis", "geoml", "output", "seed", "workers"});
    root.get("seed", c.seed);
    root.get("workers", c.workers);

    const Section in(j, "input", {"raster", "features", "points", "model"});
    in.get_path("raster", c.input.raster);
    in.get_path("features", c.input.features);
    in.get_path("points", c.input.points);
    in.get_path("model", c.input.model);

    const Section en(j, "encoder", {"model", "patch_size", "embed_dim", "depth", "heads", "mlp_ratio", "in_bands",
                                    "sample_size", "stride", "batch_size", "band_strategy", "bands", "quantize",
                                    "stats_samples", "pause_ms", "checkpoint_dir"});
    auto& e = c.encoder;
    en.get("model", e.model);
    en.get("patch_size", e.patch_size);
    en.get("embed_dim", e.embed_dim);
    en.get("depth", e.depth);
    en.get("heads", e.heads);
    en.get("mlp_ratio", e.mlp_ratio);
    en.get("in_bands", e.in_bands);
    en.get("sample_size", e.sample_size);
    en.get("stride", e.stride);
    en.get("batch_size", e.batch_size);
    en.get("band_strategy", e.band_strategy);
    en.get("bands", e.bands);
    en.get("quantize", e.quantize);
    en.get("stats_samples", e.stats_samples);
    en.get("pause_ms", e.pause_ms);
    en.get_path("checkpoint_dir", e.checkpoint_dir);

    const Section mo(j, "mosaic", {"keep_checkpoint"});
    mo.get("keep_checkpoint", c.mosaic.keep_checkpoint);

    const Section an(j, "analysis", {"method", "components", "sample_size", "k", "max_iter", "tol", "perplexity",
                                     "iterations", "tsne_dims"});
    auto& a = c.analysis;
    an.get("method", a.method);
    an.get("components", a.components);
    an.get("sample_size", a.sample_size);
    an.get("k", a.k);
    an.get("max_iter", a.max_iter);
    an.get("tol", a.tol);
    an.get("perplexity", a.perplexity);
    an.get("iterations", a.iterations);
    an.get("tsne_dims", a.tsne_dims);

    const Section gm(j, "geoml", {"aggregation", "negative", "threshold", "algorithm", "k", "metric", "n_trees",
                                  "max_depth", "min_samples_leaf", "features_per_split", "bootstrap", "scheme",
                                  "folds"});
    auto& g = c.geoml;
    gm.get("aggregation", g.aggregation);
    gm.get("negative", g.negative);
    gm.get("threshold", g.threshold);
    gm.get("algorithm", g.algorithm);
    gm.get("k", g.k);
    gm.get("metric", g.metric);
    gm.get("n_trees", g.n_trees);
    gm.get("max_depth", g.max_depth);
    gm.get("min_samples_leaf", g.min_samples_leaf);
    gm.get("features_per_split", g.features_per_split);
    gm.get("bootstrap", g.bootstrap);
    gm.get("scheme", g.scheme);
    gm.get("folds", g.folds);

    const Section out(j, "output", {"path", "compression"});
    out.get_path("path", c.output.path);
    out.get("compression", c.output.compression);

    // Enumerations are validated eagerly so typos fail before any work starts.
    parse_compression(c.output.compression);
    if (e.band_strategy != "pca") parse_band_strategy(e.band_strategy);
    require(a.method == "pca" || a.method == "tsne", "analysis.method must be pca or tsne");
    parse_aggregation(g.aggregation);
    parse_negative_scores(g.negative);
    parse_metric(g.metric);
    parse_scheme(g.scheme);
    require(g.algorithm == "knn" || g.algorithm == "rf", "geoml.algorithm must be knn or rf");
    require(c.workers >= 1, "workers must be >= 1");
    require(e.batch_size >= 1, "encoder.batch_size must be >= 1");
    require(e.pause_ms >= 0, "encoder.pause_ms must be >= 0");
    require(e.stats_samples >= 2, "encoder.stats_samples must be >= 2");
    if (g.threshold) require(*g.threshold >= 0.0 && *g.threshold <= 1.0, "geoml.threshold must be in [0, 1]");
    return c;
}

json PipelineConfig::to_json() const {
    const auto& e = encoder;
    const auto& a = analysis;
    const auto& g = geoml;
    return {{"seed", seed},
            {"workers", workers},
            {"input",
             {{"raster", input.raster.string()},
              {"features", input.features.string()},
              {"points", input.points.string()},
              {"model", input.model.string()}}},
            {"encoder",
             {{"model", e.model},
              {"patch_size", e.patch_size},
              {"embed_dim", e.embed_dim},
              {"depth", e.depth},
              {"heads", e.heads},
              {"mlp_ratio", e.mlp_ratio},
              {"in_bands", e.in_bands},
              {"sample_size", e.sample_size},
              {"stride", e.stride},
              {"batch_size", e.batch_size},
              {"band_strategy", e.band_strategy},
              {"bands", e.bands},
              {"quantize", e.quantize},
              {"stats_samples", e.stats_samples},
              {"pause_ms", e.pause_ms},
              {"checkpoint_dir", e.checkpoint_dir.string()}}},
            {"mosaic", {{"keep_checkpoint", mosaic.keep_checkpoint}}},
            {"analysis",
             {{"method", a.method},
              {"components", a.components},
              {"sample_size", a.sample_size},
              {"k", a.k},
              {"max_iter", a.max_iter},
              {"tol", a.tol},
              {"perplexity", a.perplexity},
              {"iterations", a.iterations},
              {"tsne_dims", a.tsne_dims}}},
            {"geoml",
             {{"aggregation", g.aggregation},
              {"negative", g.negative},
              {"threshold", g.threshold ? json(*g.threshold) : json(nullptr)},
              {"algorithm", g.algorithm},
              {"k", g.k},
              {"metric", g.metric},
              {"n_trees", g.n_trees},
              {"max_depth", g.max_depth},
              {"min_samples_leaf", g.min_samples_leaf},
              {"features_per_split", g.features_per_split},
              {"bootstrap", g.bootstrap},
              {"scheme", g.scheme},
              {"folds", g.folds}}},
            {"output", {{"path", output.path.string()}, {"compression", output.compression}}}};
}

Compression PipelineConfig::compression() const { return parse_compression(output.compression); }

ClassifierSpec PipelineConfig::classifier_spec() const {
    ClassifierSpec s;
    s.algorithm = geoml.algorithm;
    s.knn.k = geoml.k;
    s.knn.metric = parse_metric(geoml.metric);
    s.rf.n_trees = geoml.n_trees;
    s.rf.max_depth = geoml.max_depth;
    s.rf.min_samples_leaf = geoml.min_samples_leaf;
    s.rf.features_per_split = geoml.features_per_split;
    s.rf.bootstrap = geoml.bootstrap;
    s.rf.seed = sub_seed(seed, SeedStream::Forest);
    return s;
}

SimilarityOptions PipelineConfig::similarity_options() const {
    return {parse_aggregation(geoml.aggregation), parse_negative_scores(geoml.negative)};
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config not found: " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("malformed config " + path.string() + ": " + e.what());
    }
    return PipelineConfig::from_json(j);
}

void write_config_echo(const PipelineConfig& cfg, const std::filesystem::path& out) {
    write_json_file(suffixed(out, ".config.json"), cfg.to_json());
}

// ---------------------------------------------------------------------------

FeaturesReport run_features(const PipelineConfig& cfg, const FeaturesControl& control, std::ostream& log) {
    const auto& e = cfg.encoder;
    const RasterDataset src = open_raster(need(cfg.input.raster, "input.raster"));
    const auto& out = need(cfg.output.path, "output.path");
    const std::filesystem::path ckpt = e.checkpoint_dir.empty() ? suffixed(out, ".ckpt") : e.checkpoint_dir;
    const bool pca = e.band_strategy == "pca";

    ModelWeights weights = base_weights(e);
    FeaturesReport report;
    report.output = out;
    report.plan = plan_tiles(src.width, src.height, weights.config.sample_size, e.stride);
    report.geometry = output_grid_geometry(src.geotransform, src.width, src.height, weights.config.patch_size);
    report.feature_dim = weights.config.embed_dim;
    report.batch_count = int((report.plan.size() + std::size_t(e.batch_size) - 1) / std::size_t(e.batch_size));
    print_plan(log, report.plan, report.geometry, report.feature_dim);
    log << "batches: " << report.batch_count << " of up to " << e.batch_size << " tiles\n";
    if (control.dry_run) return report;

    if (!control.resume) remove_checkpoint(ckpt);
    std::filesystem::create_directories(ckpt);

    RasterDataset ds = src;
    if (pca) {
        const PixelSample sample = sample_pixels(src, cfg.analysis.sample_size, sub_seed(cfg.seed, SeedStream::PcaSample));
        const auto model = fit_pca(sample.values, 3);
        const auto pca_path = ckpt / "pca_input.tif";
        WriteOptions wo;
        wo.compression = Compression::None;
        transform_raster_pca(src, model, pca_path, wo);
        ds = open_raster(pca_path);
        log << "pca: reduced " << src.band_count << " bands to 3 from " << sample.values.rows() << " samples\n";
    }

    const BandStrategy strategy = pca ? BandStrategy::None : parse_band_strategy(e.band_strategy);
    AdaptedWeights adapted = adapt_input_layer(weights, ds.band_count, strategy, e.bands);
    if (e.quantize) adapted.weights = dequantize(quantize_weights(adapted.weights));
    const ReferenceEncoder encoder(std::move(adapted.weights));

    const BandStats all = compute_band_stats(ds, e.stats_samples, sub_seed(cfg.seed, SeedStream::Stats));
    const BandStats stats = subset_stats(all, adapted.raster_bands);

    InferenceOptions opt;
    opt.batch_size = e.batch_size;
    opt.pause_ms = e.pause_ms;
    opt.workers = cfg.workers;
    opt.checkpoint_dir = ckpt;
    opt.resume = control.resume;
    opt.after_batch = control.after_batch;
    opt.pause_state = control.pause_state;
    opt.progress = [&](int done, int total) {
        log << "batch " << done << "/" << total << "\n" << std::flush;
        if (control.progress) control.progress(done, total);
    };
    const InferenceResult run =
        run_inference(ds, report.plan, encoder, adapted.raster_bands, stats, {e.band_strategy, e.quantize}, opt);
    report.batches_run = run.batches_run;
    report.complete = run.complete;
    if (control.resume && run.batches_run < report.batch_count)
        log << "resumed: " << report.batch_count - run.batches_run << " batches reused from " << ckpt.string() << "\n";
    if (!run.complete) {
        log << "stopped after " << run.manifest.completed.size() << " of " << report.batch_count << " batches\n";
        return report;
    }

    FeatureAccumulator acc(report.geometry, report.feature_dim, weights.config.patch_size, src.crs_id);
    for (int b = 0; b < report.batch_count; ++b)
        for (const auto& grid : read_batch(batch_path(ckpt, b))) acc.accumulate(grid);
    write_image(out, acc.finalize(), feature_write_options(cfg.compression()));
    write_config_echo(cfg, out);
    if (!cfg.mosaic.keep_checkpoint) remove_checkpoint(ckpt);
    log << "wrote " << out.string() << "\n";
    return report;
}

void run_reduce(const PipelineConfig& cfg, std::ostream& log) {
    const auto& a = cfg.analysis;
    const auto& src = cfg.input.features.empty() ? cfg.input.raster : cfg.input.features;
    const RasterDataset fr = open_raster(need(src, "input.features"));
    const auto& out = need(cfg.output.path, "output.path");
    if (a.method == "pca") {
        const PixelSample s = sample_pixels(fr, a.sample_size, sub_seed(cfg.seed, SeedStream::PcaSample));
        const auto model = fit_pca(s.values, a.components);
        WriteOptions wo;
        wo.compression = cfg.compression();
        transform_raster_pca(fr, model, out, wo);
        write_json_file(suffixed(out, ".pca.json"), to_json(model));
        log << "pca: " << fr.band_count << " -> " << a.components << " bands from " << s.values.rows()
            << " samples\n";
    } else {
        const PixelSample s = sample_pixels(fr, a.sample_size, sub_seed(cfg.seed, SeedStream::Tsne));
        TsneOptions t;
        t.dims = a.tsne_dims;
        t.perplexity = a.perplexity;
        t.iterations = a.iterations;
        t.seed = sub_seed(cfg.seed, SeedStream::Tsne);
        const auto r = tsne_embed(s.values, t);
        json rows = json::array();
        for (Eigen::Index i = 0; i < r.embedding.rows(); ++i) {
            json row = json::array();
            for (Eigen::Index d = 0; d < r.embedding.cols(); ++d) row.push_back(r.embedding(i, d));
            rows.push_back(std::move(row));
        }
        write_json_file(out, {{"type", "tsne"},
                              {"cells", s.cells},
                              {"embedding", std::move(rows)},
                              {"kl_initial", r.kl_initial},
                              {"kl_final", r.kl_final}});
        log << "t-SNE: " << s.values.rows() << " samples, KL " << r.kl_initial << " -> " << r.kl_final << "\n";
    }
    write_config_echo(cfg, out);
}

void run_cluster(const PipelineConfig& cfg, std::ostream& log) {
    const auto& a = cfg.analysis;
    const RasterDataset fr = open_features(cfg);
    const auto& out = need(cfg.output.path, "output.path");
    const PixelSample s = sample_pixels(fr, a.sample_size, sub_seed(cfg.seed, SeedStream::KMeansSample));
    KMeansOptions opt;
    opt.k = a.k;
    opt.seed = sub_seed(cfg.seed, SeedStream::KMeansInit);
    opt.max_iter = a.max_iter;
    opt.tol = a.tol;
    const auto model = fit_kmeans(s.values, opt);
    predict_kmeans(fr, model, out, cfg.compression());
    write_json_file(suffixed(out, ".kmeans.json"), to_json(model));
    write_config_echo(cfg, out);
    log << "k-means: k=" << model.k << ", inertia " << model.inertia << " after " << model.iterations
        << " iterations\n";
}

std::filesystem::path mask_path(const std::filesystem::path& similarity_path) {
    auto p = similarity_path;
    p.replace_extension();
    return p.string() + ".mask.tif";
}

SimilarityOutputs compute_similarity(const RasterDataset& fr, const std::vector<GeoPoint>& points,
                                     const SimilarityOptions& opt, std::optional<double> threshold,
                                     const std::filesystem::path& out, Compression compression) {
    if (threshold && !(*threshold >= 0.0 && *threshold <= 1.0))
        throw ConfigError("threshold must be in [0, 1], got " + std::to_string(*threshold));
    SimilarityOutputs r;
    r.templ = extract_template(fr, points);
    r.similarity = out;
    similarity_map(fr, r.templ, out, opt, compression);
    if (threshold) {
        r.mask = mask_path(out);
        threshold_mask(open_raster(out), *threshold, *r.mask, compression);
    }
    return r;
}

SimilarityOutputs run_similarity(const PipelineConfig& cfg, std::ostream& log) {
    const RasterDataset fr = open_features(cfg);
    const PointCollection pts = read_points(need(cfg.input.points, "input.points"));
    require_same_crs(pts.crs_id, fr.crs_id);
    std::vector<GeoPoint> locs;
    for (const auto& p : pts.points) locs.push_back(p.location);
    const auto& out = need(cfg.output.path, "output.path");
    auto r = compute_similarity(fr, locs, cfg.similarity_options(), cfg.geoml.threshold, out, cfg.compression());
    write_config_echo(cfg, out);
    log << "similarity: template from " << locs.size() << " points -> " << out.string() << "\n";
    if (r.mask) log << "mask: " << r.mask->string() << "\n";
    return r;
}

LabeledDataset load_labeled(const RasterDataset& fr, const std::filesystem::path& points) {
    const PointCollection pts = read_points(points);
    require_same_crs(pts.crs_id, fr.crs_id);
    return build_dataset(fr, pts);
}

namespace {

LabeledDataset labeled_for(const PipelineConfig& cfg, const RasterDataset& fr, std::ostream& log) {
    LabeledDataset d = load_labeled(fr, need(cfg.input.points, "input.points"));
    for (const auto& w : d.warnings) log << "warning: " << w << "\n";
    return d;
}

}  // namespace

void run_fit(const PipelineConfig& cfg, std::ostream& log) {
    const RasterDataset fr = open_features(cfg);
    const LabeledDataset d = labeled_for(cfg, fr, log);
    if (d.class_count() < 2) throw InputError("fitting needs at least 2 distinct labels");
    const Classifier c = fit_classifier(d.x, d.y, d.classes, cfg.classifier_spec());
    const auto& out = need(cfg.output.path, "output.path");
    write_json_file(out, to_json(c));
    write_config_echo(cfg, out);
    log << cfg.geoml.algorithm << ": fitted on " << d.y.size() << " points, " << d.class_count() << " classes\n";
}

void run_predict(const PipelineConfig& cfg, std::ostream& log) {
    const RasterDataset fr = open_features(cfg);
    const Classifier c = classifier_from_json(read_json_file(need(cfg.input.model, "input.model")));
    const auto& out = need(cfg.output.path, "output.path");
    predict_raster(fr, c, out, cfg.compression());
    write_config_echo(cfg, out);
    log << "prediction: " << out.string() << "\n";
}

CvReport run_validate(const PipelineConfig& cfg, std::ostream& log) {
    const RasterDataset fr = open_features(cfg);
    const LabeledDataset d = labeled_for(cfg, fr, log);
    CvOptions opt{parse_scheme(cfg.geoml.scheme), cfg.geoml.folds, sub_seed(cfg.seed, SeedStream::CvShuffle)};
    const CvReport r = cross_validate(d, opt, cfg.classifier_spec());
    const auto& out = need(cfg.output.path, "output.path");
    write_json_file(out, r.to_json());
    write_config_echo(cfg, out);
    log << r.scheme << ": accuracy " << r.accuracy_mean << " +/- " << r.accuracy_std << ", macro-F1 "
        << r.macro_f1_mean << " +/- " << r.macro_f1_std << "\n";
    return r;
}

}  // namespace geofeat
