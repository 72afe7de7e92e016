#include "geofeat/service.hpp"

#include <condition_variable>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "geofeat/analysis_io.hpp"
#include "geofeat/error.hpp"
#include "geofeat/render.hpp"

namespace geofeat {
namespace {

using nlohmann::json;

struct HttpError {
    int status;
    std::string message;
};

void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

json geometry_json(const RasterDataset& ds) {
    const auto& g = ds.geotransform;
    return {{"width", ds.width},
            {"height", ds.height},
            {"bands", ds.band_count},
            {"sample_type", to_string(ds.sample_type)},
            {"crs", ds.crs_id},
            {"geotransform", {g.origin_x, g.pixel_width, g.row_rotation, g.origin_y, g.col_rotation, g.pixel_height}}};
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        json j = json::parse(req.body);
        if (!j.is_object()) throw HttpError{400, "request body must be a JSON object"};
        return j;
    } catch (const json::exception& e) {
        throw HttpError{400, std::string("malformed JSON body: ") + e.what()};
    }
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw HttpError{400, "bad integer list: " + s};
        }
    }
    return out;
}

struct Layer {
    std::filesystem::path path;
    double lo = 0.0;
    double hi = 1.0;
};

}  // namespace

struct Service::Impl {
    PipelineConfig cfg;
    std::filesystem::path ws;
    httplib::Server server;

    std::mutex state_mu;
    std::optional<RasterDataset> source;
    std::optional<RasterDataset> features;
    std::map<std::string, Layer> layers;  ///< similarity, mask, clusters, prediction
    std::optional<LabeledDataset> labels;
    std::optional<Classifier> model;
    std::optional<CvReport> report;
    json similarity_result;  ///< null until a similarity job has been submitted

    std::mutex mutate_mu;

    std::mutex job_mu;
    std::condition_variable job_cv;
    std::thread job;
    bool running = false;
    int job_id = 0;
    std::string job_name = "idle";
    std::string stage = "idle";
    int done = 0;
    int total = 0;
    bool paused = false;
    std::string error;

    std::string relative(const std::filesystem::path& p) const {
        return std::filesystem::relative(p, ws).generic_string();
    }

    RasterDataset need_features() {
        std::lock_guard lock(state_mu);
        if (!features) throw HttpError{409, "no feature raster loaded"};
        return *features;
    }

    /// Starts `fn` in the background, or throws 409 when a job is already running.
    int start_job(const std::string& name, int steps, std::function<void()> fn) {
        std::lock_guard lock(job_mu);
        if (running) throw HttpError{409, "a " + job_name + " job is already running"};
        if (job.joinable()) job.join();
        running = true;
        job_name = name;
        stage = name;
        done = 0;
        total = steps;
        paused = false;
        error.clear();
        const int id = ++job_id;
        job = std::thread([this, fn = std::move(fn)] {
            std::string err;
            try {
                fn();
            } catch (const std::exception& e) {
                err = e.what();
            }
            std::lock_guard lk(job_mu);
            running = false;
            paused = false;
            if (err.empty()) {
                stage = "done";
                done = total;
            } else {
                stage = "error";
                error = err;
            }
            job_cv.notify_all();
        });
        return id;
    }

    void set_progress(int d, int t) {
        std::lock_guard lock(job_mu);
        done = d;
        total = t;
    }

    // -- handlers -----------------------------------------------------------

    void meta(const httplib::Request&, httplib::Response& res) {
        std::lock_guard lock(state_mu);
        if (!source && !features) throw HttpError{409, "no raster loaded"};
        json layer_names = json::array();
        if (source) layer_names.push_back("source");
        if (features) layer_names.push_back("features");
        for (const auto& [name, l] : layers) layer_names.push_back(name);
        reply(res, 200,
              {{"source", source ? geometry_json(*source) : json(nullptr)},
               {"features", features ? geometry_json(*features) : json(nullptr)},
               {"layers", layer_names}});
    }

    void status(const httplib::Request&, httplib::Response& res) {
        std::lock_guard lock(job_mu);
        json j{{"stage", stage}, {"done", done}, {"total", total}, {"paused", paused}, {"job", job_id}};
        if (!error.empty()) j["error"] = error;
        reply(res, 200, j);
    }

    void render(const httplib::Request& req, httplib::Response& res) {
        const std::string name = req.get_param_value("layer");
        RasterDataset ds;
        std::optional<Layer> ramp;
        {
            std::lock_guard lock(state_mu);
            if (name == "source" && source) {
                ds = *source;
            } else if (name == "features" && features) {
                ds = *features;
            } else if (auto it = layers.find(name); it != layers.end()) {
                ramp = it->second;
            } else {
                throw HttpError{404, "unknown layer '" + name + "'"};
            }
        }
        if (ramp) ds = open_raster(ramp->path);

        Window w = full_window(ds);
        if (req.has_param("window")) {
            const auto v = parse_int_list(req.get_param_value("window"));
            if (v.size() != 4) throw HttpError{400, "window must be col,row,width,height"};
            w = {v[0], v[1], v[2], v[3]};
        }
        if (w.width < 1 || w.height < 1 || w.col_off < 0 || w.row_off < 0 || w.col_off + w.width > ds.width ||
            w.row_off + w.height > ds.height)
            throw HttpError{400, "window outside the layer extent"};
        if (w.pixel_count() > 4096LL * 4096LL) throw HttpError{400, "window too large"};

        RgbaImage img;
        if (ramp) {
            img = ramp_image(read_window(ds, w), ramp->lo, ramp->hi);
        } else {
            std::vector<int> bands = ds.band_count >= 3 ? std::vector<int>{1, 2, 3} : std::vector<int>{1};
            if (req.has_param("bands")) bands = parse_int_list(req.get_param_value("bands"));
            if (bands.size() != 1 && bands.size() != 3) throw HttpError{400, "bands must list 1 or 3 band numbers"};
            for (int& b : bands) {
                if (b < 1 || b > ds.band_count) throw HttpError{400, "band " + std::to_string(b) + " out of range"};
                --b;
            }
            img = stretch_composite(read_window(ds, w, bands));
        }
        res.status = 200;
        res.set_content(encode_png(img), "image/png");
    }

    void run_features_job(const httplib::Request&, httplib::Response& res) {
        RasterDataset src;
        {
            std::lock_guard lock(state_mu);
            if (!source) throw HttpError{409, "no source raster loaded"};
            if (features) throw HttpError{409, "feature raster already loaded"};
            src = *source;
        }
        PipelineConfig c = cfg;
        c.input.raster = src.path;
        c.output.path = ws / "features.tif";
        const int id = start_job("features", 0, [this, c] {
            FeaturesControl ctl;
            ctl.progress = [this](int d, int t) { set_progress(d, t); };
            ctl.pause_state = [this](bool p) {
                std::lock_guard lock(job_mu);
                paused = p;
            };
            std::ostringstream log;
            const FeaturesReport r = run_features(c, ctl, log);
            set_progress(r.batch_count, r.batch_count);
            RasterDataset fr = open_raster(c.output.path);
            std::lock_guard lock(state_mu);
            features = std::move(fr);
        });
        reply(res, 202, {{"job", id}, {"stage", "features"}});
    }

    void run_cluster_job(const httplib::Request& req, httplib::Response& res) {
        const json body = parse_body(req);
        const RasterDataset fr = need_features();
        PipelineConfig c = cfg;
        c.input.features = fr.path;
        c.output.path = ws / "clusters.tif";
        if (body.contains("k")) {
            if (!body["k"].is_number_integer()) throw HttpError{400, "k must be an integer"};
            c.analysis.k = body["k"];
        }
        const int id = start_job("cluster", 1, [this, c] {
            std::ostringstream log;
            run_cluster(c, log);
            std::lock_guard lock(state_mu);
            layers["clusters"] = {c.output.path, 0.0, double(std::max(1, c.analysis.k - 1))};
        });
        reply(res, 202, {{"job", id}, {"stage", "cluster"}});
    }

    void run_similarity_job(const httplib::Request& req, httplib::Response& res) {
        const json body = parse_body(req);
        const RasterDataset fr = need_features();
        if (!body.contains("points") || !body["points"].is_array() || body["points"].empty())
            throw HttpError{400, "points must be a non-empty array of {x, y}"};
        std::vector<GeoPoint> pts;
        for (const auto& p : body["points"]) {
            if (!p.is_object() || !p.contains("x") || !p.contains("y") || !p["x"].is_number() || !p["y"].is_number())
                throw HttpError{400, "each point needs numeric x and y"};
            pts.push_back({p["x"].get<double>(), p["y"].get<double>()});
        }
        SimilarityOptions opt = cfg.similarity_options();
        if (body.contains("aggregation")) opt.aggregation = parse_aggregation(body["aggregation"].get<std::string>());
        if (body.contains("negative")) opt.negative = parse_negative_scores(body["negative"].get<std::string>());
        std::optional<double> threshold = cfg.geoml.threshold;
        if (body.contains("threshold") && !body["threshold"].is_null()) {
            if (!body["threshold"].is_number()) throw HttpError{400, "threshold must be a number"};
            threshold = body["threshold"].get<double>();
            if (!(*threshold >= 0.0 && *threshold <= 1.0)) throw HttpError{400, "threshold must be in [0, 1]"};
        }
        // Validates extent and nodata before the job is queued.
        extract_template(fr, pts);

        const auto out = ws / "similarity.tif";
        const Compression comp = cfg.compression();
        const int id = start_job("similarity", 1, [this, fr, pts, opt, threshold, out, comp] {
            const SimilarityOutputs r = compute_similarity(fr, pts, opt, threshold, out, comp);
            const RasterDataset sim = open_raster(r.similarity);
            json scores = json::array();
            for (const auto& cell : r.templ.cells) {
                const float v = read_window(sim, {int(cell.col), int(cell.row), 1, 1}).values(0, 0);
                scores.push_back(std::isnan(v) ? json(nullptr) : json(v));
            }
            json result{{"status", "done"},
                        {"similarity", relative(r.similarity)},
                        {"overlay", "/render?layer=similarity"},
                        {"template_scores", scores},
                        {"mask", nullptr}};
            std::lock_guard lock(state_mu);
            layers["similarity"] = {r.similarity, 0.0, 1.0};
            if (r.mask) {
                layers["mask"] = {*r.mask, 0.0, 1.0};
                result["mask"] = relative(*r.mask);
                result["mask_overlay"] = "/render?layer=mask";
            } else {
                layers.erase("mask");
            }
            similarity_result = std::move(result);
        });
        {
            std::lock_guard lock(state_mu);
            similarity_result = {{"status", "running"}, {"job", id}};
        }
        reply(res, 202, {{"job", id}, {"stage", "similarity"}});
    }

    void similarity_result_get(const httplib::Request&, httplib::Response& res) {
        {
            std::lock_guard lock(job_mu);
            if (job_name == "similarity" && stage == "error") {
                reply(res, 500, {{"status", "error"}, {"error", error}});
                return;
            }
        }
        std::lock_guard lock(state_mu);
        if (similarity_result.is_null()) throw HttpError{409, "no similarity run has been submitted"};
        reply(res, similarity_result["status"] == "done" ? 200 : 202, similarity_result);
    }

    void post_labels(const httplib::Request& req, httplib::Response& res) {
        const json body = parse_body(req);
        const RasterDataset fr = need_features();
        if (!body.contains("points") || !body["points"].is_array())
            throw HttpError{400, "points must be an array of {x, y, label, fold?, split?}"};
        PointCollection pc;
        pc.crs_id = fr.crs_id;
        for (const auto& p : body["points"]) {
            if (!p.is_object() || !p.contains("x") || !p.contains("y") || !p["x"].is_number() || !p["y"].is_number())
                throw HttpError{400, "each point needs numeric x and y"};
            PointFeature f;
            f.location = {p["x"].get<double>(), p["y"].get<double>()};
            for (const char* key : {"label", "fold", "split"})
                if (p.contains(key)) f.properties[key] = p[key];
            pc.points.push_back(std::move(f));
        }
        std::lock_guard mut(mutate_mu);
        LabeledDataset d = build_dataset(fr, pc);
        json out{{"count", d.y.size()}, {"classes", d.classes}, {"warnings", d.warnings}};
        std::lock_guard lock(state_mu);
        labels = std::move(d);
        reply(res, 200, out);
    }

    void post_fit(const httplib::Request& req, httplib::Response& res) {
        const json body = parse_body(req);
        std::lock_guard mut(mutate_mu);
        LabeledDataset d;
        {
            std::lock_guard lock(state_mu);
            if (!labels) throw HttpError{409, "no labelled points registered"};
            d = *labels;
        }
        json merged = cfg.to_json();
        if (body.contains("algorithm")) merged["geoml"]["algorithm"] = body["algorithm"];
        if (body.contains("scheme")) merged["geoml"]["scheme"] = body["scheme"];
        if (body.contains("folds")) merged["geoml"]["folds"] = body["folds"];
        if (body.contains("params")) {
            if (!body["params"].is_object()) throw HttpError{400, "params must be an object"};
            for (const auto& [k, v] : body["params"].items()) {
                if (k == "algorithm" || k == "scheme" || k == "folds" || !merged["geoml"].contains(k))
                    throw ConfigError("unknown fit parameter '" + k + "'");
                merged["geoml"][k] = v;
            }
        }
        const PipelineConfig c = PipelineConfig::from_json(merged);
        const CvOptions opt{parse_scheme(c.geoml.scheme), c.geoml.folds, sub_seed(c.seed, SeedStream::CvShuffle)};
        CvReport r = cross_validate(d, opt, c.classifier_spec());
        Classifier m = fit_classifier(d.x, d.y, d.classes, c.classifier_spec());
        const json out = r.to_json();
        std::lock_guard lock(state_mu);
        report = std::move(r);
        model = std::move(m);
        reply(res, 200, out);
    }

    void post_predict(const httplib::Request&, httplib::Response& res) {
        const RasterDataset fr = need_features();
        Classifier m;
        {
            std::lock_guard lock(state_mu);
            if (!model) throw HttpError{409, "no fitted model; call /fit first"};
            m = *model;
        }
        const auto out = ws / "prediction.tif";
        const Compression comp = cfg.compression();
        const int id = start_job("predict", 1, [this, fr, m, out, comp] {
            predict_raster(fr, m, out, comp);
            std::lock_guard lock(state_mu);
            layers["prediction"] = {out, 0.0, double(std::max<std::size_t>(1, m.classes.size() - 1))};
        });
        reply(res, 202, {{"job", id}, {"stage", "predict"}, {"prediction", relative(out)}});
    }

    using Handler = void (Impl::*)(const httplib::Request&, httplib::Response&);

    httplib::Server::Handler wrap(Handler h) {
        return [this, h](const httplib::Request& req, httplib::Response& res) {
            try {
                (this->*h)(req, res);
            } catch (const HttpError& e) {
                reply(res, e.status, {{"error", e.message}});
            } catch (const ConfigError& e) {
                reply(res, 400, {{"error", e.what()}});
            } catch (const InputError& e) {
                reply(res, 422, {{"error", e.what()}});
            } catch (const json::exception& e) {
                reply(res, 400, {{"error", e.what()}});
            } catch (const std::exception& e) {
                reply(res, 500, {{"error", e.what()}});
            }
        };
    }

    void routes() {
        server.Get("/meta", wrap(&Impl::meta));
        server.Get("/status", wrap(&Impl::status));
        server.Get("/render", wrap(&Impl::render));
        server.Get("/similarity/result", wrap(&Impl::similarity_result_get));
        server.Post("/features", wrap(&Impl::run_features_job));
        server.Post("/cluster", wrap(&Impl::run_cluster_job));
        server.Post("/similarity", wrap(&Impl::run_similarity_job));
        server.Post("/labels", wrap(&Impl::post_labels));
        server.Post("/fit", wrap(&Impl::post_fit));
        server.Post("/predict", wrap(&Impl::post_predict));
    }
};

Service::Service(PipelineConfig cfg, std::filesystem::path workspace) : impl_(std::make_unique<Impl>()) {
    impl_->cfg = std::move(cfg);
    std::filesystem::create_directories(workspace);
    impl_->ws = std::filesystem::canonical(workspace);
    if (!impl_->cfg.input.raster.empty()) impl_->source = open_raster(impl_->cfg.input.raster);
    if (!impl_->cfg.input.features.empty()) impl_->features = open_raster(impl_->cfg.input.features);
    impl_->routes();
}

Service::~Service() {
    stop();
    wait_for_job();
    std::lock_guard lock(impl_->job_mu);
    if (impl_->job.joinable()) impl_->job.join();
}

int Service::bind(const std::string& host, int port) {
    if (port == 0) {
        const int p = impl_->server.bind_to_any_port(host);
        if (p < 0) throw Error("cannot bind " + host);
        return p;
    }
    if (!impl_->server.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void Service::listen() { impl_->server.listen_after_bind(); }

void Service::stop() {
    if (impl_->server.is_running()) impl_->server.stop();
}

void Service::wait_for_job() {
    std::unique_lock lock(impl_->job_mu);
    impl_->job_cv.wait(lock, [this] { return !impl_->running; });
}

}  // namespace geofeat
