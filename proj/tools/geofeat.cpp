// geofeat: command-line front end for the feature pipeline.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "geofeat/error.hpp"
#include "geofeat/pipeline.hpp"
#include "geofeat/service.hpp"

namespace {

struct Flags {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<int> pause_ms;
    bool resume = false;
    bool dry_run = false;
    bool quantize = false;
    int abort_after = 0;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string workspace;
};

geofeat::PipelineConfig effective_config(const Flags& f) {
    geofeat::PipelineConfig cfg = f.config.empty() ? geofeat::PipelineConfig{} : geofeat::load_config(f.config);
    if (!f.out.empty()) cfg.output.path = f.out;
    if (f.seed) cfg.seed = *f.seed;
    if (f.workers) {
        if (*f.workers < 1) throw geofeat::ConfigError("--workers must be >= 1");
        cfg.workers = *f.workers;
    }
    if (f.pause_ms) {
        if (*f.pause_ms < 0) throw geofeat::ConfigError("--pause-ms must be >= 0");
        cfg.encoder.pause_ms = *f.pause_ms;
    }
    if (f.quantize) cfg.encoder.quantize = true;
    return cfg;
}

int features(const Flags& f) {
    const auto cfg = effective_config(f);
    geofeat::FeaturesControl ctl;
    ctl.resume = f.resume;
    ctl.dry_run = f.dry_run;
    if (f.abort_after > 0) {
        // Test hook: die without any cleanup, as a kill would.
        ctl.after_batch = [n = 0, limit = f.abort_after](int) mutable {
            if (++n >= limit) {
                std::cout.flush();
                std::_Exit(137);
            }
            return true;
        };
    }
    geofeat::run_features(cfg, ctl, std::cout);
    return 0;
}

int serve(const Flags& f) {
    const auto cfg = effective_config(f);
    std::filesystem::path ws = f.workspace;
    if (ws.empty()) ws = cfg.output.path.empty() ? std::filesystem::path("geofeat-workspace") : cfg.output.path;
    geofeat::Service service(cfg, ws);
    const int port = service.bind(f.host, f.port);
    std::cout << "listening on http://" << f.host << ":" << port << "\n" << std::flush;
    service.listen();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"geofeat: deep feature extraction and analysis for georeferenced rasters"};
    app.require_subcommand(1);
    Flags f;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "JSON pipeline config")->check(CLI::ExistingFile);
        sub->add_option("--out", f.out, "output path (overrides output.path)");
        sub->add_option("--seed", f.seed, "master seed");
        sub->add_option("--workers", f.workers, "worker threads");
    };

    auto* feat = app.add_subcommand("features", "encode a raster into a feature raster");
    common(feat);
    feat->add_option("--pause-ms", f.pause_ms, "sleep between batches");
    feat->add_flag("--resume", f.resume, "continue from a matching checkpoint");
    feat->add_flag("--dry-run", f.dry_run, "print the tile plan and output geometry only");
    feat->add_flag("--quantize", f.quantize, "run with uint8-quantized weights");
    feat->add_option("--abort-after-batches", f.abort_after)->group("");

    auto* reduce = app.add_subcommand("reduce", "PCA or t-SNE on a feature raster");
    auto* cluster = app.add_subcommand("cluster", "k-means clustering of a feature raster");
    auto* sim = app.add_subcommand("similarity", "cosine similarity map from template points");
    auto* fit = app.add_subcommand("fit", "fit a kNN or random forest classifier");
    auto* predict = app.add_subcommand("predict", "apply a fitted classifier to a feature raster");
    auto* validate = app.add_subcommand("validate", "cross-validate a classifier");
    for (auto* s : {reduce, cluster, sim, fit, predict, validate}) common(s);

    auto* srv = app.add_subcommand("serve", "HTTP service for the web UI");
    common(srv);
    srv->add_option("--host", f.host, "bind address");
    srv->add_option("--port", f.port, "port (0 picks a free one)");
    srv->add_option("--workspace", f.workspace, "directory for service outputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*feat) return features(f);
        if (*srv) return serve(f);
        const auto cfg = effective_config(f);
        if (*reduce) geofeat::run_reduce(cfg, std::cout);
        else if (*cluster) geofeat::run_cluster(cfg, std::cout);
        else if (*sim) geofeat::run_similarity(cfg, std::cout);
        else if (*fit) geofeat::run_fit(cfg, std::cout);
        else if (*predict) geofeat::run_predict(cfg, std::cout);
        else if (*validate) geofeat::run_validate(cfg, std::cout);
        return 0;
    } catch (const geofeat::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const geofeat::InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 3;
    } catch (const geofeat::ResumableError& e) {
        std::cerr << "runtime error (rerun with --resume): " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
