/**
 * @file service.hpp
 * @brief Loopback HTTP facade over the pipeline stages.
 *
 * GET  /meta, /status, /render, /similarity/result
 * POST /features, /cluster, /similarity, /labels, /fit, /predict
 *
 * Long stages run as background jobs, one at a time; a second job request
 * while one runs answers 409. Output files live in the workspace directory
 * and are reported relative to it.
 */
#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "geofeat/pipeline.hpp"

namespace geofeat {

class Service {
public:
    /// `cfg.input.raster` and `cfg.input.features` name the layers loaded at start; either may be empty.
    Service(PipelineConfig cfg, std::filesystem::path workspace);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds the socket; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves until stop() is called.
    void listen();
    void stop();
    /// Blocks until any running job has finished.
    void wait_for_job();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace geofeat
