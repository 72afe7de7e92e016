#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "geofeat/analysis_io.hpp"
#include "geofeat/error.hpp"
#include "geofeat/pipeline.hpp"
#include "geofeat/render.hpp"

using namespace geofeat;
using fixtures::TempDir;
using nlohmann::json;

namespace {

std::string cli() { return GEOFEAT_CLI; }

std::filesystem::path write_config(const TempDir& dir, const std::string& name, const json& j) {
    const auto p = dir / name;
    std::ofstream(p) << j.dump(2);
    return p;
}

fixtures::CommandResult run_cli(const std::string& args) { return fixtures::run_command(cli() + " " + args); }

json small_encoder() { return {{"sample_size", 32}, {"stride", 16}, {"batch_size", 2}, {"stats_samples", 5000}}; }

}  // namespace

TEST(Config, DefaultsAndRoundTrip) {
    const auto c = PipelineConfig::from_json(json::object());
    EXPECT_EQ(c.encoder.patch_size, 8);
    EXPECT_EQ(c.encoder.sample_size, 64);
    EXPECT_EQ(c.analysis.components, 3);
    EXPECT_EQ(c.geoml.folds, 5);
    EXPECT_EQ(c.compression(), Compression::Deflate);
    const auto back = PipelineConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(Config, StrictKeysAndTypes) {
    EXPECT_THROW(PipelineConfig::from_json({{"encoder", {{"sampel_size", 64}}}}), ConfigError);
    EXPECT_THROW(PipelineConfig::from_json({{"bogus", 1}}), ConfigError);
    EXPECT_THROW(PipelineConfig::from_json({{"encoder", {{"stride", "wide"}}}}), ConfigError);
    EXPECT_THROW(PipelineConfig::from_json({{"analysis", {{"method", "umap"}}}}), ConfigError);
    EXPECT_THROW(PipelineConfig::from_json({{"output", {{"compression", "lzw"}}}}), ConfigError);
    const auto c = PipelineConfig::from_json({{"geoml", {{"threshold", 0.7}}}});
    ASSERT_TRUE(c.geoml.threshold);
    EXPECT_EQ(*c.geoml.threshold, 0.7);
}

TEST(Config, SubSeedOffsets) {
    EXPECT_EQ(sub_seed(100, SeedStream::Stats), 100u);
    EXPECT_EQ(sub_seed(100, SeedStream::PcaSample), 101u);
    EXPECT_EQ(sub_seed(100, SeedStream::Tsne), 102u);
    EXPECT_EQ(sub_seed(100, SeedStream::KMeansSample), 103u);
    EXPECT_EQ(sub_seed(100, SeedStream::KMeansInit), 104u);
    EXPECT_EQ(sub_seed(100, SeedStream::Forest), 105u);
    EXPECT_EQ(sub_seed(100, SeedStream::CvShuffle), 106u);
}

TEST(Render, PercentileAndRamp) {
    EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 50), 3.0);
    EXPECT_DOUBLE_EQ(percentile({0, 10}, 25), 2.5);
    EXPECT_DOUBLE_EQ(percentile({std::nanf(""), 4.0f}, 90), 4.0);
    EXPECT_TRUE(std::isnan(percentile({std::nanf("")}, 50)));
    EXPECT_EQ(ramp_color(0.0), (std::array<std::uint8_t, 3>{68, 1, 84}));
    EXPECT_EQ(ramp_color(1.0), (std::array<std::uint8_t, 3>{253, 231, 37}));
    EXPECT_EQ(ramp_color(0.5), (std::array<std::uint8_t, 3>{33, 145, 140}));
}

TEST(Render, CompositeStretchFlatBandAndNaN) {
    PixelBlock blk{{0, 0, 10, 1}, Eigen::MatrixXf(10, 1)};
    for (int i = 0; i < 10; ++i) blk.values(i, 0) = float(i);
    blk.values(9, 0) = std::nanf("");
    auto img = stretch_composite(blk);
    EXPECT_EQ(img.pixels[0], 0);
    EXPECT_EQ(img.pixels[8 * 4], 255);
    EXPECT_EQ(img.pixels[8 * 4 + 3], 255);
    EXPECT_EQ(img.pixels[9 * 4 + 3], 0);
    blk.values.setConstant(5.0f);
    img = stretch_composite(blk);
    EXPECT_EQ(img.pixels[0], 128);
    const auto png = encode_png(img);
    ASSERT_GT(png.size(), 8u);
    EXPECT_EQ(png.substr(1, 3), "PNG");
}

TEST(Cli, UsageAndConfigErrorsExitTwo) {
    TempDir dir;
    EXPECT_EQ(run_cli("").status, 2);
    EXPECT_EQ(run_cli("features --no-such-flag").status, 2);
    const auto cfg = write_config(dir, "bad.json", {{"encoder", {{"unknown", 1}}}});
    const auto r = run_cli("features --config " + cfg.string());
    EXPECT_EQ(r.status, 2);
    EXPECT_NE(r.output.find("encoder.unknown"), std::string::npos);
    EXPECT_EQ(run_cli("features --workers 0 --out x.tif").status, 2);
}

TEST(Cli, MissingInputExitsThree) {
    TempDir dir;
    const auto cfg = write_config(dir, "c.json", {{"input", {{"raster", (dir / "none.tif").string()}}}});
    EXPECT_EQ(run_cli("features --config " + cfg.string() + " --out " + (dir / "f.tif").string()).status, 3);
}

TEST(Cli, DryRunPrintsPlanAndWritesNothing) {
    TempDir dir;
    fixtures::write_fixture(dir / "in.tif", 100, 100, 3, fixtures::smooth_pattern);
    const auto cfg = write_config(dir, "c.json", {{"input", {{"raster", (dir / "in.tif").string()}}}});
    const auto r = run_cli("features --dry-run --config " + cfg.string() + " --out " + (dir / "f.tif").string());
    ASSERT_EQ(r.status, 0) << r.output;
    EXPECT_NE(r.output.find("9 tiles"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("0,32,36"), std::string::npos);
    EXPECT_NE(r.output.find("13x13"), std::string::npos);
    EXPECT_FALSE(std::filesystem::exists(dir / "f.tif"));
}

TEST(Cli, FeaturesThenAnalysisStages) {
    TempDir dir;
    fixtures::write_fixture(dir / "in.tif", 96, 80, 4, fixtures::smooth_pattern);
    const auto feat = dir / "feat.tif";
    const auto cfg = write_config(
        dir, "c.json",
        {{"seed", 5},
         {"input", {{"raster", (dir / "in.tif").string()}, {"features", feat.string()}}},
         {"encoder", [] { auto e = small_encoder(); e["band_strategy"] = "replicate-mod3"; return e; }()},
         {"analysis", {{"k", 3}, {"perplexity", 5}, {"iterations", 400}, {"sample_size", 60}}}});
    const std::string c = " --config " + cfg.string();

    auto r = run_cli("features" + c + " --out " + feat.string());
    ASSERT_EQ(r.status, 0) << r.output;
    const auto fds = open_raster(feat);
    EXPECT_EQ(fds.width, 12);
    EXPECT_EQ(fds.height, 10);
    EXPECT_EQ(fds.band_count, 16);
    EXPECT_EQ(fds.geotransform.pixel_width, 80.0);
    EXPECT_EQ(fds.crs_id, fixtures::kCrs);
    EXPECT_TRUE(std::filesystem::exists(dir / "feat.tif.config.json"));
    EXPECT_FALSE(std::filesystem::exists(dir / "feat.tif.ckpt"));
    const auto echo = read_json_file(dir / "feat.tif.config.json");
    EXPECT_EQ(echo["seed"], 5);
    EXPECT_EQ(echo["encoder"]["band_strategy"], "replicate-mod3");

    r = run_cli("reduce" + c + " --out " + (dir / "pca.tif").string());
    ASSERT_EQ(r.status, 0) << r.output;
    EXPECT_EQ(open_raster(dir / "pca.tif").band_count, 3);
    EXPECT_TRUE(std::filesystem::exists(dir / "pca.tif.pca.json"));

    const auto tcfg = write_config(dir, "t.json", [&] {
        auto j = read_json_file(cfg);
        j["analysis"]["method"] = "tsne";
        return j;
    }());
    r = run_cli("reduce --config " + tcfg.string() + " --out " + (dir / "tsne.json").string());
    ASSERT_EQ(r.status, 0) << r.output;
    const auto ts = read_json_file(dir / "tsne.json");
    EXPECT_EQ(ts["embedding"].size(), 60u);
    EXPECT_LT(ts["kl_final"].get<double>(), ts["kl_initial"].get<double>());

    r = run_cli("cluster" + c + " --out " + (dir / "k.tif").string());
    ASSERT_EQ(r.status, 0) << r.output;
    const auto kimg = read_image(open_raster(dir / "k.tif"));
    EXPECT_GE(kimg.values.minCoeff(), 0.0f);
    EXPECT_LE(kimg.values.maxCoeff(), 2.0f);
    const auto again = dir / "k2.tif";
    ASSERT_EQ(run_cli("cluster" + c + " --out " + again.string()).status, 0);
    EXPECT_EQ(fixtures::file_bytes(dir / "k.tif"), fixtures::file_bytes(again));
}

TEST(Cli, AbortThenResumeIsByteIdentical) {
    TempDir dir;
    fixtures::write_fixture(dir / "in.tif", 96, 96, 3, fixtures::smooth_pattern);
    const auto cfg = write_config(dir, "c.json", {{"input", {{"raster", (dir / "in.tif").string()}}}, {"encoder", small_encoder()}});
    const std::string c = " --config " + cfg.string();
    ASSERT_EQ(run_cli("features" + c + " --out " + (dir / "full.tif").string()).status, 0);
    const auto part = dir / "part.tif";
    const auto killed = run_cli("features" + c + " --out " + part.string() + " --abort-after-batches 3");
    EXPECT_EQ(killed.status, 137);
    EXPECT_FALSE(std::filesystem::exists(part));
    EXPECT_TRUE(std::filesystem::exists(dir / "part.tif.ckpt" / "manifest.json"));
    const auto resumed = run_cli("features" + c + " --out " + part.string() + " --resume");
    ASSERT_EQ(resumed.status, 0) << resumed.output;
    EXPECT_EQ(fixtures::file_bytes(dir / "full.tif"), fixtures::file_bytes(part));
}

TEST(Cli, ResumeWithChangedStrideRefuses) {
    TempDir dir;
    fixtures::write_fixture(dir / "in.tif", 96, 96, 3, fixtures::smooth_pattern);
    const auto cfg = write_config(dir, "c.json", {{"input", {{"raster", (dir / "in.tif").string()}}}, {"encoder", small_encoder()}});
    const auto out = (dir / "f.tif").string();
    EXPECT_EQ(run_cli("features --config " + cfg.string() + " --out " + out + " --abort-after-batches 1").status, 137);
    auto j = read_json_file(cfg);
    j["encoder"]["stride"] = 32;
    const auto cfg2 = write_config(dir, "c2.json", j);
    const auto r = run_cli("features --config " + cfg2.string() + " --out " + out + " --resume");
    EXPECT_EQ(r.status, 2);
    EXPECT_NE(r.output.find("mismatch"), std::string::npos) << r.output;
}

TEST(Cli, QuantizedRunIsCloseToFloatRun) {
    TempDir dir;
    fixtures::write_fixture(dir / "in.tif", 64, 64, 3, fixtures::smooth_pattern);
    const auto cfg = write_config(dir, "c.json", {{"input", {{"raster", (dir / "in.tif").string()}}}, {"encoder", small_encoder()}});
    const std::string c = " --config " + cfg.string();
    ASSERT_EQ(run_cli("features" + c + " --out " + (dir / "f.tif").string()).status, 0);
    ASSERT_EQ(run_cli("features" + c + " --quantize --out " + (dir / "q.tif").string()).status, 0);
    const auto f = read_image(open_raster(dir / "f.tif")).values;
    const auto q = read_image(open_raster(dir / "q.tif")).values;
    EXPECT_NE(f, q);
    EXPECT_LT((f - q).cwiseAbs().maxCoeff(), 0.5f);
}

TEST(Cli, SimilarityFitPredictValidate) {
    TempDir dir;
    fixtures::TwoTextures tex;
    fixtures::write_fixture(dir / "feat.tif", 16, 16, 4,
                            [&](int b, int c, int r) { return tex.value(b, c * 16, r * 16) + 0.01 * ((c * 7 + r * 3 + b) % 5); },
                            feature_write_options());
    const auto gt = fixtures::default_gt();
    std::vector<GeoPoint> pts;
    std::vector<json> props;
    for (int i = 0; i < 12; ++i) {
        const int col = i % 2 ? 12 + i % 3 : 1 + i % 4;
        pts.push_back(fixtures::pixel_center(gt, col, i));
        props.push_back({{"label", i % 2 ? "right" : "left"}, {"fold", i % 3}, {"split", i < 8 ? "train" : "test"}});
    }
    fixtures::write_points_file(dir / "pts.geojson", pts, props);
    fixtures::write_points_file(dir / "tmpl.geojson", {pts[1]}, {json::object()});
    const auto cfg = write_config(
        dir, "c.json",
        {{"input", {{"features", (dir / "feat.tif").string()}, {"points", (dir / "tmpl.geojson").string()}, {"model", (dir / "m.json").string()}}},
         {"geoml", {{"threshold", 0.9}, {"k", 1}, {"scheme", "column-fold"}}}});
    const std::string c = " --config " + cfg.string();

    auto r = run_cli("similarity" + c + " --out " + (dir / "s.tif").string());
    ASSERT_EQ(r.status, 0) << r.output;
    const auto s = read_image(open_raster(dir / "s.tif")).values;
    EXPECT_NEAR(s(1 * 16 + 13, 0), 1.0f, 1e-6);
    const auto mask = read_image(open_raster(dir / "s.mask.tif")).values;
    EXPECT_EQ(mask(1 * 16 + 13, 0), 1.0f);

    auto j = read_json_file(cfg);
    j["input"]["points"] = (dir / "pts.geojson").string();
    const auto lcfg = write_config(dir, "l.json", j);
    const std::string l = " --config " + lcfg.string();
    r = run_cli("fit" + l + " --out " + (dir / "m.json").string());
    ASSERT_EQ(r.status, 0) << r.output;
    r = run_cli("predict" + l + " --out " + (dir / "p.tif").string());
    ASSERT_EQ(r.status, 0) << r.output;
    const auto p = read_image(open_raster(dir / "p.tif")).values;
    EXPECT_EQ(p(0, 0), 0.0f);
    EXPECT_EQ(p(15, 0), 1.0f);
    r = run_cli("validate" + l + " --out " + (dir / "cv.json").string());
    ASSERT_EQ(r.status, 0) << r.output;
    const auto cv = read_json_file(dir / "cv.json");
    EXPECT_EQ(cv["folds"].size(), 3u);
    EXPECT_EQ(cv["accuracy"]["mean"], 1.0);

    fixtures::write_points_file(dir / "wrong.geojson", {pts[1]}, {json::object()}, "EPSG:4326");
    j["input"]["points"] = (dir / "wrong.geojson").string();
    const auto wcfg = write_config(dir, "w.json", j);
    EXPECT_EQ(run_cli("similarity --config " + wcfg.string() + " --out " + (dir / "w.tif").string()).status, 3);
}
