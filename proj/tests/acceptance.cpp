// Acceptance checks: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria. argv[1] is the geofeat CLI executable.

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "geofeat/analysis.hpp"
#include "geofeat/analysis_io.hpp"
#include "geofeat/encoder.hpp"
#include "geofeat/geoml.hpp"
#include "geofeat/inference.hpp"
#include "geofeat/mosaic.hpp"
#include "geofeat/tiler.hpp"

using namespace geofeat;
using fixtures::TempDir;
using nlohmann::json;

namespace {

std::string g_cli;

/// Collects the first failure message; a criterion passes when none was recorded.
struct Check {
    std::ostringstream why;
    bool ok = true;

    bool expect(bool cond, const std::string& msg) {
        if (!cond && ok) {
            ok = false;
            why << msg;
        }
        return cond;
    }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<std::vector<double>> nested(const Eigen::MatrixXd& x) {
    std::vector<std::vector<double>> out(std::size_t(x.rows()), std::vector<double>(std::size_t(x.cols())));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) out[std::size_t(i)][std::size_t(j)] = x(i, j);
    return out;
}

Eigen::MatrixXd gaussian_mix(int n, int d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd mix(d, d), x(n, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) mix(i, j) = g(rng);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) x(i, j) = g(rng) * (j + 1);
    return x * mix;
}

fixtures::CommandResult run_cli(const std::string& args) { return fixtures::run_command(g_cli + " " + args); }

void write_json(const std::filesystem::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

// ---------------------------------------------------------------------------

void tiling(Check& c) {
    c.expect(plan_tiles(100, 100, 64, 32).size() == 9, "(100,100,64,32) does not give 9 tiles");
    for (int s : {16, 32, 64})
        for (int stride = s / 4; stride <= s; ++stride) {
            // Per-axis offsets and coverage; a plan is their row-major product.
            std::vector<std::vector<int>> axis(201);
            for (int dim = s; dim <= 200; ++dim) {
                axis[std::size_t(dim)] = oracles::enumerate_offsets(dim, s, stride);
                std::vector<char> cov(std::size_t(dim), 0);
                for (int o : axis[std::size_t(dim)])
                    for (int i = o; i < o + s; ++i) cov[std::size_t(i)] = 1;
                for (char v : cov)
                    if (!c.expect(v == 1, "axis " + std::to_string(dim) + " not covered")) return;
            }
            for (int w = s; w <= 200; ++w)
                for (int h = s; h <= 200; ++h) {
                    const auto plan = plan_tiles(w, h, s, stride);
                    const auto& xs = axis[std::size_t(w)];
                    const auto& ys = axis[std::size_t(h)];
                    bool same = plan.size() == xs.size() * ys.size();
                    for (std::size_t i = 0; same && i < plan.size(); ++i)
                        same = plan.offsets[i].col_off == xs[i % xs.size()] && plan.offsets[i].row_off == ys[i / xs.size()];
                    if (!c.expect(same, "plan mismatch at " + std::to_string(w) + "x" + std::to_string(h) + " S=" +
                                            std::to_string(s) + " stride=" + std::to_string(stride)))
                        return;
                }
        }
}

struct EncodedRaster {
    TempDir dir;
    RasterDataset ds;
    std::unique_ptr<ReferenceEncoder> enc;
    BandStats stats;
    std::vector<int> bands{0, 1, 2};

    explicit EncodedRaster(int size) {
        fixtures::write_fixture(dir / "in.tif", size, size, 3, fixtures::smooth_pattern);
        ds = open_raster(dir / "in.tif");
        enc = std::make_unique<ReferenceEncoder>(build_reference_vit({}));
        stats = compute_band_stats(ds, 100000, 0);
    }

    FeatureAccumulator mosaic(const TilePlan& plan) {
        InferenceOptions opt;
        opt.checkpoint_dir = dir / "ckpt";
        const auto res = run_inference(ds, plan, *enc, bands, stats, {}, opt);
        FeatureAccumulator acc(output_grid_geometry(ds.geotransform, ds.width, ds.height, 8), 16, 8);
        for (int b = 0; b < res.manifest.batch_count(); ++b)
            for (const auto& g : read_batch(batch_path(dir / "ckpt", b))) acc.accumulate(g);
        return acc;
    }
};

void mosaic_equivalence(Check& c) {
    {
        EncodedRaster r(128);
        const auto plan = plan_tiles(128, 128, 64, 64);
        const auto img = r.mosaic(plan).finalize();
        for (std::size_t t = 0; t < plan.size(); ++t) {
            const auto g = encode_plan_tile(r.ds, plan, t, *r.enc, r.bands, r.stats);
            for (int gy = 0; gy < 8; ++gy)
                for (int gx = 0; gx < 8; ++gx) {
                    const int cell = (g.offset.row_off / 8 + gy) * 16 + g.offset.col_off / 8 + gx;
                    for (int d = 0; d < 16; ++d)
                        if (!c.expect(img.values(cell, d) == g.features(gy * 8 + gx, d), "stride=S output not bit-identical"))
                            return;
                }
        }
    }
    EncodedRaster r(100);
    const auto plan = plan_tiles(100, 100, 64, 32);
    const auto acc = r.mosaic(plan);
    const auto img = acc.finalize();
    const auto counts = oracles::enumerate_cell_counts(100, 100, 64, 32, 8);
    const int ow = acc.geometry().width;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(img.values.rows(), 16);
    for (std::size_t t = 0; t < plan.size(); ++t) {
        const auto g = encode_plan_tile(r.ds, plan, t, *r.enc, r.bands, r.stats);
        for (int gy = 0; gy < 8; ++gy)
            for (int gx = 0; gx < 8; ++gx) {
                const int cx = (g.offset.col_off + gx * 8 + 4) / 8, cy = (g.offset.row_off + gy * 8 + 4) / 8;
                sums.row(cy * ow + cx) += g.features.row(gy * 8 + gx).cast<double>();
            }
    }
    double worst = 0.0;
    for (int cell = 0; cell < img.values.rows(); ++cell) {
        const int n = counts[std::size_t(cell / ow)][std::size_t(cell % ow)];
        if (!c.expect(acc.count(cell % ow, cell / ow) == n, "cell contribution count differs from enumeration")) return;
        if (n == 0) continue;
        for (int d = 0; d < 16; ++d) worst = std::max(worst, std::abs(img.values(cell, d) - sums(cell, d) / n));
    }
    c.expect(worst <= 1e-6, "overlap mean error " + std::to_string(worst));
}

void resume_determinism(Check& c) {
    TempDir dir;
    fixtures::write_fixture(dir / "in.tif", 256, 256, 3, fixtures::smooth_pattern);
    write_json(dir / "c.json", {{"input", {{"raster", (dir / "in.tif").string()}}}});
    const std::string cfg = " --config " + (dir / "c.json").string();
    auto r = run_cli("features" + cfg + " --out " + (dir / "full.tif").string());
    if (!c.expect(r.status == 0, "uninterrupted run failed: " + r.output)) return;
    const auto reference = fixtures::file_bytes(dir / "full.tif");
    // 7x7 tiles in batches of 4.
    const int batches = 13;
    for (int k = 1; k < batches; ++k) {
        const auto t0 = Clock::now();
        const auto out = (dir / ("part" + std::to_string(k) + ".tif")).string();
        r = run_cli("features" + cfg + " --out " + out + " --abort-after-batches " + std::to_string(k));
        if (!c.expect(r.status == 137, "run did not die after batch " + std::to_string(k))) return;
        r = run_cli("features" + cfg + " --out " + out + " --resume");
        if (!c.expect(r.status == 0, "resume failed: " + r.output)) return;
        if (!c.expect(fixtures::file_bytes(out) == reference, "resumed output differs after kill at batch " + std::to_string(k)))
            return;
        if (!c.expect(seconds_since(t0) < 60.0, "case exceeded 60 s")) return;
    }
}

void band_adaptation(Check& c) {
    const auto w = build_reference_vit({});
    const auto id = adapt_input_layer(w, 3, BandStrategy::ReplicateMod3);
    for (std::size_t t = 0; t < w.tensors.size(); ++t)
        c.expect(id.weights.tensors[t].data == w.tensors[t].data, "replicate-mod3 to 3 bands changed " + w.tensors[t].name);

    PixelBlock t3{{0, 0, 64, 64}, Eigen::MatrixXf(64 * 64, 3)};
    for (int b = 0; b < 3; ++b)
        for (int i = 0; i < 64 * 64; ++i) t3.values(i, b) = float(std::sin(0.01 * i * (b + 1)) + 0.1 * b);
    PixelBlock t6{t3.window, Eigen::MatrixXf(64 * 64, 6)};
    t6.values << t3.values, t3.values;
    const auto e3 = ReferenceEncoder(w).patch_embedding(t3, false);
    const auto e6 = ReferenceEncoder(adapt_input_layer(w, 6, BandStrategy::ReplicateMod3).weights).patch_embedding(t6, false);
    const double rel = ((e6 - 2.0f * e3).cwiseAbs().array() / (2.0f * e3).cwiseAbs().array().max(1e-30f)).maxCoeff();
    c.expect(rel <= 1e-5, "6-band embedding not 2x: worst relative " + std::to_string(rel));

    const auto& src = w.get("patch_embed.weight").data;
    const auto avg = adapt_input_layer(w, 1, BandStrategy::AverageMod);
    const auto& dst = avg.weights.get("patch_embed.weight").data;
    for (int d = 0; d < 16; ++d)
        for (int e = 0; e < 64; ++e) {
            const float hand = float((double(src[std::size_t(d * 192 + e)]) + src[std::size_t(d * 192 + 64 + e)] +
                                      src[std::size_t(d * 192 + 128 + e)]) / 3.0);
            if (!c.expect(dst[std::size_t(d * 64 + e)] == hand, "average-mod differs from hand channel mean")) return;
        }
}

void quantization(Check& c) {
    const auto q = quantize_tensor({"t", {3}, {-1.0f, 0.0f, 1.0f}});
    c.expect(q.scale == 2.0 / 255.0, "worked example scale");
    c.expect(q.zero_point == 128, "worked example zero point");
    for (const auto& t : build_reference_vit({}).tensors) {
        const auto qt = quantize_tensor(t);
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            const double back = (int(qt.data[i]) - qt.zero_point) * qt.scale;
            if (!c.expect(std::abs(back - double(t.data[i])) <= qt.scale / 2 * (1 + 1e-12), "error above scale/2 in " + t.name))
                return;
        }
    }
}

void pca(Check& c) {
    for (int d = 1; d <= 8; ++d)
        for (int n : {d + 2, 37, 100}) {
            const auto x = gaussian_mix(n, d, std::uint64_t(97 * d + n));
            const auto m = fit_pca(x, std::min(d, n - 1));
            const auto oracle = oracles::jacobi_eigen(oracles::covariance(nested(x)));
            for (int k = 0; k < m.output_dim(); ++k) {
                c.expect(std::abs(m.explained_variance(k) - oracle.values[std::size_t(k)]) <= 1e-6 * std::max(1.0, oracle.values[0]),
                         "eigenvalue mismatch");
                Eigen::VectorXd v(d);
                for (int i = 0; i < d; ++i) v(i) = oracle.vectors[std::size_t(k)][std::size_t(i)];
                const double sign = m.components.row(k).dot(v) < 0 ? -1.0 : 1.0;
                c.expect((m.components.row(k).transpose() - sign * v).cwiseAbs().maxCoeff() <= 1e-6,
                         "component mismatch d=" + std::to_string(d) + " n=" + std::to_string(n));
                if (k > 0) c.expect(m.explained_variance(k) <= m.explained_variance(k - 1), "explained variance increases");
            }
            if (n > d) {
                const auto y = m.transform(x);
                for (int i = 0; i < n; ++i)
                    for (int j = i + 1; j < n; ++j)
                        c.expect(std::abs((x.row(i) - x.row(j)).norm() - (y.row(i) - y.row(j)).norm()) <= 1e-6,
                                 "k=d transform changes distances");
            }
        }
}

void kmeans(Check& c) {
    Eigen::MatrixXd x(4, 2);
    x << 0, 0, 0, 1, 10, 0, 10, 1;
    const double best = oracles::best_two_partition_inertia(nested(x));
    c.expect(best == 1.0, "enumeration oracle disagrees with fixture");
    const auto m = fit_kmeans(x, {2, 0, 300, 1e-9});
    c.expect(m.inertia == best, "k-means inertia " + std::to_string(m.inertia));
    for (std::uint64_t s = 0; s < 100; ++s) {
        std::mt19937_64 rng(s);
        const int n = 20 + int(rng() % 80), d = 1 + int(rng() % 5), k = 2 + int(rng() % 6);
        const auto km = fit_kmeans(gaussian_mix(n, d, s + 1000), {k, s, 300, 1e-9});
        for (std::size_t i = 1; i < km.inertia_history.size(); ++i)
            if (!c.expect(km.inertia_history[i] <= km.inertia_history[i - 1], "inertia increased on fixture " + std::to_string(s)))
                return;
    }
}

void tsne(Check& c) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd x(40, 4);
    std::vector<int> label(40);
    for (int i = 0; i < 40; ++i) {
        label[std::size_t(i)] = i < 20;
        for (int j = 0; j < 4; ++j) x(i, j) = g(rng) + (i < 20 ? 100.0 : 0.0);
    }
    TsneOptions opt;
    opt.perplexity = 10;
    const auto r = tsne_embed(x, opt);
    double w0 = 0, w1 = 0, b = 0;
    bool separable = false;
    for (int epoch = 0; epoch < 100000 && !separable; ++epoch) {
        separable = true;
        for (int i = 0; i < 40; ++i) {
            const double s = label[std::size_t(i)] ? 1.0 : -1.0;
            if (s * (w0 * r.embedding(i, 0) + w1 * r.embedding(i, 1) + b) <= 0) {
                w0 += s * r.embedding(i, 0);
                w1 += s * r.embedding(i, 1);
                b += s;
                separable = false;
            }
        }
    }
    c.expect(separable, "blobs not linearly separable in the embedding");
    c.expect(r.kl_final < r.kl_initial, "KL did not decrease");
    c.expect(tsne_embed(x, opt).embedding == r.embedding, "embedding not deterministic");
}

void similarity(Check& c) {
    TempDir dir;
    // Left half along e0, right half along e1, last column along -e0.
    auto fv = [](double scale) {
        return [scale](int b, int col, int row) {
            if (col == 9) return b == 0 ? -scale * (1 + row) : 0.0;
            if (col < 5) return b == 0 ? scale * (1 + col) : 0.0;
            return b == 1 ? scale * (0.5 + row) : 0.0;
        };
    };
    fixtures::write_fixture(dir / "a.tif", 10, 6, 3, fv(1.0), feature_write_options());
    fixtures::write_fixture(dir / "b.tif", 10, 6, 3, fv(123.25), feature_write_options());
    const auto a = open_raster(dir / "a.tif"), b = open_raster(dir / "b.tif");
    const auto p = fixtures::pixel_center(a.geotransform, 2, 3);
    similarity_map(a, extract_template(a, {p}), dir / "sa.tif");
    similarity_map(b, extract_template(b, {p}), dir / "sb.tif");
    const auto sa = read_image(open_raster(dir / "sa.tif")).values, sb = read_image(open_raster(dir / "sb.tif")).values;
    for (int row = 0; row < 6; ++row)
        for (int col = 0; col < 10; ++col) {
            const float v = sa(row * 10 + col, 0);
            if (col < 5) c.expect(std::abs(v - 1.0f) <= 1e-6, "self-template cell not 1");
            else if (col < 9) c.expect(v == 0.0f, "orthogonal cell not 0");
        }
    c.expect((sa - sb).cwiseAbs().maxCoeff() <= 1e-6, "positive rescaling changed the map");
}

void supervised(Check& c) {
    Eigen::MatrixXd x(25, 3);
    std::vector<int> y(25);
    for (int i = 0; i < 25; ++i) {
        x.row(i) << std::sin(i), std::cos(2.3 * i), 0.01 * i;
        y[std::size_t(i)] = i % 4;
    }
    const auto knn = fit_knn(x, y, 4, {1, DistanceMetric::Euclidean});
    for (int i = 0; i < 25; ++i) c.expect(knn.predict(x.row(i)) == y[std::size_t(i)], "kNN k=1 training error");

    std::vector<std::size_t> sizes;
    for (const auto& f : random_kfold_partition(11, 5, 2024)) sizes.push_back(f.size());
    c.expect(sizes == std::vector<std::size_t>{3, 2, 2, 2, 2}, "5-fold sizes of 11 points");

    TempDir dir;
    fixtures::write_fixture(dir / "line.tif", 12, 1, 1, [](int, int col, int) { return double(col); }, feature_write_options());
    const auto fr = open_raster(dir / "line.tif");
    const std::vector<std::tuple<int, const char*, const char*>> ps{{0, "a", "train"}, {1, "a", "test"},  {2, "a", "train"},
                                                                    {7, "a", "test"},  {10, "b", "train"}, {9, "b", "test"},
                                                                    {11, "b", "train"}, {4, "b", "test"}, {5, "b", "test"}};
    std::vector<GeoPoint> pts;
    std::vector<json> props;
    for (const auto& [col, label, split] : ps) {
        pts.push_back(fixtures::pixel_center(fr.geotransform, col, 0));
        props.push_back({{"label", label}, {"split", split}});
    }
    fixtures::write_points_file(dir / "p.geojson", pts, props);
    ClassifierSpec spec;
    spec.knn.k = 1;
    const auto rep = cross_validate(build_dataset(fr, read_points(dir / "p.geojson")), {CvScheme::ColumnSplit, 5, 0}, spec);
    // 1-NN on train {a:0,2  b:10,11}: a@1->a, a@7->b, b@9->b, b@4->a, b@5->a.
    Eigen::MatrixXi hand(2, 2);
    hand << 1, 1, 2, 1;
    c.expect(rep.folds.size() == 1 && rep.folds[0].confusion == hand, "column-split confusion differs from hand count");

    Eigen::MatrixXd fx(50, 4);
    std::vector<int> fy(50);
    for (int i = 0; i < 50; ++i) {
        for (int j = 0; j < 4; ++j) fx(i, j) = std::sin(0.7 * i + j);
        fy[std::size_t(i)] = fx(i, 1) > 0.2 ? 1 : 0;
    }
    RfParams p;
    p.n_trees = 30;
    p.seed = 17;
    const auto a = to_json(Classifier{fit_random_forest(fx, fy, 2, p), {"0", "1"}}).dump();
    const auto b = to_json(Classifier{fit_random_forest(fx, fy, 2, p), {"0", "1"}}).dump();
    c.expect(a == b, "random forest not deterministic under a fixed seed");
}

void end_to_end(Check& c) {
    const auto t0 = Clock::now();
    TempDir dir;
    fixtures::TwoTextures tex;
    fixtures::write_fixture(dir / "in.tif", tex.width, tex.height, tex.bands,
                            [&](int b, int col, int row) { return tex.value(b, col, row); });
    write_json(dir / "c.json", {{"seed", 1},
                                {"input", {{"raster", (dir / "in.tif").string()}, {"features", (dir / "feat.tif").string()}}},
                                {"encoder", {{"band_strategy", "pca"}}},
                                {"analysis", {{"k", 2}}}});
    const std::string cfg = " --config " + (dir / "c.json").string();
    auto r = run_cli("features" + cfg + " --out " + (dir / "feat.tif").string());
    if (!c.expect(r.status == 0, "features failed: " + r.output)) return;
    r = run_cli("cluster" + cfg + " --out " + (dir / "k.tif").string());
    if (!c.expect(r.status == 0, "cluster failed: " + r.output)) return;
    const auto ds = open_raster(dir / "k.tif");
    const auto lab = read_image(ds).values;
    // Planted label of a cell is the side of its centre pixel.
    int agree[2] = {0, 0};
    for (int row = 0; row < ds.height; ++row)
        for (int col = 0; col < ds.width; ++col) {
            const int truth = tex.right_side(col * 8 + 4) ? 1 : 0;
            const int got = int(lab(row * ds.width + col, 0));
            agree[0] += got == truth;
            agree[1] += got == 1 - truth;
        }
    const double score = double(std::max(agree[0], agree[1])) / double(ds.width * ds.height);
    std::cout << "  end-to-end agreement " << std::to_string(score) << " in " << seconds_since(t0) << " s\n";
    c.expect(score >= 0.95, "agreement " + std::to_string(score) + " below 0.95");
    c.expect(seconds_since(t0) < 180.0, "runtime above 3 min");
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: acceptance <path-to-geofeat>\n";
        return 2;
    }
    g_cli = argv[1];
    const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria{
        {"tiling coverage and offset rule", tiling},
        {"mosaic equivalence", mosaic_equivalence},
        {"resume determinism", resume_determinism},
        {"band adaptation", band_adaptation},
        {"quantization", quantization},
        {"PCA against eigen oracle", pca},
        {"k-means optimum and monotone inertia", kmeans},
        {"t-SNE separation, KL and determinism", tsne},
        {"similarity map properties", similarity},
        {"supervised classification and validation", supervised},
        {"end-to-end texture clustering", end_to_end},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Check c;
        const auto t0 = Clock::now();
        try {
            criteria[i].second(c);
        } catch (const std::exception& e) {
            c.expect(false, std::string("exception: ") + e.what());
        }
        std::cout << "criterion " << i + 1 << " " << (c.ok ? "PASS" : "FAIL") << " " << criteria[i].first << " ("
                  << std::fixed << std::setprecision(1) << seconds_since(t0) << " s)";
        std::cout.unsetf(std::ios::fixed);
        if (!c.ok) std::cout << ": " << c.why.str();
        std::cout << "\n" << std::flush;
        failed += !c.ok;
    }
    return failed;
}
